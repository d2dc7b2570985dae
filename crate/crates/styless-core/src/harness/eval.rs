//! Transfer-rate evaluation of finished attack runs.

use crate::attack::AttackRun;
use crate::nn::{Dataset, Model};
use crate::stylize::LossGapSeries;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no adversarial examples to evaluate")]
    EmptyRun,
    #[error("no eligible images: target '{target}' classifies none of the clean inputs correctly")]
    EmptyEligibleSet { target: String },
    #[error("target '{0}' was a surrogate for these examples")]
    TargetWasSurrogate(String),
    #[error("adversarial index {0} missing from the benign dataset")]
    BadIndex(usize),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// Per-image evaluation audit record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageEval {
    pub index: usize,
    pub label: usize,
    pub clean_pred: usize,
    pub adv_pred: usize,
    /// Counted in the rate only when the clean image was classified
    /// correctly by this target.
    pub eligible: bool,
    pub success: bool,
}

/// One target's success summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: String,
    pub n_images: usize,
    pub n_eligible: usize,
    pub n_success: usize,
    pub success_rate: f64,
    pub per_image: Vec<ImageEval>,
}

impl TargetResult {
    /// Per-image success indicators over the eligible set, aligned by index
    /// order; used for paired comparisons between attacks.
    pub fn eligible_successes(&self) -> Vec<(usize, bool)> {
        self.per_image
            .iter()
            .filter(|e| e.eligible)
            .map(|e| (e.index, e.success))
            .collect()
    }
}

/// Success rates of one attack run against a set of targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub surrogates: Vec<String>,
    pub attack: String,
    pub config_hash: String,
    pub sample_count: usize,
    pub targets: Vec<TargetResult>,
    /// Mean per-iteration loss-gap trace over images, when recorded.
    pub loss_gap: Option<LossGapSeries>,
}

impl TransferReport {
    pub fn target(&self, name: &str) -> Option<&TargetResult> {
        self.targets.iter().find(|t| t.target == name)
    }

    /// Mean success rate across targets.
    pub fn mean_success_rate(&self) -> f64 {
        if self.targets.is_empty() {
            return 0.0;
        }
        self.targets.iter().map(|t| t.success_rate).sum::<f64>() / self.targets.len() as f64
    }
}

/// Evaluate adversarial examples against targets. Success is untargeted
/// misclassification of the true label, counted only over images the target
/// classifies correctly when clean. `allow_whitebox` permits evaluating a
/// model that served as a surrogate (the white-box diagonal); otherwise that
/// is an error.
pub fn evaluate_transfer(
    benign: &Dataset,
    run: &AttackRun,
    targets: &[(&str, &Model)],
    allow_whitebox: bool,
) -> Result<TransferReport, EvalError> {
    if run.outcomes.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    for &(name, _) in targets {
        if !allow_whitebox && run.surrogates.iter().any(|s| s == name) {
            return Err(EvalError::TargetWasSurrogate(name.to_string()));
        }
    }
    for outcome in &run.outcomes {
        if outcome.index >= benign.len() {
            return Err(EvalError::BadIndex(outcome.index));
        }
    }

    let mut results = Vec::with_capacity(targets.len());
    for &(name, model) in targets {
        let mut per_image = Vec::with_capacity(run.outcomes.len());
        let mut n_eligible = 0usize;
        let mut n_success = 0usize;
        for outcome in &run.outcomes {
            let clean = benign.image_f64(outcome.index);
            let adv: Vec<f64> = outcome.adversarial.iter().map(|&v| v as f64).collect();
            let preds = model.predict_batch(&[&clean, &adv])?;
            let (clean_pred, adv_pred) = (preds[0], preds[1]);
            let eligible = clean_pred == outcome.label;
            let success = eligible && adv_pred != outcome.label;
            if eligible {
                n_eligible += 1;
            }
            if success {
                n_success += 1;
            }
            per_image.push(ImageEval {
                index: outcome.index,
                label: outcome.label,
                clean_pred,
                adv_pred,
                eligible,
                success,
            });
        }
        if n_eligible == 0 {
            return Err(EvalError::EmptyEligibleSet {
                target: name.to_string(),
            });
        }
        results.push(TargetResult {
            target: name.to_string(),
            n_images: run.outcomes.len(),
            n_eligible,
            n_success,
            success_rate: n_success as f64 / n_eligible as f64,
            per_image,
        });
    }

    Ok(TransferReport {
        surrogates: run.surrogates.clone(),
        attack: run.config.label(),
        config_hash: super::report::config_hash(&run.config),
        sample_count: run.outcomes.len(),
        targets: results,
        loss_gap: aggregate_loss_gap(run),
    })
}

/// Mean vanilla/stylized losses per iteration over all images that recorded
/// them.
pub fn aggregate_loss_gap(run: &AttackRun) -> Option<LossGapSeries> {
    if !run.config.record_loss_gap {
        return None;
    }
    let steps = run.config.steps;
    let mut vanilla = vec![0.0; steps];
    let mut stylized = vec![0.0; steps];
    let mut counts = vec![0usize; steps];
    for outcome in &run.outcomes {
        for diag in &outcome.iterations {
            if let (Some(v), Some(s)) = (diag.vanilla_loss, diag.mean_stylized_loss) {
                let t = diag.iteration - 1;
                vanilla[t] += v;
                stylized[t] += s;
                counts[t] += 1;
            }
        }
    }
    let mut series = LossGapSeries::default();
    for t in 0..steps {
        if counts[t] > 0 {
            let n = counts[t] as f64;
            series.push(t + 1, vanilla[t] / n, stylized[t] / n);
        }
    }
    if series.is_empty() {
        None
    } else {
        Some(series)
    }
}

/// Final-iteration loss gap per image, for paired gap comparisons.
pub fn final_gaps_per_image(run: &AttackRun) -> Vec<(usize, f64)> {
    run.outcomes
        .iter()
        .filter_map(|o| {
            o.iterations.last().and_then(|d| {
                match (d.vanilla_loss, d.mean_stylized_loss) {
                    (Some(v), Some(s)) => Some((o.index, v - s)),
                    _ => None,
                }
            })
        })
        .collect()
}
