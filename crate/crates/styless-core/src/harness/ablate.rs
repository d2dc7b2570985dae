//! Ablation drivers: insertion depth, stylized-model count, beta vs gamma,
//! clean-loss inflation, and budget sweeps.

use super::eval::{evaluate_transfer, EvalError, TransferReport};
use crate::attack::{run_attack, AttackConfig, AttackError};
use crate::nn::{Dataset, Model};
use crate::stylize::{StyleSynthesisParams, StylizedModel};
use crate::stylize::{DEFAULT_BETA_RANGE, DEFAULT_GAMMA_RANGE};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("no valid split depths to ablate")]
    NoDepths,
}

/// Shared experiment inputs for one ablation sweep.
pub struct AblationContext<'a> {
    pub surrogate: &'a Model,
    pub targets: &'a [(&'a str, &'a Model)],
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
}

impl AblationContext<'_> {
    fn run_and_eval(
        &self,
        surrogate: &Model,
        config: &AttackConfig,
    ) -> Result<TransferReport, AblationError> {
        let run = run_attack(&[surrogate], self.dataset, self.indices, config)?;
        Ok(evaluate_transfer(self.dataset, &run, self.targets, false)?)
    }
}

/// Success rates with the injection point moved along the network.
/// `depths = None` sweeps every valid split index.
pub fn ablation_split_depth(
    ctx: &AblationContext,
    base: &AttackConfig,
    depths: Option<&[usize]>,
) -> Result<Vec<(usize, TransferReport)>, AblationError> {
    let all = ctx.surrogate.valid_split_indices();
    let chosen: Vec<usize> = match depths {
        Some(d) => d.to_vec(),
        None => all,
    };
    if chosen.is_empty() {
        return Err(AblationError::NoDepths);
    }
    let mut out = Vec::with_capacity(chosen.len());
    for depth in chosen {
        let model = ctx.surrogate.with_split_index(depth)?;
        out.push((depth, ctx.run_and_eval(&model, base)?));
    }
    Ok(out)
}

/// Success rates as the per-iteration stylized-model count N varies.
/// N = 0 degenerates to the exact baseline run.
pub fn ablation_stylized_count(
    ctx: &AblationContext,
    base: &AttackConfig,
    counts: &[usize],
) -> Result<Vec<(usize, TransferReport)>, AblationError> {
    let mut out = Vec::with_capacity(counts.len());
    for &n in counts {
        let mut config = base.clone();
        config.styless = true;
        config.stylized_count = n;
        out.push((n, ctx.run_and_eval(ctx.surrogate, &config)?));
    }
    Ok(out)
}

/// Mean-only (beta) versus variance-only (gamma) scaling, both at lambda = 0
/// so the style-source statistics dominate.
pub fn ablation_beta_gamma(
    ctx: &AblationContext,
    base: &AttackConfig,
) -> Result<(TransferReport, TransferReport), AblationError> {
    let mut beta_only = base.clone();
    beta_only.styless = true;
    beta_only.synthesis = StyleSynthesisParams::with_ranges(
        0,
        [0.0, 0.0],
        DEFAULT_BETA_RANGE,
        [1.0, 1.0],
    );
    let mut gamma_only = base.clone();
    gamma_only.styless = true;
    gamma_only.synthesis = StyleSynthesisParams::with_ranges(
        0,
        [0.0, 0.0],
        [1.0, 1.0],
        DEFAULT_GAMMA_RANGE,
    );
    Ok((
        ctx.run_and_eval(ctx.surrogate, &beta_only)?,
        ctx.run_and_eval(ctx.surrogate, &gamma_only)?,
    ))
}

/// One point of the clean-loss ablation scatter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanLossPoint {
    /// Multiplier applied to the default beta/gamma upper bounds.
    pub strength: f64,
    /// Mean clean loss of the stylized models the attack actually used.
    pub mean_stylized_clean_loss: f64,
    /// Mean attack success rate across targets.
    pub success_rate: f64,
}

/// Sweep style strength with the clean-loss guard disabled, recording how
/// clean-loss inflation of the stylized surrogates tracks attack success.
pub fn ablation_clean_loss(
    ctx: &AblationContext,
    base: &AttackConfig,
    strengths: &[f64],
) -> Result<Vec<CleanLossPoint>, AblationError> {
    let mut out = Vec::with_capacity(strengths.len());
    for &strength in strengths {
        let mut config = base.clone();
        config.styless = true;
        config.clean_guard = None;
        config.synthesis = StyleSynthesisParams::with_ranges(
            0,
            config.synthesis.lambda_range,
            [0.0, DEFAULT_BETA_RANGE[1] * strength],
            [0.0, DEFAULT_GAMMA_RANGE[1] * strength],
        );
        let run = run_attack(&[ctx.surrogate], ctx.dataset, ctx.indices, &config)?;
        let report = evaluate_transfer(ctx.dataset, &run, ctx.targets, false)?;

        // Clean loss of a subsample of the styles each image actually used.
        let mut total = 0.0;
        let mut count = 0usize;
        for outcome in &run.outcomes {
            let benign = ctx.dataset.image_f64(outcome.index);
            let content = crate::stylize::extract_style(ctx.surrogate, &benign)?;
            for record in outcome.style_records.iter().take(3) {
                let sm =
                    StylizedModel::new(ctx.surrogate, content.clone(), record.stats.clone())?;
                total += sm.loss(&benign, outcome.label)?;
                count += 1;
            }
        }
        out.push(CleanLossPoint {
            strength,
            mean_stylized_clean_loss: if count > 0 { total / count as f64 } else { 0.0 },
            success_rate: report.mean_success_rate(),
        });
    }
    Ok(out)
}

/// Success rates across perturbation budgets (alpha tracks epsilon / 2).
pub fn ablation_epsilon(
    ctx: &AblationContext,
    base: &AttackConfig,
    epsilons: &[f64],
) -> Result<Vec<(f64, TransferReport)>, AblationError> {
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut config = base.clone();
        config.epsilon = eps;
        config.step_size = eps / 2.0;
        out.push((eps, ctx.run_and_eval(ctx.surrogate, &config)?));
    }
    Ok(out)
}
