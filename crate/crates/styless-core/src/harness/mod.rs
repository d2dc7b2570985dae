//! Experiment harness: dataset generation, model-farm training,
//! transfer-matrix evaluation, ablation drivers, and report emission.

pub mod ablate;
pub mod eval;
pub mod generate;
pub mod report;
pub mod stats;
pub mod svg;

pub use ablate::{
    ablation_beta_gamma, ablation_clean_loss, ablation_epsilon, ablation_split_depth,
    ablation_stylized_count, AblationContext, AblationError, CleanLossPoint,
};
pub use eval::{
    aggregate_loss_gap, evaluate_transfer, final_gaps_per_image, EvalError, ImageEval,
    TargetResult, TransferReport,
};
pub use generate::{generate_dataset, DatasetConfig, GENERATOR_VERSION};
pub use report::{config_hash, reports_to_csv, write_csv, write_json};
pub use stats::{paired_sign_test, paired_sign_test_values, sign_test_p, PairedComparison};

use crate::attack::AttackConfig;
use crate::nn::{ArchName, Dataset, Model, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Which experiment axis an ablation run sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    None,
    SplitDepth,
    StylizedCount,
    BetaGamma,
    CleanLoss,
    Epsilon,
}

/// A full experiment description, file-backed for replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub surrogates: Vec<PathBuf>,
    pub targets: Vec<PathBuf>,
    pub attacks: Vec<AttackConfig>,
    pub axis: AblationAxis,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub sample_count: usize,
}

/// Stable learning rate per architecture: the wide-kernel front layers
/// diverge at rates the compact ones train best with.
pub fn default_lr(arch: ArchName) -> f64 {
    match arch {
        ArchName::ConvnetA => 0.03,
        ArchName::ConvnetB => 0.05,
        ArchName::ConvnetC => 0.02,
        ArchName::ConvnetD => 0.01,
    }
}

/// Train one model of each architecture on the same data with per-arch
/// seeds derived from `base_seed` and per-arch learning rates
/// (`train.lr` scales them). Surrogate/target pairs drawn from the result
/// share training data but differ in architecture and initialization; use
/// `disjoint` to split the data instead.
pub fn train_model_farm(
    dataset: &Dataset,
    base_seed: u64,
    train: &TrainConfig,
    disjoint: bool,
) -> Result<Vec<(ArchName, Model)>, TrainError> {
    let reference = TrainConfig::default().lr;
    let mut farm = Vec::with_capacity(ArchName::ALL.len());
    for (i, arch) in ArchName::ALL.into_iter().enumerate() {
        let seed = base_seed.wrapping_add(1000 * (i as u64 + 1));
        let mut model = Model::build(arch, dataset.num_classes as usize, (3, 32, 32), seed)?;
        let mut cfg = train.clone();
        cfg.seed = seed;
        cfg.lr = default_lr(arch) * (train.lr / reference);
        let data = if disjoint {
            let half = dataset.len() / 2;
            let range = if i % 2 == 0 { 0..half } else { half..dataset.len() };
            Dataset {
                images: dataset.images[range.clone()].to_vec(),
                labels: dataset.labels[range].to_vec(),
                num_classes: dataset.num_classes,
            }
        } else {
            dataset.clone()
        };
        crate::nn::train(&mut model, &data, &cfg)?;
        farm.push((arch, model));
    }
    Ok(farm)
}

/// Indices of up to `limit` images that every listed model classifies
/// correctly when clean, in dataset order.
pub fn select_clean_correct(
    models: &[&Model],
    dataset: &Dataset,
    limit: usize,
) -> Result<Vec<usize>, crate::tensor::TensorError> {
    let mut out = Vec::with_capacity(limit);
    for idx in 0..dataset.len() {
        if out.len() == limit {
            break;
        }
        let img = dataset.image_f64(idx);
        let label = dataset.label(idx);
        let mut all_correct = true;
        for model in models {
            if model.predict(&img)? != label {
                all_correct = false;
                break;
            }
        }
        if all_correct {
            out.push(idx);
        }
    }
    Ok(out)
}
