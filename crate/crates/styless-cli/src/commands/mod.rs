pub mod ablate;
pub mod attack;
pub mod diagnose;
pub mod eval;
pub mod train;

use crate::errors::CliError;
use std::path::Path;
use styless_core::nn::{load_checkpoint, Model, TrainingMeta};

/// Load a checkpoint, naming it by file stem (falling back to the arch).
pub fn load_model(path: &Path) -> Result<(String, Model, TrainingMeta), CliError> {
    let (model, meta) = load_checkpoint(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(String::from)
        .unwrap_or_else(|| model.arch().to_string());
    Ok((name, model, meta))
}

/// All loaded models must agree on input shape and class count.
pub fn check_model_compat(models: &[&Model]) -> Result<(), CliError> {
    let Some(first) = models.first() else {
        return Ok(());
    };
    for m in models {
        if m.input_shape() != first.input_shape() || m.num_classes() != first.num_classes() {
            return Err(CliError::Data(
                "checkpoints disagree on input shape or class count".into(),
            ));
        }
    }
    Ok(())
}
