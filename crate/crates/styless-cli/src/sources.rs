//! Dataset references: an SLDS file path or an inline generator spec of the
//! form `gen:count=2000,seed=100[,noise=0.02]`. Generator specs make every
//! run replayable from its manifest without shipping data files.

use crate::errors::CliError;
use std::path::Path;
use styless_core::harness::{generate_dataset, DatasetConfig};
use styless_core::nn::{load_dataset, Dataset};

pub fn load_dataset_spec(spec: &str) -> Result<(Dataset, String), CliError> {
    if let Some(args) = spec.strip_prefix("gen:") {
        let mut config = DatasetConfig {
            count: 0,
            seed: 0,
            noise_std: 0.02,
        };
        let mut saw_count = false;
        for part in args.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("bad generator spec entry '{part}'")))?;
            match key {
                "count" => {
                    config.count = value
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad count '{value}'")))?;
                    saw_count = true;
                }
                "seed" => {
                    config.seed = value
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad seed '{value}'")))?;
                }
                "noise" => {
                    config.noise_std = value
                        .parse()
                        .map_err(|_| CliError::Usage(format!("bad noise '{value}'")))?;
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown generator key '{other}' (use count, seed, noise)"
                    )))
                }
            }
        }
        if !saw_count || config.count == 0 {
            return Err(CliError::Usage(
                "generator spec needs count=<positive>".into(),
            ));
        }
        let id = config.dataset_id();
        Ok((generate_dataset(&config), id))
    } else {
        let path = Path::new(spec);
        if !path.exists() {
            return Err(CliError::Data(format!("dataset file '{spec}' not found")));
        }
        Ok((load_dataset(path)?, spec.to_string()))
    }
}
