use crate::config_file::{require, resolve, ConfigFile};
use crate::errors::CliError;
use crate::manifest::Manifest;
use crate::sources::load_dataset_spec;
use clap::Args;
use std::path::PathBuf;
use styless_core::nn::{save_checkpoint, ArchName, Model, TrainConfig, TrainingMeta};

#[derive(Args)]
pub struct TrainArgs {
    /// Architecture: convnet_a | convnet_b | convnet_c | convnet_d.
    #[arg(long)]
    arch: Option<String>,
    /// Dataset: SLDS file path or gen:count=N,seed=S[,noise=X].
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint output path (.slck).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file mirroring these flags; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let arch_name = require(args.arch, file.str("arch"), "arch")?;
    let arch = ArchName::parse(&arch_name)
        .ok_or_else(|| CliError::Usage(format!("unknown architecture '{arch_name}'")))?;
    let dataset_spec = require(args.dataset, file.str("dataset"), "dataset")?;
    let out = require(args.out, file.str("out").map(PathBuf::from), "out")?;
    let cfg = TrainConfig {
        epochs: resolve(args.epochs, file.usize("epochs"), 6),
        lr: resolve(args.lr, file.f64("lr"), 0.02),
        momentum: resolve(args.momentum, file.f64("momentum"), 0.9),
        batch_size: resolve(args.batch_size, file.usize("batch_size"), 32),
        seed: resolve(args.seed, file.u64("seed"), 0),
    };
    if cfg.epochs == 0 {
        return Err(CliError::Usage("epochs must be positive".into()));
    }

    let out_dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = Manifest::start(
        &out_dir,
        "train",
        cfg.seed,
        serde_json::json!({
            "arch": arch_name,
            "dataset": dataset_spec,
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "momentum": cfg.momentum,
            "batch_size": cfg.batch_size,
            "seed": cfg.seed,
            "out": out,
        }),
        &[out.clone()],
    )?;

    let outcome = (|| -> Result<(), CliError> {
        let (dataset, dataset_id) = load_dataset_spec(&dataset_spec)?;
        let mut model = Model::build(arch, dataset.num_classes as usize, (3, 32, 32), cfg.seed)?;
        let log = styless_core::nn::train(&mut model, &dataset, &cfg)?;
        for entry in &log {
            println!(
                "epoch {}: loss {:.4} accuracy {:.4}",
                entry.epoch, entry.mean_loss, entry.accuracy
            );
        }
        let final_accuracy = log.last().map(|e| e.accuracy).unwrap_or(0.0);
        let meta = TrainingMeta {
            dataset_id,
            seed: cfg.seed,
            epochs: cfg.epochs,
            final_accuracy,
        };
        save_checkpoint(&model, &meta, &out)?;
        println!(
            "saved {} ({} epochs, final accuracy {:.4}) to {}",
            arch,
            cfg.epochs,
            final_accuracy,
            out.display()
        );
        Ok(())
    })();

    match &outcome {
        Ok(()) => manifest.complete(),
        Err(e) => manifest.fail(&e.to_string()),
    }
    outcome
}
