use super::attack::RunSidecar;
use crate::config_file::{require, ConfigFile};
use crate::errors::CliError;
use crate::manifest::Manifest;
use crate::sources::load_dataset_spec;
use clap::Args;
use std::path::{Path, PathBuf};
use styless_core::attack::{AttackRun, ImageOutcome};
use styless_core::harness::{evaluate_transfer, write_csv, write_json};
use styless_core::nn::{load_dataset, Model};

#[derive(Args)]
pub struct EvalArgs {
    /// Attack output: the run directory or its run.json path.
    #[arg(long)]
    adv: Option<PathBuf>,
    /// Target checkpoint; repeatable.
    #[arg(long = "target")]
    targets: Vec<PathBuf>,
    /// Permit targets that served as surrogates (white-box diagonal).
    #[arg(long)]
    allow_whitebox: bool,
    /// Output directory (report.csv, report.json, manifest.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file mirroring these flags; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Rebuild enough of an [`AttackRun`] from the sidecar and the adversarial
/// dataset file to score transfer rates.
pub fn load_run(adv: &Path) -> Result<(RunSidecar, AttackRun, String), CliError> {
    let (sidecar_path, slds_path) = if adv.is_dir() {
        (adv.join("run.json"), adv.join("adversarial.slds"))
    } else {
        let dir = adv.parent().map(PathBuf::from).unwrap_or_default();
        (adv.to_path_buf(), dir.join("adversarial.slds"))
    };
    let sidecar: RunSidecar = serde_json::from_str(
        &std::fs::read_to_string(&sidecar_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", sidecar_path.display())))?,
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", sidecar_path.display())))?;
    let adv_data = load_dataset(&slds_path)?;
    if adv_data.len() != sidecar.indices.len() {
        return Err(CliError::Data(format!(
            "adversarial dataset has {} records but the sidecar lists {} indices",
            adv_data.len(),
            sidecar.indices.len()
        )));
    }
    if adv_data.is_empty() {
        return Err(CliError::Usage("adversarial set is empty".into()));
    }
    let outcomes: Vec<ImageOutcome> = sidecar
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| ImageOutcome {
            index: o.index,
            label: o.label,
            adversarial: adv_data.images[i].clone(),
            surrogate_clean_pred: o.surrogate_clean_pred,
            surrogate_adv_pred: o.surrogate_adv_pred,
            success_on_surrogate: o.success_on_surrogate,
            iterations: Vec::new(),
            style_records: Vec::new(),
            sampling_failures: o.sampling_failures,
            zero_gradient_flags: o.zero_gradient_flags,
            failed: o.failed.clone(),
        })
        .collect();
    let run = AttackRun {
        config: sidecar.config.clone(),
        surrogates: sidecar.surrogate_archs.clone(),
        outcomes,
    };
    let dataset_spec = sidecar.dataset_spec.clone();
    Ok((sidecar, run, dataset_spec))
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let adv = require(args.adv, file.str("adv").map(PathBuf::from), "adv")?;
    let target_paths: Vec<PathBuf> = if args.targets.is_empty() {
        file.str_list("target")
            .map(|v| v.into_iter().map(PathBuf::from).collect())
            .ok_or_else(|| CliError::Usage("missing required flag --target".into()))?
    } else {
        args.targets.clone()
    };
    let out = require(args.out, file.str("out").map(PathBuf::from), "out")?;
    let allow_whitebox = args.allow_whitebox || file.bool("allow_whitebox").unwrap_or(false);

    let (_, run, dataset_spec) = load_run(&adv)?;
    let manifest = Manifest::start(
        &out,
        "eval",
        run.config.seed,
        serde_json::json!({
            "adv": adv,
            "targets": target_paths,
            "allow_whitebox": allow_whitebox,
            "dataset": dataset_spec,
        }),
        &[out.join("report.csv"), out.join("report.json")],
    )?;

    let outcome = (|| -> Result<(), CliError> {
        let (benign, _) = load_dataset_spec(&dataset_spec)?;
        let mut loaded = Vec::new();
        for path in &target_paths {
            loaded.push(super::load_model(path)?);
        }
        let models: Vec<&Model> = loaded.iter().map(|(_, m, _)| m).collect();
        super::check_model_compat(&models)?;
        let named: Vec<(&str, &Model)> = loaded
            .iter()
            .map(|(name, m, _)| (name.as_str(), m))
            .collect();

        let report = evaluate_transfer(&benign, &run, &named, allow_whitebox)?;
        write_csv(&[&report], &out.join("report.csv"))?;
        write_json(&[&report], &out.join("report.json"))?;
        for target in &report.targets {
            println!(
                "{} -> {}: {}/{} eligible succeed ({:.4})",
                report.attack,
                target.target,
                target.n_success,
                target.n_eligible,
                target.success_rate
            );
        }
        Ok(())
    })();

    match &outcome {
        Ok(()) => manifest.complete(),
        Err(e) => manifest.fail(&e.to_string()),
    }
    outcome
}
