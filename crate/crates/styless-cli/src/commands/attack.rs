use crate::config_file::{require, resolve, ConfigFile};
use crate::errors::CliError;
use crate::manifest::Manifest;
use crate::sources::load_dataset_spec;
use clap::Args;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use styless_core::attack::{run_attack, AttackConfig, AttackName, AttackRun};
use styless_core::harness::{aggregate_loss_gap, config_hash};
use styless_core::nn::{save_dataset, Model};
use styless_core::stylize::{CleanLossGuard, LossGapSeries, StyleSourceMode};

#[derive(Args)]
pub struct AttackArgs {
    /// Surrogate checkpoint; repeat for an ensemble.
    #[arg(long = "surrogate")]
    surrogates: Vec<PathBuf>,
    /// Attack composition: i | mi | mdi | mtdi | mtdsi | mtdai.
    #[arg(long)]
    attack: Option<String>,
    /// Style injection: on | off.
    #[arg(long)]
    styless: Option<String>,
    /// Stylized models per surrogate per iteration (N).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Step size alpha; defaults to epsilon / 2.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Momentum decay eta; defaults to the attack composition's value.
    #[arg(long)]
    decay: Option<f64>,
    /// Style source: image | synth.
    #[arg(long)]
    style_mode: Option<String>,
    /// Draw the N styles once per image instead of every iteration.
    #[arg(long)]
    fixed_styles: bool,
    #[arg(long)]
    max_retries: Option<usize>,
    /// Clean-loss guard factor; 0 disables the guard.
    #[arg(long)]
    clean_guard: Option<f64>,
    /// Record per-iteration loss-gap diagnostics with this many styles.
    #[arg(long)]
    gap_styles: Option<usize>,
    /// Dataset to attack: SLDS path or gen: spec.
    #[arg(long)]
    dataset: Option<String>,
    /// Attack only the first COUNT images.
    #[arg(long)]
    count: Option<usize>,
    /// Restrict to images the first surrogate classifies correctly.
    #[arg(long)]
    eligible_only: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (adversarial.slds, run.json, manifest.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file mirroring these flags; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Compact per-image record mirrored into the JSON sidecar.
#[derive(Serialize, Deserialize)]
pub struct SidecarOutcome {
    pub index: usize,
    pub label: usize,
    pub surrogate_clean_pred: usize,
    pub surrogate_adv_pred: usize,
    pub success_on_surrogate: bool,
    pub accepted_styles: usize,
    pub rejected_styles: usize,
    pub sampling_failures: usize,
    pub zero_gradient_flags: usize,
    /// Every accepted style satisfied the acceptance predicate as recorded.
    pub acceptance_ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

/// JSON sidecar written next to the adversarial dataset. Everything needed
/// to evaluate or replay the run.
#[derive(Serialize, Deserialize)]
pub struct RunSidecar {
    pub dataset_spec: String,
    pub surrogate_paths: Vec<String>,
    pub surrogate_archs: Vec<String>,
    pub config: AttackConfig,
    pub config_hash: String,
    pub indices: Vec<usize>,
    pub outcomes: Vec<SidecarOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_gap: Option<LossGapSeries>,
}

pub fn sidecar_from_run(run: &AttackRun, dataset_spec: &str, paths: &[PathBuf]) -> RunSidecar {
    RunSidecar {
        dataset_spec: dataset_spec.to_string(),
        surrogate_paths: paths.iter().map(|p| p.display().to_string()).collect(),
        surrogate_archs: run.surrogates.clone(),
        config: run.config.clone(),
        config_hash: config_hash(&run.config),
        indices: run.indices(),
        outcomes: run
            .outcomes
            .iter()
            .map(|o| SidecarOutcome {
                index: o.index,
                label: o.label,
                surrogate_clean_pred: o.surrogate_clean_pred,
                surrogate_adv_pred: o.surrogate_adv_pred,
                success_on_surrogate: o.success_on_surrogate,
                accepted_styles: o.style_records.len(),
                rejected_styles: o.style_records.iter().map(|r| r.rejected).sum(),
                sampling_failures: o.sampling_failures,
                zero_gradient_flags: o.zero_gradient_flags,
                acceptance_ok: o.style_records.iter().all(|r| {
                    r.stylized_pred_on_benign == r.vanilla_pred
                        || r.stylized_pred_on_benign == r.label
                }),
                failed: o.failed.clone(),
            })
            .collect(),
        loss_gap: aggregate_loss_gap(run),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn build_attack_config(
    name: AttackName,
    styless: bool,
    n: Option<usize>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    steps: Option<usize>,
    decay: Option<f64>,
    style_mode: Option<&str>,
    fixed_styles: bool,
    max_retries: Option<usize>,
    clean_guard: Option<f64>,
    gap_styles: Option<usize>,
    seed: u64,
) -> Result<AttackConfig, CliError> {
    let mut config = AttackConfig::new(name, styless, seed);
    if let Some(n) = n {
        if n > 0 && !styless {
            return Err(CliError::Usage(
                "--n > 0 requires --styless on".into(),
            ));
        }
        config.stylized_count = n;
    }
    if let Some(eps) = epsilon {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(CliError::Usage(format!(
                "epsilon {eps} outside (0, 1]"
            )));
        }
        config.epsilon = eps;
        config.step_size = eps / 2.0;
    }
    if let Some(alpha) = alpha {
        config.step_size = alpha;
    }
    if let Some(steps) = steps {
        config.steps = steps;
    }
    if let Some(decay) = decay {
        config.decay = decay;
    }
    if let Some(mode) = style_mode {
        config.style_mode = match mode {
            "image" => StyleSourceMode::ImageStats,
            "synth" => StyleSourceMode::ChannelResample,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown style mode '{other}' (use image or synth)"
                )))
            }
        };
    }
    if fixed_styles {
        config.style_resample = styless_core::attack::StyleResample::FixedPerImage;
    }
    if let Some(r) = max_retries {
        config.max_retries = r;
    }
    if let Some(factor) = clean_guard {
        config.clean_guard = if factor > 0.0 {
            Some(CleanLossGuard { factor })
        } else {
            None
        };
    }
    if let Some(k) = gap_styles {
        config.record_loss_gap = k > 0;
        config.gap_styles = k;
    }
    config.validate()?;
    Ok(config)
}

fn parse_on_off(value: &str, flag: &str) -> Result<bool, CliError> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(CliError::Usage(format!(
            "--{flag} takes on|off, got '{other}'"
        ))),
    }
}

pub fn run(args: AttackArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let surrogate_paths: Vec<PathBuf> = if args.surrogates.is_empty() {
        file.str_list("surrogate")
            .map(|v| v.into_iter().map(PathBuf::from).collect())
            .ok_or_else(|| CliError::Usage("missing required flag --surrogate".into()))?
    } else {
        args.surrogates.clone()
    };
    let attack_name = resolve(args.attack, file.str("attack"), "mi".into());
    let name = AttackName::parse(&attack_name)
        .ok_or_else(|| CliError::Usage(format!("unknown attack '{attack_name}'")))?;
    let styless_str = resolve(args.styless, file.str("styless"), "on".into());
    let styless = parse_on_off(&styless_str, "styless")?;
    let dataset_spec = require(args.dataset, file.str("dataset"), "dataset")?;
    let out = require(args.out, file.str("out").map(PathBuf::from), "out")?;
    let seed = resolve(args.seed, file.u64("seed"), 0);

    // Usage errors must fire before any compute.
    let style_mode = args.style_mode.or(file.str("style_mode"));
    let config = build_attack_config(
        name,
        styless,
        args.n.or(file.usize("n")),
        args.epsilon.or(file.f64("epsilon")),
        args.alpha.or(file.f64("alpha")),
        args.steps.or(file.usize("steps")),
        args.decay.or(file.f64("decay")),
        style_mode.as_deref(),
        args.fixed_styles || file.bool("fixed_styles").unwrap_or(false),
        args.max_retries.or(file.usize("max_retries")),
        args.clean_guard.or(file.f64("clean_guard")),
        args.gap_styles.or(file.usize("gap_styles")),
        seed,
    )?;

    let manifest = Manifest::start(
        &out,
        "attack",
        seed,
        serde_json::json!({
            "surrogates": surrogate_paths,
            "dataset": dataset_spec,
            "count": args.count,
            "eligible_only": args.eligible_only,
            "config": config,
        }),
        &[out.join("adversarial.slds"), out.join("run.json")],
    )?;

    let outcome = (|| -> Result<(), CliError> {
        let mut loaded = Vec::new();
        for path in &surrogate_paths {
            loaded.push(super::load_model(path)?);
        }
        let models: Vec<&Model> = loaded.iter().map(|(_, m, _)| m).collect();
        super::check_model_compat(&models)?;

        let (dataset, _) = load_dataset_spec(&dataset_spec)?;
        let limit = resolve(args.count, file.usize("count"), dataset.len());
        let mut indices: Vec<usize> = if args.eligible_only || file.bool("eligible_only").unwrap_or(false) {
            styless_core::harness::select_clean_correct(&models[..1], &dataset, limit)?
        } else {
            (0..dataset.len().min(limit)).collect()
        };
        indices.truncate(limit);
        if indices.is_empty() {
            return Err(CliError::Usage("no images selected to attack".into()));
        }

        let run = run_attack(&models, &dataset, &indices, &config)?;
        let failures = run.outcomes.iter().filter(|o| o.failed.is_some()).count();
        let white_box = run
            .outcomes
            .iter()
            .filter(|o| o.success_on_surrogate)
            .count();

        save_dataset(
            &run.adversarial_dataset(dataset.num_classes),
            &out.join("adversarial.slds"),
        )?;
        let sidecar = sidecar_from_run(&run, &dataset_spec, &surrogate_paths);
        std::fs::write(
            out.join("run.json"),
            serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
        )?;
        println!(
            "{}: attacked {} images ({} surrogate successes, {} failures) -> {}",
            config.label(),
            run.outcomes.len(),
            white_box,
            failures,
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
