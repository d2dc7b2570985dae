use crate::config_file::{require, resolve, ConfigFile};
use crate::errors::CliError;
use crate::manifest::Manifest;
use crate::sources::load_dataset_spec;
use clap::Args;
use std::path::PathBuf;
use styless_core::attack::{run_attack, AttackConfig, AttackName};
use styless_core::harness::svg::{line_chart, Series};
use styless_core::harness::{aggregate_loss_gap, select_clean_correct};

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Surrogate checkpoint.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    /// Images to trace: SLDS path or gen: spec.
    #[arg(long)]
    images: Option<String>,
    /// Trace the first COUNT surrogate-correct images.
    #[arg(long)]
    count: Option<usize>,
    /// Baseline attack to trace (its +styless counterpart runs too).
    #[arg(long)]
    attack: Option<String>,
    /// Styles per iteration for the gap measurement.
    #[arg(long)]
    gap_styles: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (loss-gap CSVs, loss_gap.svg, manifest.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML file mirroring these flags; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run(args: DiagnoseArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let surrogate_path = require(
        args.surrogate,
        file.str("surrogate").map(PathBuf::from),
        "surrogate",
    )?;
    let images_spec = require(args.images, file.str("images"), "images")?;
    let out = require(args.out, file.str("out").map(PathBuf::from), "out")?;
    let count = resolve(args.count, file.usize("count"), 100);
    let attack_name = resolve(args.attack, file.str("attack"), "mi".into());
    let name = AttackName::parse(&attack_name)
        .ok_or_else(|| CliError::Usage(format!("unknown attack '{attack_name}'")))?;
    let gap_styles = resolve(args.gap_styles, file.usize("gap_styles"), 10);
    if gap_styles == 0 {
        return Err(CliError::Usage("gap_styles must be positive".into()));
    }
    let seed = resolve(args.seed, file.u64("seed"), 0);

    let manifest = Manifest::start(
        &out,
        "diagnose",
        seed,
        serde_json::json!({
            "surrogate": surrogate_path,
            "images": images_spec,
            "count": count,
            "attack": attack_name,
            "gap_styles": gap_styles,
            "steps": args.steps,
            "seed": seed,
        }),
        &[out.join("loss_gap.svg")],
    )?;

    let outcome = (|| -> Result<(), CliError> {
        let (_, surrogate, _) = super::load_model(&surrogate_path)?;
        let (dataset, _) = load_dataset_spec(&images_spec)?;
        let indices = select_clean_correct(&[&surrogate], &dataset, count)?;
        if indices.is_empty() {
            return Err(CliError::Data(
                "surrogate classifies none of the images correctly".into(),
            ));
        }

        let mut series = Vec::new();
        for styless in [false, true] {
            let mut config = AttackConfig::new(name, styless, seed);
            if let Some(steps) = args.steps.or(file.usize("steps")) {
                config.steps = steps;
            }
            config.record_loss_gap = true;
            config.gap_styles = gap_styles;
            config.validate()?;

            let run = run_attack(&[&surrogate], &dataset, &indices, &config)?;
            let gap = aggregate_loss_gap(&run).ok_or_else(|| {
                CliError::Numerical("no loss-gap points were recorded".into())
            })?;
            let label = config.label();
            std::fs::write(
                out.join(format!("loss_gap_{}.csv", label.replace('+', "_"))),
                gap.to_csv(),
            )?;
            println!(
                "{label}: gap at iteration 1 = {:.4}, at iteration {} = {:.4}",
                gap.points.first().map(|p| p.gap).unwrap_or(0.0),
                gap.points.len(),
                gap.points.last().map(|p| p.gap).unwrap_or(0.0),
            );
            series.push(Series {
                label,
                points: gap
                    .points
                    .iter()
                    .map(|p| (p.iteration as f64, p.gap))
                    .collect(),
            });
        }

        let chart = line_chart(
            "Stylized loss gap per iteration",
            "iteration",
            "vanilla loss - mean stylized loss",
            &series,
        );
        std::fs::write(out.join("loss_gap.svg"), chart)?;
        Ok(())
    })();

    match &outcome {
        Ok(()) => manifest.complete(),
        Err(e) => manifest.fail(&e.to_string()),
    }
    outcome
}
