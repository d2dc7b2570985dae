use crate::config_file::{require, resolve, ConfigFile};
use crate::errors::CliError;
use crate::manifest::Manifest;
use crate::sources::load_dataset_spec;
use clap::Args;
use std::path::PathBuf;
use styless_core::attack::{AttackConfig, AttackName};
use styless_core::harness::svg::{line_chart, Series};
use styless_core::harness::{
    ablation_beta_gamma, ablation_clean_loss, ablation_epsilon, ablation_split_depth,
    ablation_stylized_count, select_clean_correct, write_csv, write_json, AblationContext,
    TransferReport,
};
use styless_core::nn::Model;

#[derive(Args)]
pub struct AblateArgs {
    /// Axis: split | count | betagamma | cleanloss | epsilon.
    #[arg(long)]
    axis: Option<String>,
    /// TOML experiment description (dataset, surrogate, targets, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample-count override.
    #[arg(long)]
    count: Option<usize>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

fn annotate(mut report: TransferReport, axis: &str, value: &str) -> TransferReport {
    report.attack = format!("{}@{axis}={value}", report.attack);
    report
}

pub fn run(args: AblateArgs) -> Result<(), CliError> {
    let axis = args
        .axis
        .clone()
        .ok_or_else(|| CliError::Usage("missing required flag --axis".into()))?;
    let file = ConfigFile::load(args.config.as_deref())?;
    let dataset_spec = require(None, file.str("dataset"), "dataset (config file)")?;
    let surrogate_path = require(
        None,
        file.str("surrogate").map(PathBuf::from),
        "surrogate (config file)",
    )?;
    let target_paths: Vec<PathBuf> = file
        .str_list("targets")
        .map(|v| v.into_iter().map(PathBuf::from).collect())
        .ok_or_else(|| CliError::Usage("config file must list targets".into()))?;
    let out = require(args.out, file.str("out").map(PathBuf::from), "out")?;
    let sample_count = resolve(args.count, file.usize("count"), 100);
    let seed = resolve(args.seed, file.u64("seed"), 0);
    let attack_name = file.str("attack").unwrap_or_else(|| "mi".into());
    let name = AttackName::parse(&attack_name)
        .ok_or_else(|| CliError::Usage(format!("unknown attack '{attack_name}'")))?;
    let steps = file.usize("steps");
    let stylized_count = file.usize("n");

    let manifest = Manifest::start(
        &out,
        "ablate",
        seed,
        serde_json::json!({
            "axis": axis,
            "dataset": dataset_spec,
            "surrogate": surrogate_path,
            "targets": target_paths,
            "attack": attack_name,
            "count": sample_count,
            "seed": seed,
        }),
        &[out.join("ablation.csv"), out.join("ablation.json")],
    )?;

    let outcome = (|| -> Result<(), CliError> {
        let (_, surrogate, _) = super::load_model(&surrogate_path)?;
        let mut loaded = Vec::new();
        for path in &target_paths {
            loaded.push(super::load_model(path)?);
        }
        let mut all: Vec<&Model> = vec![&surrogate];
        all.extend(loaded.iter().map(|(_, m, _)| m));
        super::check_model_compat(&all)?;
        let targets: Vec<(&str, &Model)> = loaded
            .iter()
            .map(|(name, m, _)| (name.as_str(), m))
            .collect();

        let (dataset, _) = load_dataset_spec(&dataset_spec)?;
        let indices = select_clean_correct(&all, &dataset, sample_count)?;
        if indices.is_empty() {
            return Err(CliError::Data(
                "no image is classified correctly by every model".into(),
            ));
        }

        let mut base = AttackConfig::new(name, true, seed);
        if let Some(steps) = steps {
            base.steps = steps;
        }
        if let Some(n) = stylized_count {
            base.stylized_count = n;
        }
        base.validate()?;

        let ctx = AblationContext {
            surrogate: &surrogate,
            targets: &targets,
            dataset: &dataset,
            indices: &indices,
        };

        let mut reports: Vec<TransferReport> = Vec::new();
        let mut chart: Vec<Series> = Vec::new();
        match axis.as_str() {
            "split" => {
                let depths = file.usize_list("depths");
                let sweep = ablation_split_depth(&ctx, &base, depths.as_deref())?;
                let mut points = Vec::new();
                for (depth, report) in sweep {
                    points.push((depth as f64, report.mean_success_rate()));
                    reports.push(annotate(report, "split", &depth.to_string()));
                }
                chart.push(Series {
                    label: "mean success rate".into(),
                    points,
                });
            }
            "count" => {
                let counts = file
                    .usize_list("counts")
                    .unwrap_or_else(|| vec![0, 2, 6, 10]);
                let sweep = ablation_stylized_count(&ctx, &base, &counts)?;
                let mut points = Vec::new();
                for (n, report) in sweep {
                    points.push((n as f64, report.mean_success_rate()));
                    reports.push(annotate(report, "n", &n.to_string()));
                }
                chart.push(Series {
                    label: "mean success rate".into(),
                    points,
                });
            }
            "betagamma" => {
                let (beta, gamma) = ablation_beta_gamma(&ctx, &base)?;
                reports.push(annotate(beta, "scale", "beta_only"));
                reports.push(annotate(gamma, "scale", "gamma_only"));
            }
            "cleanloss" => {
                let strengths = file
                    .f64_list("strengths")
                    .unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0]);
                let scatter = ablation_clean_loss(&ctx, &base, &strengths)?;
                let mut csv =
                    String::from("strength,mean_stylized_clean_loss,success_rate\n");
                let mut points = Vec::new();
                for p in &scatter {
                    csv.push_str(&format!(
                        "{},{},{}\n",
                        p.strength, p.mean_stylized_clean_loss, p.success_rate
                    ));
                    points.push((p.mean_stylized_clean_loss, p.success_rate));
                }
                std::fs::write(out.join("ablation.csv"), csv)?;
                std::fs::write(
                    out.join("ablation.json"),
                    serde_json::to_string_pretty(&scatter).expect("scatter serializes"),
                )?;
                let chart = line_chart(
                    "Clean loss vs success rate",
                    "mean stylized clean loss",
                    "success rate",
                    &[Series {
                        label: "sweep".into(),
                        points,
                    }],
                );
                std::fs::write(out.join("ablation.svg"), chart)?;
                println!("wrote clean-loss sweep ({} points)", scatter.len());
                return Ok(());
            }
            "epsilon" => {
                let epsilons = file.f64_list("epsilons").unwrap_or_else(|| {
                    vec![4.0 / 255.0, 8.0 / 255.0, 16.0 / 255.0]
                });
                let sweep = ablation_epsilon(&ctx, &base, &epsilons)?;
                let mut points = Vec::new();
                for (eps, report) in sweep {
                    points.push((eps, report.mean_success_rate()));
                    reports.push(annotate(report, "epsilon", &format!("{eps}")));
                }
                chart.push(Series {
                    label: "mean success rate".into(),
                    points,
                });
            }
            other => {
                return Err(CliError::Usage(format!(
                    "unknown axis '{other}' (use split, count, betagamma, cleanloss, epsilon)"
                )))
            }
        }

        let refs: Vec<&TransferReport> = reports.iter().collect();
        write_csv(&refs, &out.join("ablation.csv"))?;
        write_json(&refs, &out.join("ablation.json"))?;
        if !chart.is_empty() {
            let svg = line_chart(
                &format!("Ablation: {axis}"),
                &axis,
                "mean success rate",
                &chart,
            );
            std::fs::write(out.join("ablation.svg"), svg)?;
        }
        for report in &reports {
            println!(
                "{}: mean success rate {:.4}",
                report.attack,
                report.mean_success_rate()
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
