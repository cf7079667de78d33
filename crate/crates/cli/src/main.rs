use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pate_fairness::data::{synth_two_group, SynthSpec};
use pate_fairness::experiment::{
    analyze, train_pipeline, write_sweep_csv, DataSource, ExperimentConfig, SweepSpec,
};
use pate_fairness::privacy::{budget_for_target, rdp_to_dp, RdpLedger};
use pate_fairness::report::{emit_report, ReportFormat};
use pate_fairness::{ensemble, run_sweep, Error, Result};

#[derive(Parser)]
#[command(
    name = "pate-fair",
    version,
    about = "PATE training with a per-group fairness audit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report, diagnostics and vote transcript.
    Run {
        /// Experiment config (JSON). Omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV input; replaces the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label_col: Option<String>,
        #[arg(long)]
        group_col: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Only write the report in this format (json or csv) to `--out`.
        #[arg(long)]
        format: Option<String>,
    },
    /// Run one experiment per swept value and write a summary table.
    Sweep {
        /// Sweep spec (JSON): {"base": {...}, "parameter": "lambda" | "k" | "sigma", "values": [...]}.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the (ε, δ) guarantee for m noisy votes, or the σ reaching a target ε.
    PrivacyBudget {
        #[arg(long)]
        m: u64,
        #[arg(
            long,
            conflicts_with = "target_epsilon",
            required_unless_present = "target_epsilon"
        )]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        #[arg(long)]
        target_epsilon: Option<f64>,
    },
    /// Write a synthetic two-group dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
        margins: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    Ok(())
}

fn apply_data_flags(
    cfg: &mut ExperimentConfig,
    data: Option<PathBuf>,
    label_col: Option<String>,
    group_col: Option<String>,
) -> Result<()> {
    match (&mut cfg.data, data) {
        (source, Some(path)) => {
            let (label, group) = match (label_col, group_col, &*source) {
                (Some(l), Some(g), _) => (l, g),
                (
                    l,
                    g,
                    DataSource::Csv {
                        label_col,
                        group_col,
                        ..
                    },
                ) => (
                    l.unwrap_or(label_col.clone()),
                    g.unwrap_or(group_col.clone()),
                ),
                _ => {
                    return Err(Error::Usage(
                        "--data needs --label-col and --group-col".into(),
                    ))
                }
            };
            let categorical_cols = match source {
                DataSource::Csv {
                    categorical_cols, ..
                } => categorical_cols.clone(),
                DataSource::Synth { .. } => Vec::new(),
            };
            *source = DataSource::Csv {
                path,
                label_col: label,
                group_col: group,
                categorical_cols,
            };
        }
        (
            DataSource::Csv {
                label_col: l,
                group_col: g,
                ..
            },
            None,
        ) => {
            if let Some(v) = label_col {
                *l = v;
            }
            if let Some(v) = group_col {
                *g = v;
            }
        }
        (DataSource::Synth { .. }, None) => {
            if label_col.is_some() || group_col.is_some() {
                return Err(Error::Usage(
                    "--label-col/--group-col apply only to CSV data".into(),
                ));
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            data,
            label_col,
            group_col,
            out,
            seed,
            format,
        } => {
            let mut cfg: ExperimentConfig = match config {
                Some(p) => read_json(&p)?,
                None => ExperimentConfig::default(),
            };
            apply_data_flags(&mut cfg, data, label_col, group_col)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let format = format.map(|f| f.parse::<ReportFormat>()).transpose()?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            cfg.validate()?;

            let pipeline = train_pipeline(&cfg)?;
            let report = analyze(&pipeline, cfg.risk_loss)?;
            if let Some(format) = format {
                emit_report(&report, format, &out)?;
                return Ok(());
            }
            fs::create_dir_all(&out)?;
            emit_report(&report, ReportFormat::Json, out.join("report.json"))?;
            emit_report(&report, ReportFormat::Csv, out.join("diagnostics.csv"))?;
            ensemble::write_transcript(
                &pipeline.transcript(0),
                BufWriter::new(File::create(out.join("votes.csv"))?),
            )?;
            if let Some(stats) = &report.standardization {
                write_json(stats, &out.join("standardization.json"))?;
            }
            let eps = report
                .privacy_triple()
                .map_or("non-private (sigma = 0)".to_string(), |(e, d, _)| {
                    format!("epsilon {e} at delta {d}")
                });
            eprintln!(
                "gap {} ({}), E[delta] {}, {eps}; wrote {}",
                report.gap,
                report.loss.name(),
                report.deviation.first_moment,
                out.display()
            );
            Ok(())
        }
        Command::Sweep { config, out, seed } => {
            let mut spec: SweepSpec = read_json(&config)?;
            if let Some(s) = seed {
                spec.base.seed = s;
            }
            spec.base.validate()?;
            let out = out
                .or_else(|| spec.base.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("."));
            let rows = run_sweep(&spec)?;
            fs::create_dir_all(&out)?;
            write_sweep_csv(&rows, BufWriter::new(File::create(out.join("sweep.csv"))?))?;
            write_json(&rows, &out.join("sweep.json"))?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!(
                "{} values, {failed} failed; wrote {}",
                rows.len(),
                out.display()
            );
            Ok(())
        }
        Command::PrivacyBudget {
            m,
            sigma,
            delta,
            target_epsilon,
        } => {
            let sigma = match (sigma, target_epsilon) {
                (Some(s), _) => s,
                (None, Some(t)) => budget_for_target(m, delta, t)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let mut ledger = RdpLedger::new();
            ledger.record(m, sigma)?;
            let g = rdp_to_dp(&ledger, delta)?;
            let out = serde_json::json!({
                "epsilon": g.epsilon,
                "gamma_star": g.gamma_star,
                "coeff": g.coeff,
                "delta": delta,
                "sigma": sigma,
                "m": m,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(())
        }
        Command::Synth {
            n,
            dim,
            margins,
            scales,
            seed,
            out,
        } => {
            if margins.len() != 2 || scales.len() != 2 {
                return Err(Error::Usage(
                    "--margins and --scales take two comma-separated values".into(),
                ));
            }
            let spec = SynthSpec {
                n,
                dim,
                margins: [margins[0], margins[1]],
                scales: [scales[0], scales[1]],
                seed,
            };
            let data = synth_two_group(&spec)?;
            data.write_csv(BufWriter::new(File::create(&out)?))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
