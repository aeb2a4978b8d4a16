use std::path::PathBuf;
use std::process::ExitCode;

use actisleep::cluster::{DayEncoding, EncodingMode};
use actisleep::io::checkpoint::load_checkpoint;
use actisleep::io::report::{parse_confusion_csv, render_report};
use actisleep::io::{load_series, save_series, RunConfig};
use actisleep::metrics::format3;
use actisleep::models::ModelKind;
use actisleep::pipeline;
use actisleep::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "actisleep", version, about = "Four-state sleep/wake scoring from actigraphy")]
struct Cli {
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled cohort, one series file per patient.
    Generate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier and write its checkpoint, metrics and curves.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Series files or directories of them.
        #[arg(long, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        out: PathBuf,
        /// Train on a single patient instead of the pooled cohort.
        #[arg(long)]
        patient: Option<String>,
        /// Overrides the configured number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint, or a stored confusion matrix, as a report.
    Evaluate {
        #[arg(long, required_unless_present = "confusion", requires = "data")]
        ckpt: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Confusion matrix CSV (rows predicted, columns actual).
        #[arg(long, conflicts_with = "ckpt")]
        confusion: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Score every window instead of the held-out part of the training split.
        #[arg(long)]
        all_windows: bool,
        #[arg(long)]
        title: Option<String>,
    },
    /// Label every epoch of a series file with model predictions.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster days by DTW distance of their state sequences.
    Cluster {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Replace the stored labels with this model's predictions first.
        #[arg(long)]
        use_predictions: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        downsample: Option<usize>,
        #[arg(long, value_enum)]
        encoding: Option<EncodingArg>,
    },
    /// Compare analytic and finite-difference gradients of a model.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    SeqCnn,
    MtlCnn,
    Mlp,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::SeqCnn => ModelKind::SeqCnn,
            ModelArg::MtlCnn => ModelKind::MtlCnn,
            ModelArg::Mlp => ModelKind::Mlp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Ordinal,
    Binary,
    Activity,
}

fn load_config(arg: &ConfigArg, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match &arg.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn data_paths(flag: Vec<PathBuf>, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if !flag.is_empty() {
        return Ok(flag);
    }
    cfg.paths
        .data
        .clone()
        .map(|p| vec![p])
        .ok_or_else(|| Error::Config("no --data given and no paths.data configured".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let out = out
                .or_else(|| cfg.paths.out.clone())
                .ok_or_else(|| Error::Config("no --out given and no paths.out configured".into()))?;
            let cohort = pipeline::generate(&cfg)?;
            for p in pipeline::write_cohort(&cohort, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train {
            config,
            data,
            model,
            out,
            patient,
            epochs,
        } => {
            let mut cfg = load_config(&config, cli.seed)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let mut series = pipeline::load_data(&data_paths(data, &cfg)?)?;
            if let Some(id) = &patient {
                series.retain(|s| s.patient_id() == id);
                if series.is_empty() {
                    return Err(Error::Invalid(format!("no series for patient `{id}`")));
                }
            }
            let run = pipeline::train_model(&cfg, &series, model.into())?;
            for r in &run.outcome.curve.records {
                println!(
                    "epoch {:>3}  train acc {:.4}  held-out acc {:.4}  loss {:.4}  lr {:.5}",
                    r.epoch, r.train_accuracy, r.test_accuracy, r.train_loss, r.learning_rate
                );
            }
            let paths = pipeline::write_training_artifacts(&run, &out)?;
            println!(
                "best epoch {}  held-out accuracy {}  macro F1 {}",
                run.outcome.best_epoch,
                format3(run.report.accuracy),
                run.report.macro_f1.map(format3).unwrap_or_else(|| "undefined".into())
            );
            for p in [paths.checkpoint, paths.metrics, paths.confusion, paths.convergence, paths.timing] {
                println!("wrote {}", p.display());
            }
        }
        Command::Evaluate {
            ckpt,
            data,
            confusion,
            report,
            all_windows,
            title,
        } => {
            let (cm, default_title) = match (ckpt, confusion) {
                (_, Some(path)) => {
                    let text = actisleep::io::atomic::read_string(&path)?;
                    (parse_confusion_csv(&text)?, format!("Confusion matrix {}", path.display()))
                }
                (Some(ckpt), None) => {
                    let (model, meta) = load_checkpoint(&ckpt, None)?;
                    let series = pipeline::load_data(&data)?;
                    let cm = pipeline::evaluate_model(&model, &meta, &series, all_windows)?;
                    (cm, format!("{} performance by state", model.kind()))
                }
                (None, None) => unreachable!("clap requires --ckpt or --confusion"),
            };
            let title = title.unwrap_or(default_title);
            let (rep, paths) = pipeline::write_report(&title, &cm, &report)?;
            print!("{}", render_report(&title, &rep, &cm));
            println!("wrote {}", paths.report.display());
            println!("wrote {}", paths.metrics.display());
        }
        Command::Predict { ckpt, data, out } => {
            let (model, _) = load_checkpoint(&ckpt, None)?;
            let series = load_series(&data)?;
            let predicted = pipeline::predict_states(&model, &series)?;
            save_series(&predicted, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Cluster {
            config,
            data,
            out,
            use_predictions,
            k,
            downsample,
            encoding,
        } => {
            let cfg = load_config(&config, cli.seed)?;
            let mut series = pipeline::load_data(&data)?;
            if let Some(ckpt) = use_predictions {
                let (model, _) = load_checkpoint(&ckpt, None)?;
                series = pipeline::predict_states(&model, &series)?;
            }
            let mut enc: DayEncoding = cfg.cluster.encoding;
            if let Some(d) = downsample {
                enc.downsample = d;
            }
            if let Some(e) = encoding {
                enc.mode = match e {
                    EncodingArg::Ordinal => EncodingMode::Ordinal,
                    EncodingArg::Binary => EncodingMode::Binary,
                    EncodingArg::Activity => EncodingMode::Activity,
                };
            }
            let outcome = pipeline::cluster_days(&series, &enc, k.unwrap_or(cfg.cluster.k))?;
            for p in pipeline::write_cluster_outputs(&outcome, &out)? {
                println!("wrote {}", p.display());
            }
            println!(
                "k={}  attack purity {}  ARI {}  patient purity {}  ARI {}",
                outcome.k,
                format3(outcome.by_attack.purity),
                format3(outcome.by_attack.adjusted_rand_index),
                format3(outcome.by_patient.purity),
                format3(outcome.by_patient.adjusted_rand_index)
            );
        }
        Command::Gradcheck { config, model, samples } => {
            let cfg = load_config(&config, cli.seed)?;
            let kind: ModelKind = model.into();
            let report = pipeline::gradcheck_model(&cfg.models.spec(kind), cfg.seed, samples)?;
            println!(
                "{kind}: {} parameters checked, {} skipped at kinks, max relative error {:.3e}, mean {:.3e}, tolerance {:.0e}",
                report.checks.len(),
                report.skipped_kinks,
                report.max_relative_error,
                report.mean_relative_error,
                report.tolerance
            );
            if !report.passed() {
                return Err(Error::Invalid(format!("gradient check failed for {kind}")));
            }
            println!("PASS");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
