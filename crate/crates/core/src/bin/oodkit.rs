use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oodkit::data::GeneratorKind;
use oodkit::parallel;
use oodkit::pipeline::{
    cmd_eval, cmd_extract, cmd_fit, cmd_score, cmd_sweep, cmd_synth, cmd_train, ExperimentConfig,
    ScoreInput, SweepAxis, ThresholdSource,
};
use oodkit::scoring::{Metric, Thresholds};
use oodkit::{Error, Result};

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Out-of-distribution detection with vision transformer embeddings")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, splits and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Distance metric: mahalanobis, euclidean or cosine.
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Model profile (tiny-4, deit-t-16, deit-s-16, vit-b-16, vit-l-16).
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        kind: Option<GeneratorKind>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        shift: Option<f64>,
        /// Output file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Train the classifier on a dataset.
    Train {
        /// Training dataset (defaults to id_data from the config).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out set for checkpoint selection; split off when absent.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Write class-token embeddings and logits for a dataset.
    Extract {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit per-class statistics on training embeddings.
    Fit {
        #[arg(long)]
        embeddings: PathBuf,
        /// Pool one covariance across classes.
        #[arg(long)]
        shared_covariance: bool,
    },
    /// Score samples and apply the outlier rule.
    Score {
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Precomputed embeddings.
        #[arg(long, conflicts_with = "data")]
        embeddings: Option<PathBuf>,
        /// Raw images, scored through --model.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, requires = "t_conf")]
        t_distance: Option<f64>,
        #[arg(long, requires = "t_distance")]
        t_conf: Option<f64>,
        /// ID validation embeddings to calibrate thresholds on.
        #[arg(long, conflicts_with = "t_distance")]
        calibrate: Option<PathBuf>,
        #[arg(long)]
        target_tpr: Option<f64>,
    },
    /// AUROC/AUPR from ID and OOD score files.
    Eval {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        #[arg(long)]
        id_name: Option<String>,
        #[arg(long)]
        ood_name: Option<String>,
    },
    /// Run the full pipeline once per value of one axis.
    Sweep {
        /// batch_size, epochs, metric or model_profile.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        id_data: Option<PathBuf>,
        #[arg(long)]
        ood_data: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    if let Some(m) = &common.metric {
        cfg.fit.metric = m.parse()?;
    }
    if let Some(p) = &common.profile {
        cfg.profile = p.clone();
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.verbose = !common.quiet;
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("{what} is required (flag or config key)")))
}

fn run(cli: Cli) -> Result<()> {
    if cli.common.sequential {
        parallel::set_sequential(true);
    }
    let mut cfg = load_config(&cli.common)?;
    let out = cfg.out_dir.clone();
    let verbose = cfg.verbose;
    let say = |msg: String| {
        if verbose {
            eprintln!("{msg}");
        }
    };
    match cli.command {
        Command::Synth {
            kind,
            classes,
            samples_per_class,
            image_size,
            channels,
            noise_sigma,
            shift,
            name,
        } => {
            let s = &mut cfg.synth;
            s.kind = kind.unwrap_or(s.kind);
            s.num_classes = classes.unwrap_or(s.num_classes);
            s.samples_per_class = samples_per_class.unwrap_or(s.samples_per_class);
            s.image_size = image_size.unwrap_or(s.image_size);
            s.channels = channels.unwrap_or(s.channels);
            s.noise_sigma = noise_sigma.unwrap_or(s.noise_sigma);
            s.shift = shift.unwrap_or(s.shift);
            let name = name.unwrap_or(cfg.synth_name.clone());
            let path = cmd_synth(&cfg.synth, &name, &out)?;
            say(format!("wrote {}", path.display()));
        }
        Command::Train { data, test } => {
            let data = data.or(cfg.id_data.clone());
            let data = required(&data, "--data")?;
            let o = cmd_train(&cfg, data, test.as_deref(), &out)?;
            say(format!(
                "wrote {} (best epoch {}, held-out accuracy {:.4})",
                o.model.display(),
                o.report.best_epoch,
                o.report.best_test_acc.unwrap_or(f64::NAN)
            ));
        }
        Command::Extract { model, data } => {
            let model = model.or(cfg.model.clone());
            let path = cmd_extract(required(&model, "--model")?, &data, &out, cfg.eval_batch_size)?;
            say(format!("wrote {}", path.display()));
        }
        Command::Fit {
            embeddings,
            shared_covariance,
        } => {
            cfg.fit.shared_covariance |= shared_covariance;
            let path = cmd_fit(&embeddings, &cfg.fit, &out)?;
            say(format!("wrote {}", path.display()));
        }
        Command::Score {
            stats,
            embeddings,
            data,
            model,
            t_distance,
            t_conf,
            calibrate,
            target_tpr,
        } => {
            let stats = stats.or(cfg.stats.clone());
            let input = match (embeddings, data) {
                (Some(e), None) => ScoreInput::Embeddings(e),
                (None, Some(d)) => {
                    let model = model.or(cfg.model.clone());
                    ScoreInput::Images {
                        model: required(&model, "--model")?.to_path_buf(),
                        data: d,
                    }
                }
                _ => return Err(Error::Config("give exactly one of --embeddings or --data".into())),
            };
            let source = match (t_distance, t_conf, calibrate) {
                (Some(d), Some(c), None) => ThresholdSource::Fixed(Thresholds::new(d, c)?),
                (None, None, Some(e)) => ThresholdSource::Calibrate {
                    embeddings: e,
                    target_tpr: target_tpr.unwrap_or(cfg.target_tpr),
                },
                _ => {
                    return Err(Error::Config(
                        "give --t-distance with --t-conf, or --calibrate EMBEDDINGS".into(),
                    ))
                }
            };
            let metric: Option<Metric> = match &cli.common.metric {
                Some(m) => Some(m.parse()?),
                None => None,
            };
            let o = cmd_score(required(&stats, "--stats")?, &input, &source, metric, &out)?;
            say(format!(
                "wrote {} ({} of {} flagged as outliers)",
                o.scores.display(),
                o.outliers,
                o.total
            ));
        }
        Command::Eval {
            id,
            ood,
            id_name,
            ood_name,
        } => {
            let rows = cmd_eval(&id, &ood, id_name.as_deref(), ood_name.as_deref(), cfg.fit.metric.name(), &out)?;
            let mut stdout = std::io::stdout().lock();
            for r in rows {
                // a closed pipe (e.g. `| head`) is not an error
                let _ = writeln!(stdout, "{:<10} auroc {:.4}  aupr {:.4}", r.score_type, r.auroc, r.aupr);
            }
        }
        Command::Sweep {
            axis,
            values,
            id_data,
            ood_data,
        } => {
            if id_data.is_some() {
                cfg.id_data = id_data;
            }
            if ood_data.is_some() {
                cfg.ood_data = ood_data;
            }
            let rows = cmd_sweep(&cfg, axis, &values, &out)?;
            let mut stdout = std::io::stdout().lock();
            for r in rows {
                let _ = writeln!(
                    stdout,
                    "{}={:<14} {:<10} auroc {:.4}  aupr {:.4}",
                    r.axis, r.value, r.score_type, r.auroc, r.aupr
                );
            }
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
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
