use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accentnet::pipeline::{
    self, evaluate_checkpoint, extract, format_predictions, inspect, predict, preprocess, PipelineError,
    PreprocessOptions, RunConfig, Split,
};
use accentnet::train::TaskWeights;
use clap::{Args, Parser, Subcommand};

/// Accent classification: preprocess audio, extract MFCCs, train, evaluate
/// and inspect DenseNet-family models.
#[derive(Parser, Debug)]
#[command(name = "accentnet", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Feature cache root (default: $ACCENT_CACHE_DIR, then ./cache).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Standardized audio and split manifests.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Standardize the clips of a manifest, split 6:2:2 and augment.
    Preprocess {
        manifest: PathBuf,
        /// Noisy copies per training clip.
        #[arg(long)]
        augment: Option<usize>,
        /// Noise standard deviation in 16-bit LSB units.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        keep_going: bool,
    },
    /// Compute MFCC feature caches for the split manifests (or one manifest).
    Extract {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        keep_going: bool,
    },
    /// Train a model into a new run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split and write reports.
    Evaluate {
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        reports_dir: Option<PathBuf>,
    },
    /// Predict every head's label for one WAV file.
    Predict { checkpoint: PathBuf, wav: PathBuf },
    /// Print a model's architecture table and parameter count.
    Inspect {
        model: String,
        /// Replace the heads with one classifier of this many classes.
        #[arg(long)]
        classes: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated loss weights (accent,gender,age or one per head).
    #[arg(long, value_delimiter = ',')]
    task_weights: Option<Vec<f64>>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
    /// Continue from a checkpoint's epoch and optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.cache_dir {
        cfg.cache_dir = Some(d.clone());
    }
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn require_file(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::usage(format!("{what} {} does not exist", path.display())))
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Preprocess {
            manifest,
            augment,
            sigma,
            keep_going,
        } => {
            require_file(&manifest, "manifest")?;
            cfg.augment = augment.unwrap_or(cfg.augment);
            cfg.noise_sigma_lsb = sigma.unwrap_or(cfg.noise_sigma_lsb);
            let opts = PreprocessOptions {
                augment: cfg.augment,
                noise_sigma_lsb: cfg.noise_sigma_lsb,
                seed: cfg.seed,
                keep_going,
            };
            let summary = preprocess(&manifest, &cfg.data_dir, &opts)?;
            println!("{}", summary.to_text());
        }
        Command::Extract { manifest, keep_going } => {
            let manifests = match manifest {
                Some(m) => {
                    require_file(&m, "manifest")?;
                    vec![m]
                }
                None => {
                    let found: Vec<PathBuf> = [Split::Train, Split::Validation, Split::Test]
                        .iter()
                        .map(|s| cfg.data_dir.join(s.manifest_name()))
                        .filter(|p| p.exists())
                        .collect();
                    if found.is_empty() {
                        return Err(PipelineError::usage(format!(
                            "no split manifests in {} (run preprocess or pass --manifest)",
                            cfg.data_dir.display()
                        )));
                    }
                    found
                }
            };
            let cache = cfg.cache_root();
            for m in manifests {
                let summary = extract(&m, &cache, &cfg.dsp, keep_going)?;
                println!("{}: {}", m.display(), summary.to_text());
            }
        }
        Command::Train(args) => {
            if let Some(m) = args.model {
                cfg.model = m;
            }
            if let Some(e) = args.epochs {
                cfg.train.epochs = e;
            }
            if let Some(b) = args.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(lr) = args.lr {
                cfg.train.learning_rate = lr;
            }
            if let Some(w) = args.task_weights {
                cfg.train.task_weights = TaskWeights::new(w).map_err(|e| PipelineError::usage(e.to_string()))?;
            }
            if let Some(d) = args.runs_dir {
                cfg.runs_dir = d;
            }
            cfg.validate()?;
            let t = &cfg.train;
            println!(
                "model={} epochs={} batch_size={} learning_rate={} seed={} task_weights={:?}",
                cfg.model,
                t.epochs,
                t.batch_size,
                t.learning_rate,
                cfg.seed,
                t.task_weights.as_slice()
            );
            println!("config hash {}", cfg.hash());
            if args.dry_run {
                return Ok(());
            }
            if let Some(r) = &args.resume {
                require_file(r, "checkpoint")?;
            }
            let out = pipeline::train(&cfg, args.resume.as_deref())?;
            if let Some(r) = out.log.last() {
                println!("epoch {}: train loss {:.6}", r.epoch, r.train_loss);
            }
            if let (Some(e), Some(m)) = (out.best_epoch, out.best_metric) {
                println!("best accent accuracy {m:.4} at epoch {e}");
            }
            println!("run directory {}", out.run_dir.display());
        }
        Command::Evaluate {
            checkpoint,
            split,
            beta,
            reports_dir,
        } => {
            let split: Split = split.parse()?;
            require_file(&checkpoint, "checkpoint")?;
            if let Some(b) = beta {
                cfg.beta = b;
            }
            if let Some(d) = reports_dir {
                cfg.reports_dir = d;
            }
            for r in evaluate_checkpoint(&checkpoint, split, &cfg)? {
                println!(
                    "{} ({split}, n = {}): accuracy {:.4}, micro F{} {:.4}, macro F{} {:.4}",
                    r.task, r.samples, r.accuracy, r.beta, r.micro_f_beta, r.beta, r.macro_f_beta
                );
            }
            println!("reports written to {}", cfg.reports_dir.display());
        }
        Command::Predict { checkpoint, wav } => {
            require_file(&checkpoint, "checkpoint")?;
            require_file(&wav, "audio file")?;
            print!("{}", format_predictions(&predict(&checkpoint, &wav, &cfg)?));
        }
        Command::Inspect { model, classes } => {
            print!("{}", inspect(&model, classes)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
