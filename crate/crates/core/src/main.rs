use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cftnet::checkpoint::Checkpoint;
use cftnet::data::{
    augment_dataset, generate_synthetic_dataset, write_augmented, write_dataset, write_pts,
    AugmentationSpec, Scheme, SynthParams,
};
use cftnet::eval::{
    compare_runs, evaluate, reduction_percent, EvalReport, OraclePredictor, PredictionTable,
    Predictor, FAILURE_THRESHOLD, REFERENCE_RESULTS,
};
use cftnet::network::CftNet;
use cftnet::run::{open_dataset, run_training, Algorithm, TrainConfig};
use cftnet::{Error, Result};

/// Coarse-to-fine facial landmark training and evaluation.
///
/// Log verbosity follows RUST_LOG (default: info).
#[derive(Parser)]
#[command(name = "cftnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network (CFT or DT) from a training config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "cft")]
        algo: AlgoArg,
        /// Overrides every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint, a predictions file or the ground-truth oracle.
    Eval {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long, conflicts_with_all = ["predictions", "oracle"])]
        checkpoint: Option<PathBuf>,
        /// CSV written by `predict`.
        #[arg(long, conflicts_with = "oracle")]
        predictions: Option<PathBuf>,
        /// Predict the ground truth itself (sanity check, reports 0.00 %).
        #[arg(long)]
        oracle: bool,
        /// Failure threshold as a fraction of the inter-ocular distance.
        #[arg(long, default_value_t = FAILURE_THRESHOLD)]
        threshold: f64,
        /// Report CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Materialize an augmented dataset with a provenance manifest.
    Augment {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Augmentation spec (TOML); defaults are used without it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write predicted landmarks as `predictions.csv` and `pts/*.pts`.
    Predict {
        #[command(flatten)]
        dataset: DatasetArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic face dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Generator parameters (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Split into `train`, `val` and `test` subdirectories, e.g. `400,50,50`.
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<usize>>,
    },
    /// Compare two evaluation reports; `a` is the baseline.
    Compare {
        #[arg(long, required_unless_present = "reference")]
        a: Option<PathBuf>,
        #[arg(long, required_unless_present = "reference")]
        b: Option<PathBuf>,
        /// Column labels for a and b.
        #[arg(long, value_delimiter = ',', default_values = ["a", "b"])]
        labels: Vec<String>,
        /// Print the full-benchmark reference table instead.
        #[arg(long, conflicts_with_all = ["a", "b"])]
        reference: bool,
    },
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset directory, points file or CSV.
    #[arg(long)]
    dataset: PathBuf,
    /// Built-in scheme (300w-68, cofw-29, synthetic-28) or partition file.
    #[arg(long)]
    partition: Option<String>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AlgoArg {
    Cft,
    Dt,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, algo, seed, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if seed.is_some() {
                cfg.seed = seed;
            }
            let algo = match algo {
                AlgoArg::Cft => Algorithm::Cft,
                AlgoArg::Dt => Algorithm::Dt,
            };
            let result = run_training(&cfg, algo, &out)?;
            for s in &result.outcome.stages {
                println!(
                    "stage {} λ={:<8} epochs {:>4}  best validation loss {:.6} (epoch {})",
                    s.stage, s.lambda, s.epochs_run, s.best_validation, s.best_epoch
                );
            }
            print!("{}", result.report.summary());
            println!("outputs in {}", out.display());
        }
        Command::Eval { dataset, checkpoint, predictions, oracle, threshold, out } => {
            let (samples, _) = open_dataset(&dataset.dataset, dataset.partition.as_deref())?;
            let predictor: Box<dyn Predictor> = match (checkpoint, predictions, oracle) {
                (Some(c), _, _) => Box::new(CftNet::<f32>::from_checkpoint(&Checkpoint::load(&c)?)?),
                (_, Some(p), _) => Box::new(PredictionTable::read(&p)?),
                (_, _, true) => Box::new(OraclePredictor::default()),
                _ => {
                    return Err(Error::usage(
                        "eval needs --checkpoint, --predictions or --oracle",
                    ))
                }
            };
            let report = evaluate(predictor.as_ref(), &samples, threshold)?;
            print!("{}", report.summary());
            if let Some(p) = out {
                if let Some(dir) = p.parent() {
                    mkdir(dir)?;
                }
                report.write(&p)?;
            }
        }
        Command::Augment { dataset, config, out } => {
            let (samples, scheme) = open_dataset(&dataset.dataset, dataset.partition.as_deref())?;
            let spec: AugmentationSpec = match config {
                Some(p) => read_toml(&p)?,
                None => AugmentationSpec::default(),
            };
            let (aug, skips) = augment_dataset(&samples, &spec)?;
            write_augmented(&out, &aug, &skips, &scheme)?;
            println!(
                "{} sources -> {} samples ({} combinations skipped) in {}",
                samples.len(),
                aug.len(),
                skips.len(),
                out.display()
            );
        }
        Command::Predict { dataset, checkpoint, out } => {
            let (samples, _) = open_dataset(&dataset.dataset, dataset.partition.as_deref())?;
            let net = CftNet::<f32>::from_checkpoint(&Checkpoint::load(&checkpoint)?)?;
            let preds = net.predict(&samples)?;
            let pts_dir = out.join("pts");
            mkdir(&pts_dir)?;
            for (s, p) in samples.iter().zip(&preds) {
                write_pts(&pts_dir.join(format!("{}.pts", s.name)), p)?;
            }
            PredictionTable::from_predictions(&samples, preds).write(&out.join("predictions.csv"))?;
            println!("{} predictions written to {}", samples.len(), out.display());
        }
        Command::Synth { count, seed, out, config, split } => {
            let params: SynthParams = match config {
                Some(p) => read_toml(&p)?,
                None => SynthParams::default(),
            };
            let scheme = Scheme::synthetic(params.jaw_points)?;
            let samples = generate_synthetic_dataset(count, seed, &params)?;
            match split {
                None => write_dataset(&out, &samples, &scheme)?,
                Some(parts) => {
                    if parts.len() != 3 || parts.iter().sum::<usize>() != count {
                        return Err(Error::usage(format!(
                            "--split {parts:?} does not add up to --count {count}"
                        )));
                    }
                    let mut start = 0;
                    for (name, n) in ["train", "val", "test"].iter().zip(&parts) {
                        write_dataset(&out.join(name), &samples[start..start + n], &scheme)?;
                        start += n;
                    }
                }
            }
            let p = out.join("synth.toml");
            std::fs::write(&p, toml::to_string(&params).expect("params serialize"))
                .map_err(|e| Error::io(&p, e))?;
            println!("{count} synthetic faces written to {}", out.display());
        }
        Command::Compare { a, b, labels, reference } => {
            if reference {
                println!("{:<12} {:>8} {:>8} {:>13}", "dataset", "DT (%)", "CFT (%)", "reduction (%)");
                for r in REFERENCE_RESULTS {
                    println!(
                        "{:<12} {:>8.2} {:>8.2} {:>13.2}",
                        r.dataset,
                        r.dt,
                        r.cft,
                        reduction_percent(r.dt, r.cft)
                    );
                }
                return Ok(());
            }
            let (a, b) = (a.expect("required by clap"), b.expect("required by clap"));
            if labels.len() != 2 {
                return Err(Error::usage("--labels takes exactly two names"));
            }
            let cmp = compare_runs(&EvalReport::read(&a)?, &EvalReport::read(&b)?)?
                .with_labels(labels[0].clone(), labels[1].clone());
            print!("{}", cmp.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
