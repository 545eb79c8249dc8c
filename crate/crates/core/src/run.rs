//! File-level orchestration shared by the command-line tool: dataset
//! resolution, training configs and complete training runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, AnnotatedImage, Scheme, ANNOTATIONS_FILE};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, FAILURE_THRESHOLD};
use crate::network::{CftNet, NetworkConfig};
use crate::trainer::{
    final_checkpoint_path, train_cft, train_dt, write_step_log, write_train_log, CheckpointPolicy,
    TrainData, TrainOutcome, TrainSchedule,
};

const PARTITION_FILE: &str = "partition.toml";

/// Which training procedure to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Staged coarse-to-fine λ schedule.
    Cft,
    /// Single stage at λ = 0.5 with the same epoch budget.
    Dt,
}

/// Load a dataset given as a directory written by `synth`/`augment`
/// (`annotations.csv` + `partition.toml`), a directory of points files, a
/// points file or a CSV file. `partition` overrides the scheme; without it a
/// `partition.toml` next to the annotations is required.
pub fn open_dataset(path: &Path, partition: Option<&str>) -> Result<(Vec<AnnotatedImage>, Scheme)> {
    let (annotations, root) = locate(path)?;
    let scheme = match partition {
        Some(p) => Scheme::load(p)?,
        None => {
            let f = root.join(PARTITION_FILE);
            if !f.is_file() {
                return Err(Error::usage(format!(
                    "{}: no {PARTITION_FILE} found, pass a partition config",
                    path.display()
                )));
            }
            Scheme::load(&f.to_string_lossy())?
        }
    };
    let samples = load_dataset(&annotations, &root, &scheme)?;
    Ok((samples, scheme))
}

/// Like [`open_dataset`] with a known scheme.
pub fn open_dataset_with(path: &Path, scheme: &Scheme) -> Result<Vec<AnnotatedImage>> {
    let (annotations, root) = locate(path)?;
    load_dataset(&annotations, &root, scheme)
}

fn locate(path: &Path) -> Result<(PathBuf, PathBuf)> {
    if path.is_dir() && path.join(ANNOTATIONS_FILE).is_file() {
        Ok((path.join(ANNOTATIONS_FILE), path.to_path_buf()))
    } else if path.is_dir() {
        Ok((path.to_path_buf(), path.to_path_buf()))
    } else if path.is_file() {
        let parent = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
        Ok((path.to_path_buf(), parent))
    } else {
        Err(Error::usage(format!("dataset {} does not exist", path.display())))
    }
}

/// Dataset locations of a training run. Relative paths are resolved against
/// the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    /// Held-out set for convergence checks; without it a seeded
    /// `validation_fraction` of `train` is held out.
    #[serde(default)]
    pub validation: Option<PathBuf>,
    /// Set evaluated after training; falls back to the validation set.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Built-in scheme name or partition config path.
    #[serde(default)]
    pub partition: Option<String>,
    #[serde(default = "default_fraction")]
    pub validation_fraction: f64,
}

fn default_fraction() -> f64 {
    0.1
}

/// A training config file.
///
/// ```toml
/// seed = 7                      # optional, overrides network and schedule seeds
/// [data]
/// train = "synth/train"
/// validation = "synth/val"
/// test = "synth/test"
/// [network]                     # NetworkConfig; landmark fields default to the partition
/// block_channels = [8, 16, 32, 64]
/// [schedule]                    # TrainSchedule
/// max_epochs_per_stage = 20
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub network: toml::Table,
    #[serde(default)]
    pub schedule: TrainSchedule,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("training config: {e}")))?;
        cfg.schedule.validate()?;
        Ok(cfg)
    }

    /// Load and resolve data paths relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data.train);
        cfg.data.validation.as_mut().map(fix);
        cfg.data.test.as_mut().map(fix);
        if let Some(part) = &mut cfg.data.partition {
            if Scheme::builtin(part).is_none() && Path::new(part.as_str()).is_relative() {
                *part = base.join(part.as_str()).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    /// Network config with landmark count and principal subset taken from
    /// `scheme` unless given explicitly (then they must agree).
    pub fn network_config(&self, scheme: &Scheme) -> Result<NetworkConfig> {
        let mut table = self.network.clone();
        table
            .entry("n_landmarks")
            .or_insert_with(|| toml::Value::Integer(scheme.n_landmarks as i64));
        table.entry("principal_indices").or_insert_with(|| {
            toml::Value::Array(scheme.principal.iter().map(|&i| toml::Value::Integer(i as i64)).collect())
        });
        if let Some(seed) = self.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        let cfg = NetworkConfig::from_toml(&toml::to_string(&table).expect("table serializes"))?;
        if cfg.n_landmarks != scheme.n_landmarks || cfg.principal_indices != scheme.principal {
            return Err(Error::config(format!(
                "network: landmark layout disagrees with partition {}",
                scheme.name
            )));
        }
        Ok(cfg)
    }

    pub fn effective_schedule(&self) -> TrainSchedule {
        let mut s = self.schedule.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }
}

/// Everything a finished training run produced.
pub struct RunResult {
    pub net: CftNet<f32>,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Train with `algo`, writing `train_log.csv`, `steps.csv`, stage and final
/// checkpoints, `eval_report.csv` and the resolved `config.toml` to `out`.
pub fn run_training(cfg: &TrainConfig, algo: Algorithm, out: &Path) -> Result<RunResult> {
    let part = cfg.data.partition.as_deref();
    let (train, scheme) = open_dataset(&cfg.data.train, part)?;
    let net_cfg = cfg.network_config(&scheme)?;
    let schedule = cfg.effective_schedule();
    let (data, val_samples) = match &cfg.data.validation {
        Some(v) => {
            let val = open_dataset_with(v, &scheme)?;
            (TrainData::<f32>::new(&train, &val, &net_cfg)?, val)
        }
        None => {
            let (tr, va) = crate::trainer::holdout_split(train.len(), cfg.data.validation_fraction, schedule.seed)?;
            let pick = |idx: &[usize]| idx.iter().map(|&i| train[i].clone()).collect::<Vec<_>>();
            let (tr, va) = (pick(&tr), pick(&va));
            (TrainData::new(&tr, &va, &net_cfg)?, va)
        }
    };
    let test = match &cfg.data.test {
        Some(t) => open_dataset_with(t, &scheme)?,
        None => val_samples,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut resolved = cfg.clone();
    resolved.schedule = schedule.clone();
    let p = out.join("config.toml");
    std::fs::write(&p, toml::to_string(&resolved).expect("config serializes")).map_err(|e| Error::io(&p, e))?;

    let mut net = CftNet::<f32>::build(net_cfg)?;
    let ckpt = CheckpointPolicy::in_dir(out);
    let outcome = match algo {
        Algorithm::Cft => train_cft(&mut net, &data, &schedule, &ckpt)?,
        Algorithm::Dt => train_dt(&mut net, &data, &schedule, &ckpt)?,
    };
    net.to_checkpoint().save(&final_checkpoint_path(out))?;
    write_train_log(&out.join("train_log.csv"), &outcome.history)?;
    write_step_log(&out.join("steps.csv"), &outcome.steps)?;
    let report = evaluate(&net, &test, FAILURE_THRESHOLD)?;
    report.write(&out.join("eval_report.csv"))?;
    Ok(RunResult { net, outcome, report })
}
