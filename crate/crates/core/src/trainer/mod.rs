//! Coarse-to-fine staged training and the direct-training baseline.
//!
//! Each stage trains the shared parameters with SGD at a fixed λ until the
//! validation loss stops improving, then restores the stage's best
//! parameters and hands them to the next stage. Momentum buffers carry
//! over between stages.

mod log;
mod schedule;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{crop_and_encode, AnnotatedImage};
use crate::error::{Error, Result};
use crate::loss::{multi_head_loss, LossBreakdown, SubsetTargets};
use crate::network::{CftNet, NetworkConfig};
use crate::par;
use crate::tensor::{Mode, Scalar, Tape, Tensor};

pub use self::log::{write_step_log, write_train_log};
pub use schedule::{
    lambda_for_stage, Convergence, ConvergenceTracker, OptimizerConfig, TrainSchedule, Verdict,
};

/// `v ← μ·v + g + wd·θ`, `θ ← θ − lr·v` for every parameter tensor.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    velocity: &mut [Tensor<T>],
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::config(format!(
            "sgd: {} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::config(format!(
                "sgd: parameter {i} has shape {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(format!(
                "sgd: gradient of parameter {i} is {:?} at element {j}",
                g.data()[j]
            )));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv + weight_decay * *pv;
            *pv = *pv - lr * *vv;
        }
    }
    Ok(())
}

/// Network inputs and targets of a sample set, cropped once up front.
#[derive(Clone, Debug)]
pub struct EncodedSet<T> {
    sample_len: usize,
    shape: [usize; 3],
    inputs: Vec<T>,
    targets: Vec<SubsetTargets<T>>,
}

impl<T: Scalar> EncodedSet<T> {
    /// Crop and encode `samples` for a network with `config`. The samples'
    /// scheme must match the config's landmark count and principal subset.
    pub fn new(samples: &[AnnotatedImage], config: &NetworkConfig) -> Result<Self> {
        for s in samples {
            let sch = &s.landmarks.scheme;
            if sch.n_landmarks != config.n_landmarks || sch.principal != config.principal_indices {
                return Err(Error::config(format!(
                    "{}: scheme {} ({} landmarks) does not match the network ({} landmarks, principal {:?})",
                    s.name, sch.name, sch.n_landmarks, config.n_landmarks, config.principal_indices
                )));
            }
        }
        if config.channels() != 3 {
            return Err(Error::config("input_size: images are RGB, channels must be 3"));
        }
        let size = (config.height(), config.width());
        let encoded = par::map_range(samples.len(), |i| crop_and_encode::<T>(&samples[i], size));
        let sample_len = 3 * size.0 * size.1;
        let mut inputs = Vec::with_capacity(samples.len() * sample_len);
        let mut targets = Vec::with_capacity(samples.len());
        for e in encoded {
            let (x, t) = e?;
            inputs.extend_from_slice(x.data());
            targets.push(t);
        }
        Ok(EncodedSet {
            sample_len,
            shape: [3, size.0, size.1],
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[SubsetTargets<T>] {
        &self.targets
    }

    /// `[B, 3, H, W]` input batch and targets for the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<T>, Vec<SubsetTargets<T>>) {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len);
        for &i in idx {
            data.extend_from_slice(&self.inputs[i * self.sample_len..(i + 1) * self.sample_len]);
        }
        let [c, h, w] = self.shape;
        let x = Tensor::new(vec![idx.len(), c, h, w], data).expect("batch shape");
        (x, idx.iter().map(|&i| self.targets[i].clone()).collect())
    }
}

/// Deterministically hold out `ceil(fraction · n)` of `n` indices.
/// Returns `(train, validation)`, both ascending.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("validation_fraction: must lie in (0, 1), got {fraction}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64) * fraction).ceil() as usize;
    let mut val = idx[..n_val.min(n)].to_vec();
    let mut train = idx[n_val.min(n)..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Training and validation sets.
#[derive(Clone, Debug)]
pub struct TrainData<T> {
    pub train: EncodedSet<T>,
    pub validation: EncodedSet<T>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(train: &[AnnotatedImage], validation: &[AnnotatedImage], config: &NetworkConfig) -> Result<Self> {
        Ok(TrainData {
            train: EncodedSet::new(train, config)?,
            validation: EncodedSet::new(validation, config)?,
        })
    }

    /// Split `samples` with [`holdout_split`] and encode both parts.
    pub fn with_holdout(samples: &[AnnotatedImage], fraction: f64, seed: u64, config: &NetworkConfig) -> Result<Self> {
        let (tr, va) = holdout_split(samples.len(), fraction, seed)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
        Self::new(&pick(&tr), &pick(&va), config)
    }
}

/// One row of the per-epoch training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stage: usize,
    pub lambda: f64,
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean of the batch total losses during the epoch.
    pub train_loss: f64,
    pub validation: LossBreakdown,
    pub improved: bool,
}

/// Total loss of one optimizer step, before the update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub stage: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// `max_epochs` was 0.
    NoTraining,
    Converged,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs_run: usize,
    /// Validation loss before the first epoch of the stage.
    pub initial_validation: f64,
    pub best_validation: f64,
    /// 0 when no epoch beat the initial parameters.
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Optimizer and bookkeeping state carried through all stages.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub stage: usize,
    pub lambda: f64,
    pub epoch: usize,
    pub best_validation: f64,
    pub velocity: Vec<Tensor<T>>,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(net: &CftNet<T>, seed: u64) -> Self {
        TrainState {
            stage: 0,
            lambda: f64::NAN,
            epoch: 0,
            best_validation: f64::INFINITY,
            velocity: net.parameters().iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
            steps: Vec::new(),
        }
    }
}

/// Stage reports plus the logs of a complete run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub stages: Vec<StageReport>,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

const EVAL_BATCH: usize = 64;

/// Infer-mode loss over a whole set at `lambda`, as the sample-weighted mean
/// of batch losses.
pub fn dataset_loss<T: Scalar>(net: &CftNet<T>, set: &EncodedSet<T>, lambda: f64, head_weights: &[f64; 4]) -> Result<LossBreakdown> {
    if set.is_empty() {
        return Err(Error::config("cannot evaluate the loss of an empty set"));
    }
    let hw: Vec<T> = head_weights.iter().map(|&w| T::from_f64_lossy(w)).collect();
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut acc = LossBreakdown {
        lambda,
        ..Default::default()
    };
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, targets) = set.batch(chunk);
        let mut tape = Tape::new();
        let input = tape.constant(x);
        let pass = net.forward_infer(&mut tape, input)?;
        let (_, b) = multi_head_loss(&mut tape, &pass.heads, &targets, T::from_f64_lossy(lambda), &hw)?;
        let w = chunk.len() as f64 / set.len() as f64;
        if acc.heads.is_empty() {
            acc.heads = vec![Default::default(); b.heads.len()];
        }
        for (a, h) in acc.heads.iter_mut().zip(&b.heads) {
            a.e_b += w * h.e_b;
            a.e_r += w * h.e_r;
            a.e += w * h.e;
        }
        acc.total += w * b.total;
    }
    if !acc.total.is_finite() {
        return Err(Error::numeric(format!("validation loss is {}", acc.total)));
    }
    Ok(acc)
}

/// Where to write checkpoints during training.
#[derive(Clone, Debug, Default)]
pub struct CheckpointPolicy {
    pub dir: Option<PathBuf>,
}

impl CheckpointPolicy {
    pub fn none() -> Self {
        CheckpointPolicy { dir: None }
    }

    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        CheckpointPolicy { dir: Some(dir.into()) }
    }

    fn save<T: Scalar>(&self, net: &CftNet<T>, name: &str) -> Result<()> {
        match &self.dir {
            Some(d) => net.to_checkpoint().save(&d.join(name)),
            None => Ok(()),
        }
    }
}

/// Settings of one stage.
#[derive(Clone, Copy, Debug)]
pub struct StageSpec {
    pub stage: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
}

/// Train until the convergence policy fires or `max_epochs` is reached,
/// then restore the parameters with the best validation loss.
pub fn train_stage<T: Scalar>(
    net: &mut CftNet<T>,
    data: &TrainData<T>,
    spec: StageSpec,
    schedule: &TrainSchedule,
    state: &mut TrainState<T>,
    checkpoints: &CheckpointPolicy,
) -> Result<StageReport> {
    if data.train.len() < 2 {
        return Err(Error::config("training set needs at least 2 samples"));
    }
    if data.validation.is_empty() {
        return Err(Error::config("validation set is empty"));
    }
    let opt = schedule.optimizer;
    let hw: Vec<T> = schedule.head_weights.iter().map(|&w| T::from_f64_lossy(w)).collect();
    let lambda_t = T::from_f64_lossy(spec.lambda);
    let (lr, mu, wd) = (
        T::from_f64_lossy(spec.learning_rate),
        T::from_f64_lossy(opt.momentum),
        T::from_f64_lossy(opt.weight_decay),
    );
    state.stage = spec.stage;
    state.lambda = spec.lambda;
    state.epoch = 0;

    let initial = dataset_loss(net, &data.validation, spec.lambda, &schedule.head_weights)?.total;
    let mut tracker = ConvergenceTracker::new(schedule.convergence, initial);
    state.best_validation = initial;
    let mut best = net.snapshot();
    let mut best_epoch = 0;
    let mut stop = if spec.max_epochs == 0 { StopReason::NoTraining } else { StopReason::MaxEpochs };
    ::log::info!(
        "stage {} λ={} lr={}: initial validation loss {initial:.6}",
        spec.stage,
        spec.lambda,
        spec.learning_rate
    );

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=spec.max_epochs {
        state.epoch = epoch;
        order.shuffle(&mut state.rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (step, chunk) in order.chunks(opt.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (x, targets) = data.train.batch(chunk);
            let mut tape = Tape::new();
            let input = tape.constant(x);
            let pass = net.forward(&mut tape, input, Mode::Train)?;
            let (root, breakdown) = multi_head_loss(&mut tape, &pass.heads, &targets, lambda_t, &hw)?;
            tape.backward(root)?;
            let grads = pass
                .params
                .iter()
                .map(|&v| tape.grad(v).ok_or_else(|| Error::numeric("parameter without gradient")))
                .collect::<Result<Vec<_>>>()?;
            sgd_step(&mut net.parameters_mut(), &grads, &mut state.velocity, lr, mu, wd)?;
            state.steps.push(StepRecord {
                stage: spec.stage,
                epoch,
                step,
                loss: breakdown.total,
            });
            loss_sum += breakdown.total * chunk.len() as f64;
            loss_count += chunk.len();
        }
        let validation = dataset_loss(net, &data.validation, spec.lambda, &schedule.head_weights)?;
        let verdict = tracker.observe(validation.total);
        let improved = verdict == Verdict::Improved;
        if improved {
            best = net.snapshot();
            best_epoch = epoch;
            state.best_validation = validation.total;
            checkpoints.save(net, &format!("stage{}_best.ckpt", spec.stage))?;
        }
        let train_loss = loss_sum / loss_count.max(1) as f64;
        ::log::info!(
            "stage {} epoch {epoch}: train {train_loss:.6} validation {:.6}{}",
            spec.stage,
            validation.total,
            if improved { " *" } else { "" }
        );
        state.history.push(EpochRecord {
            stage: spec.stage,
            lambda: spec.lambda,
            epoch,
            learning_rate: spec.learning_rate,
            train_loss,
            validation,
            improved,
        });
        if verdict == Verdict::Converged {
            stop = StopReason::Converged;
            break;
        }
    }
    net.restore(&best)?;
    checkpoints.save(net, &format!("stage{}_end.ckpt", spec.stage))?;
    Ok(StageReport {
        stage: spec.stage,
        lambda: spec.lambda,
        learning_rate: spec.learning_rate,
        epochs_run: state.epoch,
        initial_validation: initial,
        best_validation: tracker.best(),
        best_epoch,
        stop,
    })
}

fn run_stages<T: Scalar>(
    net: &mut CftNet<T>,
    data: &TrainData<T>,
    schedule: &TrainSchedule,
    stages: &[StageSpec],
    checkpoints: &CheckpointPolicy,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if let Some(dir) = &checkpoints.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut state = TrainState::new(net, schedule.seed);
    let mut reports = Vec::with_capacity(stages.len());
    for &spec in stages {
        reports.push(train_stage(net, data, spec, schedule, &mut state, checkpoints)?);
    }
    Ok(TrainOutcome {
        stages: reports,
        history: state.history,
        steps: state.steps,
    })
}

/// Coarse-to-fine training: `k` stages at `lambda_for_stage(λ₀, k, i)`, the
/// learning rate decaying by `stage_lr_decay` per stage.
pub fn train_cft<T: Scalar>(
    net: &mut CftNet<T>,
    data: &TrainData<T>,
    schedule: &TrainSchedule,
    checkpoints: &CheckpointPolicy,
) -> Result<TrainOutcome> {
    let opt = schedule.optimizer;
    let stages = schedule
        .lambdas()?
        .into_iter()
        .enumerate()
        .map(|(i, lambda)| StageSpec {
            stage: i,
            lambda,
            learning_rate: opt.learning_rate * opt.stage_lr_decay.powi(i as i32),
            max_epochs: schedule.max_epochs_per_stage,
        })
        .collect::<Vec<_>>();
    run_stages(net, data, schedule, &stages, checkpoints)
}

/// Direct training: one stage at λ = 0.5 with the whole CFT epoch budget
/// (`k · max_epochs_per_stage`) and the base learning rate.
pub fn train_dt<T: Scalar>(
    net: &mut CftNet<T>,
    data: &TrainData<T>,
    schedule: &TrainSchedule,
    checkpoints: &CheckpointPolicy,
) -> Result<TrainOutcome> {
    let stage = StageSpec {
        stage: 0,
        lambda: 0.5,
        learning_rate: schedule.optimizer.learning_rate,
        max_epochs: schedule.k * schedule.max_epochs_per_stage,
    };
    run_stages(net, data, schedule, &[stage], checkpoints)
}

/// Path helper for the conventional file names of a training run.
pub fn final_checkpoint_path(dir: &Path) -> PathBuf {
    dir.join("final.ckpt")
}
