use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `λ_i = λ₀ − (λ₀ − 0.5)/(k − 1) · i`.
pub fn lambda_for_stage(lambda0: f64, k: usize, i: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::config(format!("k: need at least 2 stages, got {k}")));
    }
    if !(lambda0 > 0.5 && lambda0 < 1.0) {
        return Err(Error::config(format!("lambda0: must lie in (0.5, 1), got {lambda0}")));
    }
    if i >= k {
        return Err(Error::config(format!("stage {i} out of range for k = {k}")));
    }
    Ok(lambda0 - (lambda0 - 0.5) / (k - 1) as f64 * i as f64)
}

/// Early stopping on validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Convergence {
    /// Consecutive non-improving epochs tolerated.
    pub patience: usize,
    /// An epoch improves when `loss < best · (1 − min_rel_improvement)`.
    pub min_rel_improvement: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence {
            patience: 5,
            min_rel_improvement: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Learning rate of stage `i` is `learning_rate · stage_lr_decay^i`.
    pub stage_lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 2e-5,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            stage_lr_decay: 0.5,
        }
    }
}

/// Staged training settings.
///
/// ```toml
/// lambda0 = 0.995
/// k = 3
/// max_epochs_per_stage = 100
/// head_weights = [1.0, 1.0, 1.0, 1.0]
/// seed = 0
/// [convergence]
/// patience = 5
/// min_rel_improvement = 0.001
/// [optimizer]
/// learning_rate = 2e-5
/// momentum = 0.9
/// weight_decay = 0.0005
/// batch_size = 16
/// stage_lr_decay = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub lambda0: f64,
    pub k: usize,
    pub max_epochs_per_stage: usize,
    pub convergence: Convergence,
    pub optimizer: OptimizerConfig,
    /// Weight of each supervisory head in the total loss.
    pub head_weights: [f64; 4],
    /// Seeds batch shuffling.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            lambda0: 0.995,
            k: 3,
            max_epochs_per_stage: 100,
            convergence: Convergence::default(),
            optimizer: OptimizerConfig::default(),
            head_weights: [1.0; 4],
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        lambda_for_stage(self.lambda0, self.k, 0)?;
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::config("optimizer.learning_rate: must be positive"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config("optimizer.momentum: must lie in [0, 1)"));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return Err(Error::config("optimizer.weight_decay: must be non-negative"));
        }
        if o.batch_size < 2 {
            return Err(Error::config("optimizer.batch_size: batch norm needs at least 2"));
        }
        if !(o.stage_lr_decay > 0.0 && o.stage_lr_decay.is_finite()) {
            return Err(Error::config("optimizer.stage_lr_decay: must be positive"));
        }
        if !(self.convergence.min_rel_improvement >= 0.0 && self.convergence.min_rel_improvement < 1.0) {
            return Err(Error::config("convergence.min_rel_improvement: must lie in [0, 1)"));
        }
        if self.head_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("head_weights: must be finite and non-negative"));
        }
        Ok(())
    }

    /// Stage λ values `λ_0 … λ_{k−1}`.
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        (0..self.k).map(|i| lambda_for_stage(self.lambda0, self.k, i)).collect()
    }
}

/// What the convergence policy says after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Stalled,
    Converged,
}

/// Tracks the best validation loss of one stage.
#[derive(Clone, Debug)]
pub struct ConvergenceTracker {
    policy: Convergence,
    best: f64,
    bad_epochs: usize,
}

impl ConvergenceTracker {
    pub fn new(policy: Convergence, initial: f64) -> Self {
        ConvergenceTracker {
            policy,
            best: initial,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> Verdict {
        if loss < self.best * (1.0 - self.policy.min_rel_improvement) {
            self.best = loss;
            self.bad_epochs = 0;
            Verdict::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.policy.patience {
                Verdict::Converged
            } else {
                Verdict::Stalled
            }
        }
    }
}
