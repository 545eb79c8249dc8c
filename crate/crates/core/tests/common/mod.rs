//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use cftnet::data::{generate_synthetic_dataset, AnnotatedImage, Scheme, SynthParams};
use cftnet::loss::SubsetTargets;
use cftnet::network::NetworkConfig;
use cftnet::tensor::{Tape, Tensor, Var};
use cftnet::trainer::TrainSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `|a − b| / max(|a|, |b|, REL_FLOOR)`
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates where the one-sided slopes disagree (a kink within ±h).
    pub skipped: usize,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            max_rel: self.max_rel.max(o.max_rel),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

/// Compare tape gradients of the scalar `f(inputs)` with central differences.
///
/// `coords` selects `(input, element)` pairs; `None` checks every element.
/// With `skip_kinks`, coordinates whose forward and backward one-sided
/// slopes differ by more than `1e-2` relative are reported as skipped
/// instead of compared.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, coords: Option<&[(usize, usize)]>, skip_kinks: bool) -> GradCheck
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = f(&mut tape, &vars);
    tape.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or(vec![0.0; t.len()], |g| g.data().to_vec()))
        .collect();

    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let r = f(&mut tape, &vars);
        tape.value(r).data()[0]
    };
    let f0 = if skip_kinks { eval(inputs) } else { 0.0 };
    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };
    let mut out = GradCheck::default();
    let mut xs = inputs.to_vec();
    for &(i, j) in coords {
        let orig = xs[i].data()[j];
        xs[i].data_mut()[j] = orig + FD_STEP;
        let fp = eval(&xs);
        xs[i].data_mut()[j] = orig - FD_STEP;
        let fm = eval(&xs);
        xs[i].data_mut()[j] = orig;
        if skip_kinks {
            let (fwd, bwd) = ((fp - f0) / FD_STEP, (f0 - fm) / FD_STEP);
            if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(REL_FLOOR) {
                out.skipped += 1;
                continue;
            }
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        out.max_rel = out.max_rel.max(rel_err(analytic[i][j], numeric));
        out.checked += 1;
    }
    out
}

/// `λ₀ − (λ₀ − 0.5)·i/(k − 1)` written as a linear interpolation.
pub fn lambda_oracle(lambda0: f64, k: usize, i: usize) -> f64 {
    let t = i as f64 / (k - 1) as f64;
    lambda0 * (1.0 - t) + 0.5 * t
}

/// Head outputs `(principal, elaborate)` as flat row-major `[N, W]` arrays.
pub type HeadOutputs = (Vec<f64>, Vec<f64>);

/// Scalar-loop evaluation of the summed, batch-averaged multi-head loss.
pub fn brute_force_loss(heads: &[HeadOutputs], targets: &[SubsetTargets<f64>], lambda: f64, weights: &[f64]) -> f64 {
    let n = targets.len();
    let mut total = 0.0;
    for (h, (pb, pr)) in heads.iter().enumerate() {
        let mut head = 0.0;
        for (s, t) in targets.iter().enumerate() {
            let wb = t.principal.len();
            let wr = t.elaborate.len();
            let mut eb = 0.0;
            for j in 0..wb {
                let d = pb[s * wb + j] - t.principal[j];
                eb += d * d;
            }
            let mut er = 0.0;
            for j in 0..wr {
                let d = pr[s * wr + j] - t.elaborate[j];
                er += d * d;
            }
            let dd = 2.0 * t.interocular * t.interocular;
            head += lambda * eb / dd + (1.0 - lambda) * er / dd;
        }
        total += weights[h] * head / n as f64;
    }
    total
}

pub const TOY_DATA_SEED: u64 = 2024;

/// 500 synthetic faces: 400 train, 50 validation, 50 test.
pub fn toy_dataset() -> (Vec<AnnotatedImage>, Vec<AnnotatedImage>, Vec<AnnotatedImage>) {
    let all = generate_synthetic_dataset(500, TOY_DATA_SEED, &SynthParams::default()).unwrap();
    (all[..400].to_vec(), all[400..450].to_vec(), all[450..].to_vec())
}

/// Reduced network for the synthetic scheme.
pub fn toy_network(seed: u64) -> NetworkConfig {
    let scheme = Scheme::synthetic(8).unwrap();
    NetworkConfig {
        block_channels: [8, 16, 32, 64],
        n_landmarks: scheme.n_landmarks,
        principal_indices: scheme.principal,
        seed,
        ..Default::default()
    }
}

/// λ₀ = 0.995, k = 3, 20 epochs per stage (60 in total). The learning rate
/// is held constant across stages so that CFT and DT runs differ only in λ.
pub fn toy_schedule(seed: u64) -> TrainSchedule {
    let mut s = TrainSchedule {
        lambda0: 0.995,
        k: 3,
        max_epochs_per_stage: 20,
        seed,
        ..Default::default()
    };
    s.optimizer.learning_rate = 1e-4;
    s.optimizer.batch_size = 16;
    s.optimizer.stage_lr_decay = 1.0;
    s
}
