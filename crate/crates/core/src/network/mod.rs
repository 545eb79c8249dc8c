//! The landmark regression network.
//!
//! Four blocks of `conv → BN → ReLU → conv → BN → ReLU → 2x2 max-pool`.
//! Every pool feeds a supervisory head pair (principal / elaborate FC
//! layers): heads 1–3 read the flattened pool map directly, head 4 reads it
//! through a 256-unit trunk FC. Trunk and head outputs stay linear. Head 4 is
//! the prediction; heads 1–3 only exist to add supervision.

mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Mode, Scalar, Tape, Tensor, Var};

pub use config::{ConvKernel, NetworkConfig, ShapePlan, PRINCIPAL_68};

/// Weight and bias of a fully connected or convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(weight: &[usize], outputs: usize) -> Self {
        Layer {
            weight: Tensor::zeros(weight),
            bias: Tensor::zeros(&[outputs]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub principal: Layer<T>,
    pub elaborate: Layer<T>,
}

/// Tape handles of one head pair's outputs, `[N, 2·|P|]` and `[N, 2·(L−|P|)]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadPair {
    pub principal: Var,
    pub elaborate: Var,
}

/// Result of a forward pass: head pairs in pool order plus the tape handle
/// of every parameter, in [`CftNet::parameters`] order.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub heads: Vec<HeadPair>,
    pub params: Vec<Var>,
}

impl ForwardPass {
    /// The prediction head pair.
    pub fn prediction(&self) -> HeadPair {
        *self.heads.last().expect("four heads")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CftNet<T> {
    config: NetworkConfig,
    plan: ShapePlan,
    convs: Vec<Layer<T>>,
    norms: Vec<BatchNormState<T>>,
    trunk: Layer<T>,
    heads: Vec<Head<T>>,
}

impl<T: Scalar> CftNet<T> {
    /// Allocate the topology for `config` and initialize it from `config.seed`.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        let plan = config.validate()?;
        let k = config.conv_kernel;
        let mut convs = Vec::with_capacity(8);
        let mut norms = Vec::with_capacity(8);
        let mut in_ch = config.channels();
        for &out_ch in &config.block_channels {
            for _ in 0..2 {
                convs.push(Layer::zeros(&[out_ch, in_ch, k.kh, k.kw], out_ch));
                norms.push(BatchNormState::new(out_ch));
                in_ch = out_ch;
            }
        }
        let (wb, wr) = config.head_widths();
        let trunk = Layer::zeros(&[config.fc_units, plan.head_inputs[3]], config.fc_units);
        let heads = (0..4)
            .map(|i| {
                let fan_in = if i < 3 { plan.head_inputs[i] } else { config.fc_units };
                Head {
                    principal: Layer::zeros(&[wb, fan_in], wb),
                    elaborate: Layer::zeros(&[wr, fan_in], wr),
                }
            })
            .collect();
        let seed = config.seed;
        let mut net = CftNet {
            config,
            plan,
            convs,
            norms,
            trunk,
            heads,
        };
        net.init_parameters(seed);
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn shape_plan(&self) -> &ShapePlan {
        &self.plan
    }

    pub fn norms(&self) -> &[BatchNormState<T>] {
        &self.norms
    }

    /// Weights ~ N(0, 1)·`init_scale`, biases 0, BN γ = 1 and β = 0, running
    /// statistics reset. Draws happen in parameter order from one seeded stream.
    pub fn init_parameters(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = self.config.init_scale;
        let mut fill = |t: &mut Tensor<T>| {
            for v in t.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = T::from_f64_lossy(z * scale);
            }
        };
        for (conv, bn) in self.convs.iter_mut().zip(&mut self.norms) {
            fill(&mut conv.weight);
            conv.bias.data_mut().fill(T::zero());
            *bn = BatchNormState::new(bn.channels());
        }
        fill(&mut self.trunk.weight);
        self.trunk.bias.data_mut().fill(T::zero());
        for head in &mut self.heads {
            for layer in [&mut head.principal, &mut head.elaborate] {
                fill(&mut layer.weight);
                layer.bias.data_mut().fill(T::zero());
            }
        }
    }

    /// Trainable tensors with their names, in a fixed order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, (conv, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            out.push((format!("conv{}.weight", i + 1), &conv.weight));
            out.push((format!("conv{}.bias", i + 1), &conv.bias));
            out.push((format!("bn{}.gamma", i + 1), &bn.gamma));
            out.push((format!("bn{}.beta", i + 1), &bn.beta));
        }
        out.push(("trunk.weight".into(), &self.trunk.weight));
        out.push(("trunk.bias".into(), &self.trunk.bias));
        for (i, head) in self.heads.iter().enumerate() {
            out.push((format!("head{}.principal.weight", i + 1), &head.principal.weight));
            out.push((format!("head{}.principal.bias", i + 1), &head.principal.bias));
            out.push((format!("head{}.elaborate.weight", i + 1), &head.elaborate.weight));
            out.push((format!("head{}.elaborate.bias", i + 1), &head.elaborate.bias));
        }
        out
    }

    /// Mutable view of the trainable tensors, same order as [`Self::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.trunk.weight);
        out.push(&mut self.trunk.bias);
        for head in &mut self.heads {
            out.push(&mut head.principal.weight);
            out.push(&mut head.principal.bias);
            out.push(&mut head.elaborate.weight);
            out.push(&mut head.elaborate.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Put every batch-norm layer in `mode`.
    pub fn set_mode(&mut self, mode: Mode) {
        for bn in &mut self.norms {
            bn.mode = mode;
        }
    }

    fn check_input(&self, tape: &Tape<T>, input: Var, mode: Mode) -> Result<()> {
        let shape = tape.value(input).shape();
        let want = [self.config.channels(), self.config.height(), self.config.width()];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::usage(format!(
                "network expects [N, {}, {}, {}] input, got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        if mode == Mode::Train && shape[0] < 2 {
            return Err(Error::usage(
                "train-mode forward needs at least 2 samples for batch statistics",
            ));
        }
        Ok(())
    }

    /// Forward pass in `mode`. Train mode updates the batch-norm running
    /// statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, input: Var, mode: Mode) -> Result<ForwardPass> {
        self.check_input(tape, input, mode)?;
        self.set_mode(mode);
        let params = self.register(tape);
        let mut norms = std::mem::take(&mut self.norms);
        let result = self.run(tape, input, params, |i, tape, x, g, b| norms[i].apply(tape, x, g, b));
        self.norms = norms;
        result
    }

    /// Inference forward pass over a shared network.
    pub fn forward_infer(&self, tape: &mut Tape<T>, input: Var) -> Result<ForwardPass> {
        self.check_input(tape, input, Mode::Infer)?;
        let params = self.register(tape);
        self.run(tape, input, params, |i, tape, x, g, b| self.norms[i].apply_infer(tape, x, g, b))
    }

    fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.parameters().into_iter().map(|(_, t)| tape.param(t)).collect()
    }

    fn run<F>(&self, tape: &mut Tape<T>, input: Var, params: Vec<Var>, mut norm: F) -> Result<ForwardPass>
    where
        F: FnMut(usize, &mut Tape<T>, Var, Var, Var) -> Result<Var>,
    {
        let k = self.config.conv_kernel;
        let mut x = input;
        let mut pools = Vec::with_capacity(4);
        for i in 0..8 {
            let p = &params[i * 4..i * 4 + 4];
            x = tape.conv2d(x, p[0], p[1], k.stride, k.padding)?;
            x = norm(i, tape, x, p[2], p[3])?;
            x = tape.relu(x)?;
            if i % 2 == 1 {
                x = tape.maxpool2(x)?;
                pools.push(x);
            }
        }
        let trunk_at = 32;
        let mut heads = Vec::with_capacity(4);
        for (h, &pool) in pools.iter().enumerate() {
            let mut feat = tape.flatten(pool)?;
            if h == 3 {
                feat = tape.linear(feat, params[trunk_at], params[trunk_at + 1])?;
            }
            let p = &params[trunk_at + 2 + h * 4..trunk_at + 6 + h * 4];
            heads.push(HeadPair {
                principal: tape.linear(feat, p[0], p[1])?,
                elaborate: tape.linear(feat, p[2], p[3])?,
            });
        }
        Ok(ForwardPass { heads, params })
    }

    /// Parameters plus batch-norm running statistics, tagged with the config.
    pub fn to_checkpoint(&self) -> Checkpoint<T> {
        let mut ckpt = Checkpoint::new(self.config.to_toml());
        for (name, t) in self.parameters() {
            ckpt.push(name, t.clone());
        }
        for (i, bn) in self.norms.iter().enumerate() {
            let c = bn.channels();
            ckpt.push(
                format!("bn{}.running_mean", i + 1),
                Tensor::new(vec![c], bn.running.mean.clone()).expect("channel vector"),
            );
            ckpt.push(
                format!("bn{}.running_var", i + 1),
                Tensor::new(vec![c], bn.running.var.clone()).expect("channel vector"),
            );
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        let config = NetworkConfig::from_toml(ckpt.metadata())?;
        let mut net = Self::build(config)?;
        net.load_state(ckpt)?;
        Ok(net)
    }

    /// Overwrite parameters and running statistics from `ckpt`.
    pub fn load_state(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        let names: Vec<String> = self.parameters().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(self.parameters_mut()) {
            let t = ckpt.get(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::config(format!(
                    "checkpoint tensor {name} has shape {:?}, network expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        for (i, bn) in self.norms.iter_mut().enumerate() {
            for (suffix, dst) in [("running_mean", &mut bn.running.mean), ("running_var", &mut bn.running.var)] {
                let name = format!("bn{}.{suffix}", i + 1);
                let t = ckpt.get(&name)?;
                if t.len() != dst.len() {
                    return Err(Error::config(format!("checkpoint tensor {name} has wrong length")));
                }
                dst.copy_from_slice(t.data());
            }
        }
        Ok(())
    }

    /// Snapshot of everything [`Self::restore`] needs.
    pub fn snapshot(&self) -> Vec<Tensor<T>> {
        self.to_checkpoint().into_tensors()
    }

    pub fn restore(&mut self, snapshot: &[Tensor<T>]) -> Result<()> {
        let mut ckpt = self.to_checkpoint();
        ckpt.replace_tensors(snapshot)?;
        self.load_state(&ckpt)
    }
}

/// Scatter one sample's head outputs back into landmark order, as `(x, y)`.
pub fn assemble_landmarks<T: Scalar>(
    config: &NetworkConfig,
    principal: &[T],
    elaborate: &[T],
) -> Vec<(f64, f64)> {
    let mut points = vec![(0.0, 0.0); config.n_landmarks];
    for (j, &idx) in config.principal_indices.iter().enumerate() {
        points[idx] = (principal[2 * j].as_f64(), principal[2 * j + 1].as_f64());
    }
    for (j, idx) in config.elaborate_indices().into_iter().enumerate() {
        points[idx] = (elaborate[2 * j].as_f64(), elaborate[2 * j + 1].as_f64());
    }
    points
}
