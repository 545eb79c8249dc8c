use super::ops::{self, ConvGeom};
use super::{ensure_finite, RunningStats, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
    RowSqError {
        pred: Var,
        target: Vec<T>,
        row_scale: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

/// Ordered record of executed primitives.
///
/// Forward methods append a node and return its [`Var`]. [`Tape::backward`]
/// walks the nodes in exact reverse order, summing gradient contributions
/// when a value feeds several consumers. Gradients accumulate across
/// repeated `backward` calls until [`Tape::zero_grad`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf holding a copy of `value`.
    pub fn param(&mut self, value: &Tensor<T>) -> Var {
        self.leaf(value.clone(), true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, what: &str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        ensure_finite(what, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let geom = ConvGeom::new(x.shape(), w.shape(), b.shape(), stride, padding)?;
        let out = ops::conv2d_forward(&geom, x.data(), w.data(), b.data());
        let value = Tensor::new(vec![geom.n, geom.k, geom.ho, geom.wo], out)?;
        self.push("conv2d", value, &[input, weight, bias], Op::Conv2d { input, weight, bias, geom })
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (shape, out, argmax) = ops::maxpool2_forward(x.shape(), x.data())?;
        let value = Tensor::new(shape, out)?;
        self.push("maxpool2", value, &[input], Op::MaxPool2 { input, argmax })
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (n, d, m) = ops::linear_check(x.shape(), w.shape(), b.shape())?;
        let out = ops::linear_forward(n, d, m, x.data(), w.data(), b.data());
        let value = Tensor::new(vec![n, m], out)?;
        self.push("linear", value, &[input, weight, bias], Op::Linear { input, weight, bias })
    }

    fn check_bn_params(&self, input: Var, gamma: Var, beta: Var) -> Result<usize> {
        let shape = self.value(input).shape();
        if shape.len() != 4 {
            return Err(Error::config(format!("batch_norm input must be NCHW, got {shape:?}")));
        }
        let c = shape[1];
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::config(format!(
                "batch_norm gamma/beta must have {c} entries"
            )));
        }
        Ok(c)
    }

    /// Train-mode batch normalization over the mini-batch. Also returns the
    /// batch mean and biased variance per channel.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        self.check_bn_params(input, gamma, beta)?;
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let (xhat, mean, var, inv_std) = ops::normalize_batch(&shape, x.data(), eps)?;
        let out = ops::affine_channels(&shape, &xhat, self.value(gamma).data(), self.value(beta).data());
        let value = Tensor::new(shape, out)?;
        let v = self.push(
            "batch_norm",
            value,
            &[input, gamma, beta],
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train: true },
        )?;
        Ok((v, mean, var))
    }

    pub fn batch_norm_infer(&mut self, input: Var, gamma: Var, beta: Var, stats: &RunningStats<T>, eps: T) -> Result<Var> {
        let c = self.check_bn_params(input, gamma, beta)?;
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::config("batch_norm running statistics do not match channels"));
        }
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let plane = shape[2] * shape[3];
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat: Vec<T> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / plane.max(1)) % c;
                (v - stats.mean[ch]) * inv_std[ch]
            })
            .collect();
        let out = ops::affine_channels(&shape, &xhat, self.value(gamma).data(), self.value(beta).data());
        let value = Tensor::new(shape, out)?;
        self.push(
            "batch_norm",
            value,
            &[input, gamma, beta],
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train: false },
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let out: Vec<T> = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push("relu", value, &[input], Op::Relu { input })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshaped(shape)?;
        self.push("reshape", value, &[input], Op::Reshape { input })
    }

    /// Collapse every axis after the first: `[N, ...] -> [N, D]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape.first().copied().unwrap_or(1);
        let d = shape.iter().skip(1).product();
        self.reshape(input, &[n, d])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::config(format!(
                "add shape mismatch {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let out = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push("add", value, &[a, b], Op::Add { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push("scale", value, &[input], Op::Scale { input, factor })
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).data().iter().fold(T::zero(), |a, &v| a + v);
        self.push("sum", Tensor::scalar(s), &[input], Op::Sum { input })
    }

    /// Scalar `Σ wᵢ xᵢ` with constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<T>) -> Result<Var> {
        let x = self.value(input);
        if weights.len() != x.len() {
            return Err(Error::config(format!(
                "weighted_sum has {} weights for {} values",
                weights.len(),
                x.len()
            )));
        }
        let s = x.data().iter().zip(&weights).fold(T::zero(), |a, (&v, &w)| a + v * w);
        self.push("weighted_sum", Tensor::scalar(s), &[input], Op::WeightedSum { input, weights })
    }

    /// Per-row scaled squared error: `out[n] = row_scale[n] · Σⱼ (pred[n,j] − target[n,j])²`.
    pub fn row_sq_error(&mut self, pred: Var, target: &[T], row_scale: &[T]) -> Result<Var> {
        let p = self.value(pred);
        let [n, w] = *p.shape() else {
            return Err(Error::config(format!("row_sq_error needs [N, W], got {:?}", p.shape())));
        };
        if target.len() != n * w || row_scale.len() != n {
            return Err(Error::config(format!(
                "row_sq_error target/scale sizes {}/{} do not match [{n}, {w}]",
                target.len(),
                row_scale.len()
            )));
        }
        let out = (0..n)
            .map(|i| {
                let s = (0..w).fold(T::zero(), |a, j| {
                    let d = p.data()[i * w + j] - target[i * w + j];
                    a + d * d
                });
                row_scale[i] * s
            })
            .collect();
        let value = Tensor::new(vec![n], out)?;
        self.push(
            "row_sq_error",
            value,
            &[pred],
            Op::RowSqError { pred, target: target.to_vec(), row_scale: row_scale.to_vec() },
        )
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::usage(format!(
                "backward root must be a scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            ensure_finite("backward", &g)?;
            let node = &mut self.nodes[idx];
            match node.grad.as_mut() {
                Some(acc) => {
                    for (a, &v) in acc.data_mut().iter_mut().zip(&g) {
                        *a = *a + v;
                    }
                }
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let r = ops::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    wants(*input),
                );
                if let Some(dx) = r.dx {
                    accumulate(grads, *input, dx);
                }
                if wants(*weight) {
                    accumulate(grads, *weight, r.dw);
                }
                if wants(*bias) {
                    accumulate(grads, *bias, r.db);
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![T::zero(); self.value(*input).len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    dx[a as usize] = dx[a as usize] + gv;
                }
                accumulate(grads, *input, dx);
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, d) = (x.shape()[0], x.shape()[1]);
                let m = w.shape()[0];
                let (dx, dw, db) = ops::linear_backward(n, d, m, x.data(), w.data(), g, wants(*input));
                if let Some(dx) = dx {
                    accumulate(grads, *input, dx);
                }
                if wants(*weight) {
                    accumulate(grads, *weight, dw);
                }
                if wants(*bias) {
                    accumulate(grads, *bias, db);
                }
            }
            Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                let shape = self.value(*input).shape();
                let gm = self.value(*gamma).data();
                let (dx, dg, db) = if *train {
                    ops::batch_norm_train_backward(shape, xhat, inv_std, gm, g)
                } else {
                    ops::batch_norm_infer_backward(shape, xhat, inv_std, gm, g)
                };
                if wants(*input) {
                    accumulate(grads, *input, dx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, dg);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, db);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::Reshape { input } => accumulate(grads, *input, g.to_vec()),
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Scale { input, factor } => {
                accumulate(grads, *input, g.iter().map(|&v| v * *factor).collect());
            }
            Op::Sum { input } => {
                accumulate(grads, *input, vec![g[0]; self.value(*input).len()]);
            }
            Op::WeightedSum { input, weights } => {
                accumulate(grads, *input, weights.iter().map(|&w| w * g[0]).collect());
            }
            Op::RowSqError { pred, target, row_scale } => {
                let p = self.value(*pred);
                let w = p.shape()[1];
                let two = T::one() + T::one();
                let dx = p
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let row = i / w;
                        g[row] * row_scale[row] * two * (v - target[i])
                    })
                    .collect();
                accumulate(grads, *pred, dx);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match grads[v.0].as_mut() {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        None => grads[v.0] = Some(g),
    }
}
