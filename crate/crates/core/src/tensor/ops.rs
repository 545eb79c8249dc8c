//! Forward and backward kernels for the tape primitives.
//!
//! Kernels are plain functions over slices. Per-sample work fans out through
//! [`crate::par`]; anything reduced across the batch (weight and bias
//! gradients, batch-norm moments) is summed afterwards in sample order.

use serde::{Deserialize, Serialize};

use super::gemm::{axpy, dot, matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::par;

/// Batch-norm stabilizer added to the variance.
pub const BN_EPSILON: f64 = 1e-5;
/// Running-statistics update rate.
pub const BN_MOMENTUM: f64 = 0.1;

/// Output extent of a convolution along one axis: `floor((n + 2p - k) / s) + 1`.
pub fn conv_output_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > n + 2 * padding {
        return None;
    }
    Some((n + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, c, h, w] = *input else {
            return Err(Error::config(format!("conv2d input must be NCHW, got {input:?}")));
        };
        let [k, wc, kh, kw] = *weight else {
            return Err(Error::config(format!("conv2d weight must be KCHW, got {weight:?}")));
        };
        if wc != c {
            return Err(Error::config(format!(
                "conv2d weight expects {wc} input channels, input has {c}"
            )));
        }
        if bias != [k] {
            return Err(Error::config(format!(
                "conv2d bias shape {bias:?} does not match {k} filters"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be at least 1"));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_extent(h, kh, stride, pad),
            conv_output_extent(w, kw, stride, pad),
        ) else {
            return Err(Error::config(format!(
                "conv2d kernel {kh}x{kw} does not fit {h}x{w} input with padding {pad}"
            )));
        };
        Ok(ConvGeom { n, c, h, w, k, kh, kw, stride, pad, ho, wo })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.c * self.h * self.w
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let hw = self.out_plane();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let dst = &mut col[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let hw = self.out_plane();
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let src = &col[row * hw..(row + 1) * hw];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let out_sample = g.k * g.out_plane();
    let mut out = vec![T::zero(); g.n * out_sample];
    par::for_each_chunk_mut(&mut out, out_sample, |n, dst| {
        let mut col = vec![T::zero(); g.patch() * g.out_plane()];
        g.im2col(&x[n * g.in_sample()..(n + 1) * g.in_sample()], &mut col);
        for (k, row) in dst.chunks_mut(g.out_plane()).enumerate() {
            row.fill(b[k]);
        }
        matmul_acc(w, &col, dst, g.k, g.patch(), g.out_plane());
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let hw = g.out_plane();
    let per_sample = par::map_range(g.n, |n| {
        let dy_n = &dy[n * g.k * hw..(n + 1) * g.k * hw];
        let mut col = vec![T::zero(); g.patch() * hw];
        g.im2col(&x[n * g.in_sample()..(n + 1) * g.in_sample()], &mut col);
        let mut dw = vec![T::zero(); g.k * g.patch()];
        matmul_bt_acc(dy_n, &col, &mut dw, g.k, hw, g.patch());
        let db: Vec<T> = dy_n
            .chunks(hw)
            .map(|r| r.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        let dx = need_dx.then(|| {
            col.fill(T::zero());
            matmul_at_acc(w, dy_n, &mut col, g.k, g.patch(), hw);
            let mut dx = vec![T::zero(); g.in_sample()];
            g.col2im(&col, &mut dx);
            dx
        });
        (dx, dw, db)
    });

    let mut dw = vec![T::zero(); g.k * g.patch()];
    let mut db = vec![T::zero(); g.k];
    let mut dx = need_dx.then(|| Vec::with_capacity(g.n * g.in_sample()));
    for (dx_n, dw_n, db_n) in per_sample {
        axpy(T::one(), &dw_n, &mut dw);
        axpy(T::one(), &db_n, &mut db);
        if let (Some(acc), Some(d)) = (dx.as_mut(), dx_n) {
            acc.extend_from_slice(&d);
        }
    }
    ConvGrads { dx, dw, db }
}

/// 2x2 stride-2 max pooling with floor on odd extents. Returns the output and
/// the flat input index of each window's first maximal element.
pub(crate) fn maxpool2_forward<T: Scalar>(shape: &[usize], x: &[T]) -> Result<(Vec<usize>, Vec<T>, Vec<u32>)> {
    let [n, c, h, w] = *shape else {
        return Err(Error::config(format!("maxpool2 input must be NCHW, got {shape:?}")));
    };
    if h < 2 || w < 2 {
        return Err(Error::config(format!("maxpool2 needs at least 2x2 maps, got {h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let planes = n * c;
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut arg = vec![0u32; planes * ho * wo];
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let cands = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = cands[0];
                for &idx in &cands[1..] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = p * ho * wo + i * wo + j;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
    Ok((vec![n, c, ho, wo], out, arg))
}

pub(crate) fn linear_check(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let [n, d] = *x else {
        return Err(Error::config(format!("linear input must be [N, D], got {x:?}")));
    };
    let [m, wd] = *w else {
        return Err(Error::config(format!("linear weight must be [M, D], got {w:?}")));
    };
    if wd != d {
        return Err(Error::config(format!(
            "linear weight expects {wd} inputs, got {d}"
        )));
    }
    if b != [m] {
        return Err(Error::config(format!("linear bias {b:?} does not match {m} outputs")));
    }
    Ok((n, d, m))
}

pub(crate) fn linear_forward<T: Scalar>(n: usize, d: usize, m: usize, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    par::for_each_chunk_mut(&mut out, m, |i, row| {
        let xi = &x[i * d..(i + 1) * d];
        for (j, o) in row.iter_mut().enumerate() {
            *o = b[j] + dot(xi, &w[j * d..(j + 1) * d]);
        }
    });
    out
}

pub(crate) fn linear_backward<T: Scalar>(
    n: usize,
    d: usize,
    m: usize,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); n * d];
        par::for_each_chunk_mut(&mut dx, d, |i, row| {
            for j in 0..m {
                axpy(dy[i * m + j], &w[j * d..(j + 1) * d], row);
            }
        });
        dx
    });
    let mut dw = vec![T::zero(); m * d];
    par::for_each_chunk_mut(&mut dw, d, |j, row| {
        for i in 0..n {
            axpy(dy[i * m + j], &x[i * d..(i + 1) * d], row);
        }
    });
    let db = (0..m)
        .map(|j| (0..n).fold(T::zero(), |a, i| a + dy[i * m + j]))
        .collect();
    (dx, dw, db)
}

/// Train or inference behaviour for batch normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Infer,
}

/// Per-channel inference statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Learned scale/shift plus running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: RunningStats<T>,
    pub epsilon: T,
    pub momentum: T,
    pub mode: Mode,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running: RunningStats {
                mean: vec![T::zero(); channels],
                var: vec![T::one(); channels],
            },
            epsilon: T::from_f64_lossy(BN_EPSILON),
            momentum: T::from_f64_lossy(BN_MOMENTUM),
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize `x` on the tape. `gamma`/`beta` are the tape handles of this
    /// layer's parameters. Train mode folds the batch moments into the
    /// running statistics.
    pub fn apply(&mut self, tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        match self.mode {
            Mode::Train => {
                let (out, mean, var) = tape.batch_norm_train(x, gamma, beta, self.epsilon)?;
                self.absorb(&mean, &var, tape.value(x).shape());
                Ok(out)
            }
            Mode::Infer => self.apply_infer(tape, x, gamma, beta),
        }
    }

    pub fn apply_infer(&self, tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        tape.batch_norm_infer(x, gamma, beta, &self.running, self.epsilon)
    }

    fn absorb(&mut self, mean: &[T], var: &[T], shape: &[usize]) {
        let count = shape[0] * shape[2] * shape[3];
        let unbias = T::from_f64_lossy(count as f64 / (count as f64 - 1.0));
        let keep = T::one() - self.momentum;
        for c in 0..self.channels() {
            self.running.mean[c] = keep * self.running.mean[c] + self.momentum * mean[c];
            self.running.var[c] = keep * self.running.var[c] + self.momentum * var[c] * unbias;
        }
    }
}

/// Per-channel batch normalization without the affine step.
///
/// Returns `(x_hat, mean, biased_var, inv_std)` where
/// `x_hat = (x - mean) / sqrt(var + eps)` over the N·H·W values of each channel.
pub fn normalize_batch<T: Scalar>(
    shape: &[usize],
    x: &[T],
    eps: T,
) -> Result<(Vec<T>, Vec<T>, Vec<T>, Vec<T>)> {
    let [n, c, h, w] = *shape else {
        return Err(Error::config(format!("batch_norm input must be NCHW, got {shape:?}")));
    };
    let plane = h * w;
    let count = n * plane;
    if count < 2 {
        return Err(Error::config(format!(
            "train-mode batch_norm needs at least 2 values per channel, got {count}"
        )));
    }
    let inv_count = T::one() / T::from_f64_lossy(count as f64);
    let moments = par::map_range(c, |ch| {
        let mut sum = T::zero();
        for s in 0..n {
            let off = (s * c + ch) * plane;
            sum = sum + x[off..off + plane].iter().fold(T::zero(), |a, &v| a + v);
        }
        let mean = sum * inv_count;
        let mut sq = T::zero();
        for s in 0..n {
            let off = (s * c + ch) * plane;
            sq = sq
                + x[off..off + plane]
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
        }
        let var = sq * inv_count;
        (mean, var, T::one() / (var + eps).sqrt())
    });
    let mean: Vec<T> = moments.iter().map(|m| m.0).collect();
    let var: Vec<T> = moments.iter().map(|m| m.1).collect();
    let inv_std: Vec<T> = moments.iter().map(|m| m.2).collect();
    let mut xhat = vec![T::zero(); x.len()];
    par::for_each_chunk_mut(&mut xhat, plane.max(1), |idx, dst| {
        let ch = idx % c;
        let src = &x[idx * plane..(idx + 1) * plane];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean[ch]) * inv_std[ch];
        }
    });
    Ok((xhat, mean, var, inv_std))
}

pub(crate) fn affine_channels<T: Scalar>(
    shape: &[usize],
    xhat: &[T],
    gamma: &[T],
    beta: &[T],
) -> Vec<T> {
    let c = shape[1];
    let plane = shape[2] * shape[3];
    let mut out = vec![T::zero(); xhat.len()];
    par::for_each_chunk_mut(&mut out, plane.max(1), |idx, dst| {
        let ch = idx % c;
        for (d, &v) in dst.iter_mut().zip(&xhat[idx * plane..(idx + 1) * plane]) {
            *d = gamma[ch] * v + beta[ch];
        }
    });
    out
}

/// Backward of train-mode batch norm with mean and variance treated as
/// functions of the input.
pub(crate) fn batch_norm_train_backward<T: Scalar>(
    shape: &[usize],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let count = T::from_f64_lossy((n * plane) as f64);
    let sums = par::map_range(c, |ch| {
        let mut sdy = T::zero();
        let mut sdyx = T::zero();
        for s in 0..n {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                sdy = sdy + dy[i];
                sdyx = sdyx + dy[i] * xhat[i];
            }
        }
        (sdy, sdyx)
    });
    let dbeta: Vec<T> = sums.iter().map(|s| s.0).collect();
    let dgamma: Vec<T> = sums.iter().map(|s| s.1).collect();
    let mut dx = vec![T::zero(); dy.len()];
    par::for_each_chunk_mut(&mut dx, plane.max(1), |idx, dst| {
        let ch = idx % c;
        let scale = gamma[ch] * inv_std[ch] / count;
        let off = idx * plane;
        for (i, d) in dst.iter_mut().enumerate() {
            let j = off + i;
            *d = scale * (count * dy[j] - dbeta[ch] - xhat[j] * dgamma[ch]);
        }
    });
    (dx, dgamma, dbeta)
}

pub(crate) fn batch_norm_infer_backward<T: Scalar>(
    shape: &[usize],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dx = vec![T::zero(); dy.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let g = gamma[ch] * inv_std[ch];
            for i in off..off + plane {
                dbeta[ch] = dbeta[ch] + dy[i];
                dgamma[ch] = dgamma[ch] + dy[i] * xhat[i];
                dx[i] = g * dy[i];
            }
        }
    }
    (dx, dgamma, dbeta)
}
