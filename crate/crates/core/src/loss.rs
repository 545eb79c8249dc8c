//! Dual-subset landmark losses.
//!
//! Each subset loss is the squared L2 distance between predicted and true
//! coordinates divided by `2d²`, `d` being the inter-ocular distance in the
//! same (crop-normalized) frame. A head's loss weights the principal subset
//! by `λ` and the elaborate subset by `1 − λ`; the training objective sums
//! the four supervisory heads and averages over the batch.

use crate::error::{Error, Result};
use crate::network::HeadPair;
use crate::tensor::{Scalar, Tape, Var};

/// Ground truth for one sample, split by subset.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetTargets<T> {
    /// Flattened `(x, y)` pairs of the principal landmarks.
    pub principal: Vec<T>,
    /// Flattened `(x, y)` pairs of the remaining landmarks.
    pub elaborate: Vec<T>,
    /// Inter-ocular distance, strictly positive.
    pub interocular: T,
}

impl<T: Scalar> SubsetTargets<T> {
    pub fn new(principal: Vec<T>, elaborate: Vec<T>, interocular: T) -> Result<Self> {
        check_distance(interocular)?;
        Ok(SubsetTargets {
            principal,
            elaborate,
            interocular,
        })
    }
}

fn check_distance<T: Scalar>(d: T) -> Result<()> {
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::data(format!(
            "inter-ocular distance must be positive, got {d:?}"
        )));
    }
    Ok(())
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    let half = T::from_f64_lossy(0.5);
    if !(lambda >= half && lambda < T::one()) {
        return Err(Error::usage(format!(
            "λ must lie in [0.5, 1), got {lambda:?}"
        )));
    }
    Ok(())
}

/// `‖pred − truth‖² / (2d²)`
pub fn subset_loss<T: Scalar>(pred: &[T], truth: &[T], d: T) -> Result<T> {
    check_distance(d)?;
    if pred.len() != truth.len() {
        return Err(Error::config(format!(
            "prediction has {} values, ground truth {}",
            pred.len(),
            truth.len()
        )));
    }
    let sq = pred
        .iter()
        .zip(truth)
        .fold(T::zero(), |a, (&p, &t)| a + (p - t) * (p - t));
    Ok(sq / (T::from_f64_lossy(2.0) * d * d))
}

/// `λ·E_b + (1 − λ)·E_r` for `λ ∈ [0.5, 1)`.
pub fn combined_loss<T: Scalar>(e_b: T, e_r: T, lambda: T) -> Result<T> {
    check_lambda(lambda)?;
    if e_b < T::zero() || e_r < T::zero() {
        return Err(Error::usage("subset losses must be non-negative"));
    }
    Ok(lambda * e_b + (T::one() - lambda) * e_r)
}

/// Loss when every landmark is principal: `E_r` is taken as 0.
pub fn empty_elaborate_loss<T: Scalar>(pred_b: &[T], truth_b: &[T], d: T, lambda: T) -> Result<T> {
    let e_b = subset_loss(pred_b, truth_b, d)?;
    combined_loss(e_b, T::zero(), lambda)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HeadLoss {
    pub e_b: f64,
    pub e_r: f64,
    pub e: f64,
}

/// Batch-mean losses of every head plus the weighted total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub heads: Vec<HeadLoss>,
    pub total: f64,
    pub lambda: f64,
}

/// Record the supervised loss of all head pairs on `tape`.
///
/// `head_weights` scales each head's contribution to the total (all ones
/// gives the plain sum). Returns the scalar to differentiate together with
/// the per-head breakdown.
pub fn multi_head_loss<T: Scalar>(
    tape: &mut Tape<T>,
    heads: &[HeadPair],
    targets: &[SubsetTargets<T>],
    lambda: T,
    head_weights: &[T],
) -> Result<(Var, LossBreakdown)> {
    check_lambda(lambda)?;
    if head_weights.len() != heads.len() {
        return Err(Error::config(format!(
            "{} head weights for {} heads",
            head_weights.len(),
            heads.len()
        )));
    }
    let n = targets.len();
    if n == 0 {
        return Err(Error::config("empty target batch"));
    }
    let row_scale = targets
        .iter()
        .map(|t| {
            check_distance(t.interocular)?;
            Ok(T::one() / (T::from_f64_lossy(2.0) * t.interocular * t.interocular))
        })
        .collect::<Result<Vec<T>>>()?;
    let flat_b: Vec<T> = targets.iter().flat_map(|t| t.principal.iter().copied()).collect();
    let flat_r: Vec<T> = targets.iter().flat_map(|t| t.elaborate.iter().copied()).collect();
    let inv_n = T::one() / T::from_f64_lossy(n as f64);

    let mut total: Option<Var> = None;
    let mut breakdown = LossBreakdown {
        heads: Vec::with_capacity(heads.len()),
        total: 0.0,
        lambda: lambda.as_f64(),
    };
    for (pair, &weight) in heads.iter().zip(head_weights) {
        for (v, truth) in [(pair.principal, &flat_b), (pair.elaborate, &flat_r)] {
            let shape = tape.value(v).shape();
            if shape.len() != 2 || shape[0] != n || shape[1] * n != truth.len() {
                return Err(Error::config(format!(
                    "head output {shape:?} does not match {n} targets of width {}",
                    truth.len() / n
                )));
            }
        }
        let e_b = tape.row_sq_error(pair.principal, &flat_b, &row_scale)?;
        let e_r = tape.row_sq_error(pair.elaborate, &flat_r, &row_scale)?;
        let mean = |tape: &Tape<T>, v: Var| {
            tape.value(v).data().iter().fold(0.0, |a, x| a + x.as_f64()) / n as f64
        };
        let (mb, mr) = (mean(tape, e_b), mean(tape, e_r));
        let lf = lambda.as_f64();
        breakdown.heads.push(HeadLoss {
            e_b: mb,
            e_r: mr,
            e: lf * mb + (1.0 - lf) * mr,
        });

        let wb = tape.weighted_sum(e_b, vec![weight * lambda * inv_n; n])?;
        let wr = tape.weighted_sum(e_r, vec![weight * (T::one() - lambda) * inv_n; n])?;
        let head = tape.add(wb, wr)?;
        total = Some(match total {
            None => head,
            Some(acc) => tape.add(acc, head)?,
        });
    }
    let total = total.ok_or_else(|| Error::config("no heads to supervise"))?;
    breakdown.total = tape.value(total).data()[0].as_f64();
    Ok((total, breakdown))
}
