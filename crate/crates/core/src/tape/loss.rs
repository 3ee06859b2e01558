use alloc::vec::Vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::{Error, Real, Result, Tensor};

/// Predictions are clamped to `[CLAMP, 1 - CLAMP]` before the logarithm.
pub const BCE_CLAMP: f64 = 1e-7;

fn check(op: &'static str, n: usize, target: &[impl Copy], weight: &[impl Copy]) -> Result<()> {
    if target.len() != n || weight.len() != n {
        return Err(Error::Dim {
            op,
            what: "per-pixel target/weight length",
            expected: n,
            got: target.len().min(weight.len()),
        });
    }
    Ok(())
}

fn clamped<T: Real>(s: T) -> (T, bool) {
    let lo = T::from_f64(BCE_CLAMP);
    let hi = T::one() - lo;
    if s < lo {
        (lo, true)
    } else if s > hi {
        (hi, true)
    } else {
        (s, false)
    }
}

fn huber<T: Real>(e: T, delta: T) -> T {
    let a = e.abs();
    let half = T::from_f64(0.5);
    if a <= delta {
        half * e * e
    } else {
        delta * a - half * delta * delta
    }
}

impl<T: Real> Tape<T> {
    /// `sum_j weight_j * BCE(s_j, target_j)` as a scalar.
    pub fn weighted_bce(&mut self, s: Var, target: Vec<T>, weight: Vec<T>) -> Result<Var> {
        check("weighted_bce", self.value(s).numel(), &target, &weight)?;
        let mut total = T::zero();
        for ((sv, t), w) in self.data(s).iter().zip(&target).zip(&weight) {
            if *w == T::zero() {
                continue;
            }
            let (p, _) = clamped(*sv);
            total += -*w * (*t * p.ln() + (T::one() - *t) * (T::one() - p).ln());
        }
        Ok(self.push_op(Tensor::scalar(total), &[s], Op::WeightedBce { s, target, weight }))
    }

    /// `sum_j weight_j * huber_delta(s_j - target_j)` as a scalar.
    pub fn weighted_huber(&mut self, s: Var, target: Vec<T>, weight: Vec<T>, delta: T) -> Result<Var> {
        check("weighted_huber", self.value(s).numel(), &target, &weight)?;
        let mut total = T::zero();
        for ((sv, t), w) in self.data(s).iter().zip(&target).zip(&weight) {
            total += *w * huber(*sv - *t, delta);
        }
        Ok(self.push_op(
            Tensor::scalar(total),
            &[s],
            Op::WeightedHuber {
                s,
                target,
                weight,
                delta,
            },
        ))
    }
}

pub(super) fn bce_backward<T: Real>(nv: &NodeView<'_, T>, s: Var, target: &[T], weight: &[T], gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(s) {
        return;
    }
    let g = gy[0];
    let ds = nv
        .data(s)
        .iter()
        .zip(target)
        .zip(weight)
        .map(|((sv, t), w)| {
            let (p, was_clamped) = clamped(*sv);
            if was_clamped || *w == T::zero() {
                T::zero()
            } else {
                g * *w * (-*t / p + (T::one() - *t) / (T::one() - p))
            }
        })
        .collect();
    cx.push(s, ds);
}

pub(super) fn huber_backward<T: Real>(
    nv: &NodeView<'_, T>,
    s: Var,
    target: &[T],
    weight: &[T],
    delta: T,
    gy: &[T],
    cx: &mut Contribs<T>,
) {
    if !nv.tracks(s) {
        return;
    }
    let g = gy[0];
    let ds = nv
        .data(s)
        .iter()
        .zip(target)
        .zip(weight)
        .map(|((sv, t), w)| g * *w * (*sv - *t).max(-delta).min(delta))
        .collect();
    cx.push(s, ds);
}
