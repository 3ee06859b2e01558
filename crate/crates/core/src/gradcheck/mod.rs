//! Finite-difference verification of tape gradients.
//!
//! The function under test maps a set of input tensors to any tensor. The
//! harness reduces that tensor to a scalar with a fixed random projection,
//! differentiates it on the tape, and compares every checked coordinate
//! with the central difference `(L(x + eps) - L(x - eps)) / (2 eps)`.
//!
//! The error of one coordinate is `|analytic - numeric| / max(|analytic|,
//! |numeric|, floor)`; the floor keeps coordinates whose true gradient is
//! zero from dividing round-off by round-off.
//!
//! Optional fallback steps re-estimate a coordinate whose error exceeds the
//! tolerance; the smallest error over all steps is kept. Deep ReLU networks
//! need this: a large step may push some unit across its kink, while a small
//! one drowns in round-off.

pub mod suite;

use alloc::string::String;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::{Result, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled without
    /// replacement); `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Extra step sizes tried, in order, for coordinates that fail at `eps`.
    pub fallback_eps: Vec<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0x5a17e,
            fallback_eps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Worst {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords: usize,
    pub tol: f64,
    pub worst: Option<Worst>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>], projection: &mut Option<Tensor<f64>>, seed: u64, track: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if track { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    let out = f(&mut tape, &vars)?;
    let proj = projection.get_or_insert_with(|| {
        let mut rng = Rng::seed(seed ^ 0x9e37_79b9);
        Tensor::from_fn(tape.shape(out), |_| rng.uniform(-1.0, 1.0))
    });
    let p = tape.constant(proj.clone());
    let prod = tape.mul(out, p)?;
    let loss = tape.sum(prod);
    Ok((tape, vars, loss))
}

/// Compare tape gradients of `f` against central differences.
pub fn grad_check<F>(name: &str, inputs: &[Tensor<f64>], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut projection = None;
    let (mut tape, vars, loss) = evaluate(&f, inputs, &mut projection, cfg.seed, true)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; t.numel()]))
        .collect();
    drop(tape);

    let mut rng = Rng::seed(cfg.seed);
    let mut report = GradCheckReport {
        name: name.into(),
        max_rel_err: 0.0,
        coords: 0,
        tol: cfg.tol,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let mut coords: Vec<usize> = (0..input.numel()).collect();
        if let Some(limit) = cfg.max_coords {
            if limit < coords.len() {
                rng.shuffle(&mut coords);
                coords.truncate(limit);
                coords.sort_unstable();
            }
        }
        for idx in coords {
            let a = analytic[k][idx];
            let mut best: Option<(f64, f64)> = None;
            for &eps in core::iter::once(&cfg.eps).chain(&cfg.fallback_eps) {
                let orig = input.data()[idx];
                probe[k].data_mut()[idx] = orig + eps;
                let (t, _, l) = evaluate(&f, &probe, &mut projection, cfg.seed, false)?;
                let plus = t.value(l).item();
                probe[k].data_mut()[idx] = orig - eps;
                let (t, _, l) = evaluate(&f, &probe, &mut projection, cfg.seed, false)?;
                let minus = t.value(l).item();
                probe[k].data_mut()[idx] = orig;

                let numeric = (plus - minus) / (2.0 * eps);
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
                let err = if err.is_finite() { err } else { f64::INFINITY };
                if best.is_none_or(|(e, _)| err < e) {
                    best = Some((err, numeric));
                }
                if err <= cfg.tol {
                    break;
                }
            }
            let (err, numeric) = best.expect("at least one step");
            report.coords += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(Worst {
                    input: k,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
