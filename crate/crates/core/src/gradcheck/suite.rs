//! Named gradient checks for every differentiable op, the composite
//! modules, the loss, and the whole network at reduced geometry.

use alloc::string::String;
use alloc::vec::Vec;

use super::{grad_check, GradCheckConfig, GradCheckReport};
use crate::attention::{global_attend_multiscale, local_attend, renet_forward, GlobalAttention, GlobalAttentionConfig, LocalAttention, LocalAttentionConfig, ReNet, ScaleMerge};
use crate::encoder::{fire_forward, Fire, FireSpec};
use crate::losses::{total_loss, LossTargets, LossWeights};
use crate::model::{ModelSpec, Salite};
use crate::params::{Group, ParamStore, Registry};
use crate::rng::Rng;
use crate::tape::{ConvGeom, LstmWeights, PoolKind, Unary};
use crate::{Error, Result, Tensor};

/// Tolerance for elementary ops and modules.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end network.
pub const NETWORK_TOL: f64 = 1e-3;
/// Steps for the network check, tried in order. Round-off in the forward
/// pass is around `1e-13`, so small steps lose digits on small gradients;
/// large steps on early-layer weights move thousands of ReLUs and max-pool
/// windows, some of which cross their kinks.
pub const NETWORK_EPS: [f64; 5] = [1e-4, 1e-6, 1e-5, 1e-3, 1e-7];
/// Input side of the reduced network.
pub const NETWORK_INPUT: usize = 56;

pub const OPS: &[&str] = &[
    "conv2d",
    "conv2d_strided",
    "conv2d_dilated",
    "conv2d_pointwise",
    "max_pool",
    "avg_pool",
    "resize_bilinear",
    "softmax_channels",
    "lstm_cell",
    "relu",
    "sigmoid",
    "tanh",
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "reshape",
    "permute",
    "concat",
    "select",
    "stack",
    "bmm",
    "local_aggregate",
    "weighted_bce",
    "weighted_huber",
    "fire",
    "renet",
    "global_attention",
    "local_attention",
    "total_loss",
];

fn rand(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Initialised parameters with every entry nudged, so no bias sits at zero
/// and no ReLU is evaluated on its kink.
fn jittered(infos: Vec<crate::params::ParamInfo>, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = Rng::seed(seed ^ 0x1177);
    let mut values = ParamStore::<f64>::init(infos, seed).values().to_vec();
    for t in &mut values {
        for v in t.data_mut() {
            *v += rng.uniform(-0.1, 0.1);
        }
    }
    values
}

fn params(reg: Registry, seed: u64) -> Vec<Tensor<f64>> {
    jittered(reg.finish(), seed)
}

/// Check one named op at [`OP_TOL`].
pub fn check_op(name: &str, base: &GradCheckConfig) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig { tol: OP_TOL, ..base.clone() };
    let mut rng = Rng::seed(cfg.seed ^ name.len() as u64);
    let r = &mut rng;
    let conv = |x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>, g: ConvGeom| {
        grad_check(name, &[x, w, b], move |t, v| t.conv2d(v[0], v[1], Some(v[2]), g), &cfg)
    };
    match name {
        "conv2d" => conv(rand(r, &[2, 3, 5, 6], -1.0, 1.0), rand(r, &[4, 3, 3, 3], -1.0, 1.0), rand(r, &[4], -1.0, 1.0), ConvGeom::new(1, 1, 1)),
        "conv2d_strided" => conv(rand(r, &[1, 2, 7, 7], -1.0, 1.0), rand(r, &[3, 2, 3, 3], -1.0, 1.0), rand(r, &[3], -1.0, 1.0), ConvGeom::new(2, 0, 1)),
        "conv2d_dilated" => conv(rand(r, &[1, 2, 6, 6], -1.0, 1.0), rand(r, &[2, 2, 3, 3], -1.0, 1.0), rand(r, &[2], -1.0, 1.0), ConvGeom::new(1, 3, 3)),
        "conv2d_pointwise" => conv(rand(r, &[2, 3, 4, 4], -1.0, 1.0), rand(r, &[5, 3, 1, 1], -1.0, 1.0), rand(r, &[5], -1.0, 1.0), ConvGeom::new(1, 0, 1)),
        "max_pool" => grad_check(name, &[rand(r, &[2, 2, 7, 7], -1.0, 1.0)], |t, v| t.pool2d(v[0], PoolKind::Max, 3, 2), &cfg),
        "avg_pool" => grad_check(name, &[rand(r, &[1, 2, 6, 5], -1.0, 1.0)], |t, v| t.pool2d(v[0], PoolKind::Avg, 2, 2), &cfg),
        "resize_bilinear" => grad_check(name, &[rand(r, &[1, 2, 4, 5], -1.0, 1.0)], |t, v| t.resize_bilinear(v[0], 7, 3), &cfg),
        "softmax_channels" => grad_check(name, &[rand(r, &[2, 5, 3, 3], -3.0, 3.0)], |t, v| t.softmax_channels(v[0]), &cfg),
        "lstm_cell" => {
            let (b, i, h) = (3, 4, 2);
            let inputs = [
                rand(r, &[b, i], -1.0, 1.0),
                rand(r, &[b, h], -1.0, 1.0),
                rand(r, &[b, h], -1.0, 1.0),
                rand(r, &[4 * h, i], -1.0, 1.0),
                rand(r, &[4 * h, h], -1.0, 1.0),
                rand(r, &[4 * h], -1.0, 1.0),
            ];
            grad_check(
                name,
                &inputs,
                |t, v| {
                    let wts = LstmWeights { w_ih: v[3], w_hh: v[4], b: v[5] };
                    t.lstm_cell_packed(v[0], v[1], v[2], wts)
                },
                &cfg,
            )
        }
        "relu" | "sigmoid" | "tanh" => {
            let f = match name {
                "relu" => Unary::Relu,
                "sigmoid" => Unary::Sigmoid,
                _ => Unary::Tanh,
            };
            grad_check(name, &[rand(r, &[3, 4], -2.0, 2.0)], move |t, v| Ok(t.unary(v[0], f)), &cfg)
        }
        "add" => grad_check(name, &[rand(r, &[3, 4], -1.0, 1.0), rand(r, &[3, 4], -1.0, 1.0)], |t, v| t.add(v[0], v[1]), &cfg),
        "sub" => grad_check(name, &[rand(r, &[3, 4], -1.0, 1.0), rand(r, &[3, 4], -1.0, 1.0)], |t, v| t.sub(v[0], v[1]), &cfg),
        "mul" => grad_check(name, &[rand(r, &[3, 4], -1.0, 1.0), rand(r, &[3, 4], -1.0, 1.0)], |t, v| t.mul(v[0], v[1]), &cfg),
        "scale" => grad_check(name, &[rand(r, &[3, 4], -1.0, 1.0)], |t, v| Ok(t.scale(v[0], -1.7)), &cfg),
        "sum" => grad_check(name, &[rand(r, &[3, 4], -1.0, 1.0)], |t, v| Ok(t.sum(v[0])), &cfg),
        "reshape" => grad_check(name, &[rand(r, &[2, 6], -1.0, 1.0)], |t, v| t.reshape(v[0], &[3, 4]), &cfg),
        "permute" => grad_check(name, &[rand(r, &[2, 3, 4], -1.0, 1.0)], |t, v| t.permute(v[0], &[2, 0, 1]), &cfg),
        "concat" => grad_check(name, &[rand(r, &[2, 1, 3], -1.0, 1.0), rand(r, &[2, 2, 3], -1.0, 1.0)], |t, v| t.concat(&[v[0], v[1]], 1), &cfg),
        "select" => grad_check(name, &[rand(r, &[3, 2, 2], -1.0, 1.0)], |t, v| t.select(v[0], 1), &cfg),
        "stack" => grad_check(name, &[rand(r, &[2, 3], -1.0, 1.0), rand(r, &[2, 3], -1.0, 1.0)], |t, v| t.stack(&[v[0], v[1], v[0]]), &cfg),
        "bmm" => grad_check(name, &[rand(r, &[2, 3, 4], -1.0, 1.0), rand(r, &[2, 4, 5], -1.0, 1.0)], |t, v| t.bmm(v[0], v[1]), &cfg),
        "local_aggregate" => grad_check(
            name,
            &[rand(r, &[1, 2, 5, 6], -1.0, 1.0), rand(r, &[1, 9, 5, 6], 0.0, 1.0)],
            |t, v| t.local_aggregate(v[0], v[1], 3, 2),
            &cfg,
        ),
        "weighted_bce" => {
            let target: Vec<f64> = (0..12).map(|_| (r.next_u64() & 1) as f64).collect();
            let weight: Vec<f64> = (0..12).map(|_| r.uniform(0.0, 1.0)).collect();
            grad_check(name, &[rand(r, &[12], 0.05, 0.95)], move |t, v| t.weighted_bce(v[0], target.clone(), weight.clone()), &cfg)
        }
        "weighted_huber" => {
            let target: Vec<f64> = (0..12).map(|_| r.uniform(-1.0, 1.0)).collect();
            let weight: Vec<f64> = (0..12).map(|_| r.uniform(0.0, 1.0)).collect();
            grad_check(name, &[rand(r, &[12], -1.0, 1.0)], move |t, v| t.weighted_huber(v[0], target.clone(), weight.clone(), 0.4), &cfg)
        }
        "fire" => {
            let mut reg = Registry::new();
            let fire = Fire::declare(&mut reg, "f", Group::Encoder, FireSpec::new(3, 2, 2, 3));
            let mut inputs = alloc::vec![rand(r, &[1, 3, 4, 4], -1.0, 1.0)];
            inputs.extend(params(reg, 1));
            grad_check(name, &inputs, |t, v| fire_forward(t, v[0], &fire, &v[1..]), &cfg)
        }
        "renet" => {
            let mut reg = Registry::new();
            let renet = ReNet::declare(&mut reg, "r", Group::Decoder, 2, 2);
            let mut inputs = alloc::vec![rand(r, &[2, 2, 3, 2], -1.0, 1.0)];
            inputs.extend(params(reg, 2));
            grad_check(name, &inputs, |t, v| renet_forward(t, v[0], &renet, &v[1..]), &cfg)
        }
        "global_attention" => {
            let mut reg = Registry::new();
            let gc = GlobalAttentionConfig {
                scales: alloc::vec![2, 3],
                renet_hidden: 2,
                merge: ScaleMerge::Sum,
            };
            let g = GlobalAttention::declare(&mut reg, "g", Group::Decoder, 2, &gc)?;
            let mut inputs = alloc::vec![rand(r, &[1, 2, 5, 4], -1.0, 1.0)];
            inputs.extend(params(reg, 3));
            grad_check(name, &inputs, |t, v| Ok(global_attend_multiscale(t, v[0], &g, &v[1..])?.out), &cfg)
        }
        "local_attention" => {
            let mut reg = Registry::new();
            let l = LocalAttention::declare(&mut reg, "l", Group::Decoder, 2, LocalAttentionConfig::default())?;
            let mut inputs = alloc::vec![rand(r, &[1, 2, 6, 6], -1.0, 1.0)];
            inputs.extend(params(reg, 4));
            grad_check(name, &inputs, |t, v| Ok(local_attend(t, v[0], &l, &v[1..])?.0), &cfg)
        }
        "total_loss" => {
            let masks: Vec<Vec<bool>> = (0..2).map(|_| (0..100).map(|_| r.next_f64() < 0.4).collect()).collect();
            let targets = LossTargets::<f64>::new(&masks, 10, 10, &LossWeights::default())?;
            grad_check(name, &[rand(r, &[2, 1, 10, 10], 0.05, 0.95)], move |t, v| Ok(total_loss(t, v[0], &targets)?.total), &cfg)
        }
        _ => Err(Error::invalid("gradcheck", alloc::format!("unknown op `{name}`"))),
    }
}

/// The reduced-geometry network (compact backbone, 56x56 input) checked on
/// the image and a sample of coordinates from every parameter tensor.
pub fn check_network(base: &GradCheckConfig) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig {
        tol: NETWORK_TOL,
        eps: NETWORK_EPS[0],
        fallback_eps: NETWORK_EPS[1..].to_vec(),
        max_coords: Some(base.max_coords.unwrap_or(3)),
        ..base.clone()
    };
    let spec = ModelSpec {
        input_size: NETWORK_INPUT,
        ..ModelSpec::desk()
    };
    let model = Salite::new(&spec)?;
    let mut rng = Rng::seed(cfg.seed);
    let mut inputs = alloc::vec![rand(&mut rng, &[1, 3, NETWORK_INPUT, NETWORK_INPUT], -2.0, 2.0)];
    inputs.extend(jittered(model.params().to_vec(), cfg.seed));
    grad_check("network", &inputs, |t, v| Ok(model.forward(t, v[0], &v[1..])?.saliency), &cfg)
}

/// Every op check followed by the network check.
pub fn check_all(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    let mut out: Vec<GradCheckReport> = OPS.iter().map(|op| check_op(op, cfg)).collect::<Result<_>>()?;
    out.push(check_network(cfg)?);
    Ok(out)
}

/// One line per report: `name  max_rel_err  coords  PASS|FAIL`.
pub fn format_report(r: &GradCheckReport) -> String {
    alloc::format!(
        "{:<18} {:>10.3e} {:>6} {}",
        r.name,
        r.max_rel_err,
        r.coords,
        if r.passed() { "PASS" } else { "FAIL" }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes() {
        for op in OPS {
            let r = check_op(op, &GradCheckConfig::default()).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!(r.coords > 0);
        }
    }

    #[test]
    fn unknown_op_is_an_error() {
        assert!(check_op("fft", &GradCheckConfig::default()).is_err());
    }
}
