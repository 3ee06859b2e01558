//! Global (multi-scale, ReNet-driven) and local (dilated neighbourhood)
//! pixel attention.
//!
//! Global attending pools the feature map to an `m x m` grid for each scale,
//! sweeps a bidirectional ReNet over that grid, turns each grid cell's ReNet
//! state into `m^2` logits and lets every cell attend over all `m^2` pooled
//! features. The attended grids are brought back to full size and merged.
//!
//! Local attending gives every pixel a softmax over its 7x7, dilation-2
//! neighbourhood (zero padded) and takes the weighted sum of those features.

use alloc::format;
use alloc::vec::Vec;

use crate::layers::{ConvLayer, LstmLayer};
use crate::params::{Group, Registry};
use crate::{Error, Real, Result, Tape, Tensor, Var};

/// How the per-scale attended maps are merged before the final 1x1 conv.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleMerge {
    /// Element-wise sum; the 1x1 conv maps `C -> C`.
    Sum,
    /// Channel concatenation; the 1x1 conv maps `S*C -> C`.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalAttentionConfig {
    /// Pooled grid sides, strictly ascending.
    pub scales: Vec<usize>,
    /// LSTM hidden units per direction.
    pub renet_hidden: usize,
    pub merge: ScaleMerge,
}

impl Default for GlobalAttentionConfig {
    fn default() -> Self {
        GlobalAttentionConfig {
            scales: alloc::vec![5, 7, 10],
            renet_hidden: 128,
            merge: ScaleMerge::Sum,
        }
    }
}

impl GlobalAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::invalid("global_attention", "at least one scale is required"));
        }
        if self.scales.contains(&0) {
            return Err(Error::invalid("global_attention", "scales must be positive"));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("global_attention", "scales must be strictly ascending"));
        }
        if self.renet_hidden == 0 {
            return Err(Error::invalid("global_attention", "renet hidden size must be positive"));
        }
        Ok(())
    }

    /// Number of attendees at scale `m`.
    pub fn attendees(m: usize) -> usize {
        m * m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalAttentionConfig {
    pub kernel: usize,
    pub dilation: usize,
}

impl Default for LocalAttentionConfig {
    fn default() -> Self {
        LocalAttentionConfig { kernel: 7, dilation: 2 }
    }
}

impl LocalAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) || self.dilation == 0 {
            return Err(Error::invalid("local_attention", "kernel must be odd and dilation >= 1"));
        }
        Ok(())
    }

    /// Neighbourhood size, one softmax channel per neighbour.
    pub fn area(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Bidirectional sweep, first along rows then along columns.
#[derive(Clone, Debug)]
pub struct ReNet {
    pub in_ch: usize,
    pub hidden: usize,
    row_fwd: LstmLayer,
    row_bwd: LstmLayer,
    col_fwd: LstmLayer,
    col_bwd: LstmLayer,
}

impl ReNet {
    pub fn declare(reg: &mut Registry, name: &str, group: Group, in_ch: usize, hidden: usize) -> Self {
        ReNet {
            in_ch,
            hidden,
            row_fwd: LstmLayer::declare(reg, &format!("{name}.row_fwd"), group, in_ch, hidden),
            row_bwd: LstmLayer::declare(reg, &format!("{name}.row_bwd"), group, in_ch, hidden),
            col_fwd: LstmLayer::declare(reg, &format!("{name}.col_fwd"), group, 2 * hidden, hidden),
            col_bwd: LstmLayer::declare(reg, &format!("{name}.col_bwd"), group, 2 * hidden, hidden),
        }
    }

    pub fn out_ch(&self) -> usize {
        2 * self.hidden
    }
}

/// Run one LSTM along the leading axis of `seq [T,B,I]`, returning `[T,B,H]`.
fn sweep<T: Real>(tape: &mut Tape<T>, seq: Var, lstm: &LstmLayer, p: &[Var], reverse: bool) -> Result<Var> {
    let (steps, batch) = (tape.shape(seq)[0], tape.shape(seq)[1]);
    let wts = lstm.weights(p);
    let mut h = tape.constant(Tensor::zeros(&[batch, lstm.hidden]));
    let mut c = tape.constant(Tensor::zeros(&[batch, lstm.hidden]));
    let mut outs = alloc::vec![h; steps];
    for i in 0..steps {
        let t = if reverse { steps - 1 - i } else { i };
        let x = tape.select(seq, t)?;
        (h, c) = tape.lstm_cell(x, h, c, wts)?;
        outs[t] = h;
    }
    tape.stack(&outs)
}

fn bidirectional<T: Real>(tape: &mut Tape<T>, seq: Var, fwd: &LstmLayer, bwd: &LstmLayer, p: &[Var]) -> Result<Var> {
    let a = sweep(tape, seq, fwd, p, false)?;
    let b = sweep(tape, seq, bwd, p, true)?;
    tape.concat(&[a, b], 2)
}

/// `[N,C,H,W] -> [N,2h,H,W]`.
pub fn renet_forward<T: Real>(tape: &mut Tape<T>, x: Var, renet: &ReNet, p: &[Var]) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [n, c, h, w] = shape[..] else {
        return Err(Error::Shape {
            op: "renet",
            shape,
            reason: "expected [N,C,H,W]",
        });
    };
    if c != renet.in_ch {
        return Err(Error::Dim {
            op: "renet",
            what: "input channels",
            expected: renet.in_ch,
            got: c,
        });
    }
    let two_h = renet.out_ch();
    // rows: sequence over W, batch N*H
    let rows = tape.permute(x, &[3, 0, 2, 1])?;
    let rows = tape.reshape(rows, &[w, n * h, c])?;
    let rows = bidirectional(tape, rows, &renet.row_fwd, &renet.row_bwd, p)?;
    let rows = tape.reshape(rows, &[w, n, h, two_h])?;
    // columns: sequence over H, batch N*W
    let cols = tape.permute(rows, &[2, 1, 0, 3])?;
    let cols = tape.reshape(cols, &[h, n * w, two_h])?;
    let cols = bidirectional(tape, cols, &renet.col_fwd, &renet.col_bwd, p)?;
    let cols = tape.reshape(cols, &[h, n, w, two_h])?;
    tape.permute(cols, &[1, 3, 0, 2])
}

/// Parameters of one global attending module.
#[derive(Clone, Debug)]
pub struct GlobalAttention {
    pub config: GlobalAttentionConfig,
    pub channels: usize,
    pub renet: ReNet,
    /// One `2h -> m^2` logit conv per scale.
    pub logits: Vec<ConvLayer>,
    pub project: ConvLayer,
}

impl GlobalAttention {
    pub fn declare(reg: &mut Registry, name: &str, group: Group, channels: usize, config: &GlobalAttentionConfig) -> Result<Self> {
        config.validate()?;
        let renet = ReNet::declare(reg, &format!("{name}.renet"), group, channels, config.renet_hidden);
        let logits = config
            .scales
            .iter()
            .map(|&m| {
                let d = GlobalAttentionConfig::attendees(m);
                ConvLayer::same(reg, &format!("{name}.logits{m}"), group, renet.out_ch(), d, 1, 1)
            })
            .collect();
        let merged = match config.merge {
            ScaleMerge::Sum => channels,
            ScaleMerge::Concat => channels * config.scales.len(),
        };
        let project = ConvLayer::same(reg, &format!("{name}.project"), group, merged, channels, 1, 1);
        Ok(GlobalAttention {
            config: config.clone(),
            channels,
            renet,
            logits,
            project,
        })
    }
}

/// Attended map at one scale and its attention weights `[N, m^2, m, m]`
/// (channel `i` is the weight on pooled cell `i`, row-major).
pub fn global_attend_scale<T: Real>(tape: &mut Tape<T>, f: Var, m: usize, module: &GlobalAttention, p: &[Var]) -> Result<(Var, Var)> {
    let idx = module
        .config
        .scales
        .iter()
        .position(|&s| s == m)
        .ok_or_else(|| Error::invalid("global_attend", format!("scale {m} is not configured")))?;
    let shape = tape.shape(f).to_vec();
    let [n, c, h, w] = shape[..] else {
        return Err(Error::Shape {
            op: "global_attend",
            shape,
            reason: "expected [N,C,H,W]",
        });
    };
    let d = GlobalAttentionConfig::attendees(m);
    let pooled = tape.resize_bilinear(f, m, m)?;
    let state = renet_forward(tape, pooled, &module.renet, p)?;
    let logits = module.logits[idx].forward(tape, p, state)?;
    let alpha = tape.softmax_channels(logits)?;
    let feats = tape.reshape(pooled, &[n, c, d])?;
    let weights = tape.reshape(alpha, &[n, d, d])?;
    let attended = tape.bmm(feats, weights)?;
    let attended = tape.reshape(attended, &[n, c, m, m])?;
    let out = tape.resize_bilinear(attended, h, w)?;
    Ok((out, alpha))
}

/// Merged global attention and the per-scale weights.
#[derive(Clone, Debug)]
pub struct GlobalOutput {
    pub out: Var,
    pub alphas: Vec<Var>,
}

pub fn global_attend_multiscale<T: Real>(tape: &mut Tape<T>, f: Var, module: &GlobalAttention, p: &[Var]) -> Result<GlobalOutput> {
    let mut maps = Vec::with_capacity(module.config.scales.len());
    let mut alphas = Vec::with_capacity(module.config.scales.len());
    for &m in &module.config.scales {
        let (out, alpha) = global_attend_scale(tape, f, m, module, p)?;
        maps.push(out);
        alphas.push(alpha);
    }
    let merged = match module.config.merge {
        ScaleMerge::Sum => {
            let mut acc = maps[0];
            for &m in &maps[1..] {
                acc = tape.add(acc, m)?;
            }
            acc
        }
        ScaleMerge::Concat => tape.concat(&maps, 1)?,
    };
    let out = module.project.forward(tape, p, merged)?;
    Ok(GlobalOutput { out, alphas })
}

/// Parameters of one local attending module.
#[derive(Clone, Debug)]
pub struct LocalAttention {
    pub config: LocalAttentionConfig,
    pub channels: usize,
    pub context: ConvLayer,
    pub logits: ConvLayer,
}

impl LocalAttention {
    pub fn declare(reg: &mut Registry, name: &str, group: Group, channels: usize, config: LocalAttentionConfig) -> Result<Self> {
        config.validate()?;
        let context = ConvLayer::same(reg, &format!("{name}.context"), group, channels, channels, config.kernel, config.dilation);
        let logits = ConvLayer::same(reg, &format!("{name}.logits"), group, channels, config.area(), 1, 1);
        Ok(LocalAttention {
            config,
            channels,
            context,
            logits,
        })
    }
}

/// Locally attended map `[N,C,H,W]` and the weights `[N,k^2,H,W]`.
pub fn local_attend<T: Real>(tape: &mut Tape<T>, f: Var, module: &LocalAttention, p: &[Var]) -> Result<(Var, Var)> {
    let ctx = module.context.forward_relu(tape, p, f)?;
    let logits = module.logits.forward(tape, p, ctx)?;
    let alpha = tape.softmax_channels(logits)?;
    let out = tape.local_aggregate(f, alpha, module.config.kernel, module.config.dilation)?;
    Ok((out, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::params::ParamStore;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    fn global_module(c: usize, hidden: usize) -> (GlobalAttention, ParamStore<f64>) {
        let mut reg = Registry::new();
        let cfg = GlobalAttentionConfig {
            scales: alloc::vec![1, 2, 5],
            renet_hidden: hidden,
            merge: ScaleMerge::Sum,
        };
        let g = GlobalAttention::declare(&mut reg, "g", Group::Decoder, c, &cfg).unwrap();
        (g, ParamStore::init(reg.finish(), 3))
    }

    fn local_module(c: usize) -> (LocalAttention, ParamStore<f64>) {
        let mut reg = Registry::new();
        let l = LocalAttention::declare(&mut reg, "l", Group::Decoder, c, LocalAttentionConfig::default()).unwrap();
        (l, ParamStore::init(reg.finish(), 4))
    }

    #[test]
    fn config_validation() {
        GlobalAttentionConfig::default().validate().unwrap();
        let bad = GlobalAttentionConfig {
            scales: alloc::vec![7, 5],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(LocalAttentionConfig::default().area(), 49);
        assert!(LocalAttentionConfig { kernel: 6, dilation: 2 }.validate().is_err());
    }

    #[test]
    fn renet_preserves_grid_and_zero_maps_to_zero() {
        let mut reg = Registry::new();
        let r = ReNet::declare(&mut reg, "r", Group::Decoder, 3, 4);
        let store = ParamStore::<f64>::zeros(reg.finish());
        for (h, w) in [(5, 5), (7, 7), (10, 10), (2, 3)] {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let x = tape.constant(Tensor::zeros(&[2, 3, h, w]));
            let y = renet_forward(&mut tape, x, &r, &p).unwrap();
            assert_eq!(tape.shape(y), &[2, 8, h, w]);
            assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn renet_is_batch_independent() {
        let mut reg = Registry::new();
        let r = ReNet::declare(&mut reg, "r", Group::Decoder, 2, 3);
        let store = ParamStore::<f64>::init(reg.finish(), 9);
        let mut rng = Rng::seed(1);
        let a = random(&[1, 2, 3, 4], &mut rng);
        let b = random(&[1, 2, 3, 4], &mut rng);
        let run = |items: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let x = tape.constant(Tensor::batch(items).unwrap());
            let y = renet_forward(&mut tape, x, &r, &p).unwrap();
            tape.value(y).clone()
        };
        let ab = run(&[a.clone(), b.clone()]);
        let ba = run(&[b, a]);
        let half = ab.numel() / 2;
        assert_eq!(&ab.data()[..half], &ba.data()[half..]);
        assert_eq!(&ab.data()[half..], &ba.data()[..half]);
    }

    #[test]
    fn renet_output_depends_on_whole_row_and_column() {
        // A change in one corner must reach the opposite corner after both sweeps.
        let mut reg = Registry::new();
        let r = ReNet::declare(&mut reg, "r", Group::Decoder, 1, 2);
        let store = ParamStore::<f64>::init(reg.finish(), 2);
        let run = |x: Tensor<f64>| {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let x = tape.constant(x);
            let y = renet_forward(&mut tape, x, &r, &p).unwrap();
            tape.value(y).clone()
        };
        let base = run(Tensor::zeros(&[1, 1, 3, 3]));
        let mut poked = Tensor::zeros(&[1, 1, 3, 3]);
        poked.data_mut()[0] = 1.0;
        let moved = run(poked);
        assert_ne!(base.at4(0, 0, 2, 2), moved.at4(0, 0, 2, 2));
    }

    #[test]
    fn global_scale_preserves_constants() {
        let (g, store) = global_module(3, 4);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::full(&[1, 3, 9, 9], 0.37));
        for m in [1, 2, 5] {
            let (out, alpha) = global_attend_scale(&mut tape, f, m, &g, &p).unwrap();
            assert_eq!(tape.shape(alpha), &[1, m * m, m, m]);
            for v in tape.value(out).data() {
                assert!((v - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_attendee_broadcasts_the_pooled_feature() {
        let (g, store) = global_module(2, 3);
        let mut rng = Rng::seed(5);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(x.clone());
        let (out, _) = global_attend_scale(&mut tape, f, 1, &g, &p).unwrap();
        let out = tape.value(out);
        for c in 0..2 {
            let pooled = crate::tape::resize_values(&x, 1, 1).at4(0, c, 0, 0);
            for y in 0..5 {
                for xx in 0..5 {
                    assert!((out.at4(0, c, y, xx) - pooled).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn global_scale_output_lies_in_convex_hull_of_attendees() {
        let (g, store) = global_module(2, 3);
        let mut rng = Rng::seed(6);
        let x = random(&[1, 2, 11, 11], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(x.clone());
        let (out, alpha) = global_attend_scale(&mut tape, f, 5, &g, &p).unwrap();
        let pooled = crate::tape::resize_values(&x, 5, 5);
        let out = tape.value(out);
        for c in 0..2 {
            let plane = &pooled.data()[c * 25..(c + 1) * 25];
            let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in &out.data()[c * 121..(c + 1) * 121] {
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
        let a = tape.value(alpha);
        for cell in 0..25 {
            let s: f64 = (0..25).map(|i| a.data()[i * 25 + cell]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_scale_is_rejected() {
        let (g, store) = global_module(2, 3);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        assert!(global_attend_scale(&mut tape, f, 7, &g, &p).is_err());
    }

    #[test]
    fn multiscale_sum_is_additive() {
        let (g, store) = global_module(2, 3);
        let mut rng = Rng::seed(8);
        let x = random(&[1, 2, 6, 6], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(x.clone());
        let full = global_attend_multiscale(&mut tape, f, &g, &p).unwrap();
        let mut parts = Vec::new();
        for m in [1, 2, 5] {
            let (o, _) = global_attend_scale(&mut tape, f, m, &g, &p).unwrap();
            parts.push(tape.value(o).clone());
        }
        let w = store.values()[store.id("g.project.weight").unwrap()].clone();
        let b = store.values()[store.id("g.project.bias").unwrap()].clone();
        let out = tape.value(full.out);
        for co in 0..2 {
            for px in 0..36 {
                let mut acc = b.data()[co];
                for ci in 0..2 {
                    let s: f64 = parts.iter().map(|t| t.data()[ci * 36 + px]).sum();
                    acc += w.data()[co * 2 + ci] * s;
                }
                assert!((out.data()[co * 36 + px] - acc).abs() < 1e-12);
            }
        }
        assert_eq!(full.alphas.len(), 3);
    }

    #[test]
    fn local_attention_matches_brute_force_gather() {
        let (l, store) = local_module(2);
        let mut rng = Rng::seed(10);
        let x = random(&[1, 2, 9, 9], &mut rng);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(x.clone());
        let (out, alpha) = local_attend(&mut tape, f, &l, &p).unwrap();
        let (out, alpha) = (tape.value(out), tape.value(alpha));
        for c in 0..2 {
            let mut acc = 0.0;
            for i in 0..49 {
                let (dy, dx) = ((i / 7) as isize * 2 - 6, (i % 7) as isize * 2 - 6);
                let (y, xx) = (4 + dy, 4 + dx);
                if (0..9).contains(&y) && (0..9).contains(&xx) {
                    acc += alpha.at4(0, i, 4, 4) * x.at4(0, c, y as usize, xx as usize);
                }
            }
            assert!((out.at4(0, c, 4, 4) - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn local_attention_preserves_constants_in_the_interior() {
        let (l, store) = local_module(2);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::full(&[1, 2, 15, 15], -0.8));
        let (out, _) = local_attend(&mut tape, f, &l, &p).unwrap();
        let out = tape.value(out);
        for c in 0..2 {
            for y in 6..9 {
                for x in 6..9 {
                    assert!((out.at4(0, c, y, x) + 0.8).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn local_attention_on_single_pixel_keeps_only_the_centre() {
        let (l, store) = local_module(1);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
        let (out, alpha) = local_attend(&mut tape, f, &l, &p).unwrap();
        let centre = tape.value(alpha).data()[24];
        assert!((tape.value(out).item() - 2.0 * centre).abs() < 1e-12);
    }

    #[test]
    fn gradients_through_global_and_local_paths() {
        let mut reg = Registry::new();
        let cfg = GlobalAttentionConfig {
            scales: alloc::vec![2, 3],
            renet_hidden: 2,
            merge: ScaleMerge::Sum,
        };
        let g = GlobalAttention::declare(&mut reg, "g", Group::Decoder, 2, &cfg).unwrap();
        let l = LocalAttention::declare(&mut reg, "l", Group::Decoder, 2, LocalAttentionConfig { kernel: 3, dilation: 2 }).unwrap();
        let store = ParamStore::<f64>::init(reg.finish(), 12);
        let mut rng = Rng::seed(13);
        let mut inputs = alloc::vec![random(&[1, 2, 5, 5], &mut rng)];
        inputs.extend(store.values().iter().cloned());
        let report = grad_check(
            "attention",
            &inputs,
            |tape, v| {
                let gl = global_attend_multiscale(tape, v[0], &g, &v[1..])?;
                let (lo, _) = local_attend(tape, gl.out, &l, &v[1..])?;
                Ok(lo)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
