//! Five attending decoding stages and the sigmoid saliency head.
//!
//! Each stage optionally fuses the previous decoder state with a skip map
//! (upsample, concatenate, 3x3 conv, ReLU), then attends over the fused map
//! and projects `concat(F, attend(F))` with another 3x3 conv + ReLU.

use alloc::format;
use alloc::vec::Vec;

use crate::attention::{global_attend_multiscale, local_attend, GlobalAttention, GlobalAttentionConfig, LocalAttention, LocalAttentionConfig};
use crate::layers::ConvLayer;
use crate::params::{Group, Registry};
use crate::{Error, Real, Result, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    Global,
    Local,
    None,
}

/// What a stage fuses with before attending.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipSource {
    /// Encoder tap by index (0 = shallowest).
    Tap(usize),
    /// The normalized input image.
    Image,
    /// No fusion; the stage works on the previous state directly.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub skip: SkipSource,
    pub channels: usize,
    pub kind: AttentionKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderSpec {
    pub stages: Vec<StageSpec>,
}

impl DecoderSpec {
    /// Global at the two deepest stages, local at the next two, plain at full
    /// resolution, with the given per-stage channel counts.
    pub fn standard(channels: [usize; 5]) -> Self {
        use AttentionKind::*;
        let plan = [
            (SkipSource::Tap(2), Global),
            (SkipSource::None, Global),
            (SkipSource::Tap(1), Local),
            (SkipSource::Tap(0), Local),
            (SkipSource::Image, None),
        ];
        DecoderSpec {
            stages: plan
                .iter()
                .zip(channels)
                .map(|(&(skip, kind), channels)| StageSpec { skip, channels, kind })
                .collect(),
        }
    }

    pub fn channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.channels).collect()
    }

    pub fn validate(&self, taps: usize) -> Result<()> {
        let count = |k| self.stages.iter().filter(|s| s.kind == k).count();
        if count(AttentionKind::Global) != 2 || count(AttentionKind::Local) != 2 {
            return Err(Error::invalid("decoder_spec", "expected exactly 2 global and 2 local stages"));
        }
        for s in &self.stages {
            if s.channels == 0 {
                return Err(Error::invalid("decoder_spec", "stage channels must be positive"));
            }
            if let SkipSource::Tap(i) = s.skip {
                if i >= taps {
                    return Err(Error::invalid("decoder_spec", format!("encoder has no tap {i}")));
                }
            }
        }
        Ok(())
    }

    /// Working resolution of each stage given the encoder tap extents,
    /// bottleneck extent and input size. Must be non-decreasing.
    pub fn resolutions(&self, taps: &[usize], bottleneck: usize, input: usize) -> Result<Vec<usize>> {
        let mut side = bottleneck;
        let mut out = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            let next = match s.skip {
                SkipSource::Tap(i) => *taps.get(i).ok_or_else(|| Error::invalid("decoder_spec", format!("encoder has no tap {i}")))?,
                SkipSource::Image => input,
                SkipSource::None => side,
            };
            if next < side {
                return Err(Error::invalid("decoder_spec", "stage resolutions must be non-decreasing"));
            }
            side = next;
            out.push(side);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub enum Attend {
    Global(GlobalAttention),
    Local(LocalAttention),
    None,
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub spec: StageSpec,
    pub fuse: Option<ConvLayer>,
    pub attend: Attend,
    pub decode: ConvLayer,
}

/// Decoder with registered parameters.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub spec: DecoderSpec,
    pub stages: Vec<Stage>,
    pub head: ConvLayer,
}

impl Decoder {
    /// `tap_channels` and `bottleneck_channels` come from the encoder.
    pub fn declare(
        reg: &mut Registry,
        spec: &DecoderSpec,
        tap_channels: &[usize],
        bottleneck_channels: usize,
        global: &GlobalAttentionConfig,
        local: LocalAttentionConfig,
    ) -> Result<Self> {
        spec.validate(tap_channels.len())?;
        let group = Group::Decoder;
        let mut prev = bottleneck_channels;
        let mut stages = Vec::new();
        for (i, s) in spec.stages.iter().enumerate() {
            let name = format!("decoder.stage{}", i + 1);
            let skip_ch = match s.skip {
                SkipSource::Tap(t) => Some(tap_channels[t]),
                SkipSource::Image => Some(3),
                SkipSource::None => None,
            };
            let fuse = skip_ch.map(|sc| ConvLayer::same(reg, &format!("{name}.fuse"), group, prev + sc, s.channels, 3, 1));
            let f_ch = if fuse.is_some() { s.channels } else { prev };
            let attend = match s.kind {
                AttentionKind::Global => Attend::Global(GlobalAttention::declare(reg, &format!("{name}.global"), group, f_ch, global)?),
                AttentionKind::Local => Attend::Local(LocalAttention::declare(reg, &format!("{name}.local"), group, f_ch, local)?),
                AttentionKind::None => Attend::None,
            };
            let decode = ConvLayer::same(reg, &format!("{name}.decode"), group, 2 * f_ch, s.channels, 3, 1);
            prev = s.channels;
            stages.push(Stage {
                spec: *s,
                fuse,
                attend,
                decode,
            });
        }
        let head = ConvLayer::same(reg, "decoder.head", group, prev, 1, 1, 1);
        Ok(Decoder {
            spec: spec.clone(),
            stages,
            head,
        })
    }
}

/// Upsample `prev` to the skip's size, concatenate, 3x3 conv, ReLU.
pub fn fuse_features<T: Real>(tape: &mut Tape<T>, prev: Var, skip: Var, conv: &ConvLayer, p: &[Var]) -> Result<Var> {
    let (ps, ss) = (tape.shape(prev).to_vec(), tape.shape(skip).to_vec());
    if ps.len() != 4 || ss.len() != 4 || ps[0] != ss[0] {
        return Err(Error::Shape {
            op: "fuse_features",
            shape: ss,
            reason: "expected [N,C,H,W] maps with a shared batch",
        });
    }
    if ss[2] < ps[2] || ss[3] < ps[3] {
        return Err(Error::Shape {
            op: "fuse_features",
            shape: ss,
            reason: "skip map is smaller than the decoder state",
        });
    }
    if ps[1] + ss[1] != conv.in_ch {
        return Err(Error::Dim {
            op: "fuse_features",
            what: "fused channels",
            expected: conv.in_ch,
            got: ps[1] + ss[1],
        });
    }
    let up = if (ps[2], ps[3]) == (ss[2], ss[3]) {
        prev
    } else {
        tape.resize_bilinear(prev, ss[2], ss[3])?
    };
    let cat = tape.concat(&[up, skip], 1)?;
    conv.forward_relu(tape, p, cat)
}

/// Attention weights produced while decoding.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    /// Kinds in call order.
    pub calls: Vec<AttentionKind>,
    /// Per global call, one `[N, m^2, m, m]` weight map per scale.
    pub global: Vec<Vec<Var>>,
    /// Per local call, `[N, k^2, H, W]`.
    pub local: Vec<Var>,
}

impl AttentionTrace {
    pub fn count(&self, kind: AttentionKind) -> usize {
        self.calls.iter().filter(|k| **k == kind).count()
    }
}

/// `relu(conv3x3(concat(F, attend(F))))`; `attend` is the identity for `None`.
pub fn decode_step<T: Real>(tape: &mut Tape<T>, f: Var, stage: &Stage, p: &[Var], trace: &mut AttentionTrace) -> Result<Var> {
    let att = match &stage.attend {
        Attend::Global(g) => {
            let out = global_attend_multiscale(tape, f, g, p)?;
            trace.calls.push(AttentionKind::Global);
            trace.global.push(out.alphas);
            out.out
        }
        Attend::Local(l) => {
            let (out, alpha) = local_attend(tape, f, l, p)?;
            trace.calls.push(AttentionKind::Local);
            trace.local.push(alpha);
            out
        }
        Attend::None => f,
    };
    let cat = tape.concat(&[f, att], 1)?;
    stage.decode.forward_relu(tape, p, cat)
}

/// 1x1 conv to one channel, then sigmoid.
pub fn saliency_head<T: Real>(tape: &mut Tape<T>, d: Var, head: &ConvLayer, p: &[Var]) -> Result<Var> {
    let logits = head.forward(tape, p, d)?;
    Ok(tape.sigmoid(logits))
}

/// Run every stage: `skips` are the encoder taps, `image` the network input.
pub fn decoder_forward<T: Real>(
    tape: &mut Tape<T>,
    dec: &Decoder,
    bottleneck: Var,
    skips: &[Var],
    image: Var,
    p: &[Var],
) -> Result<(Var, AttentionTrace)> {
    let mut trace = AttentionTrace::default();
    let mut d = bottleneck;
    for stage in &dec.stages {
        let f = match (stage.spec.skip, &stage.fuse) {
            (SkipSource::Tap(i), Some(conv)) => fuse_features(tape, d, skips[i], conv, p)?,
            (SkipSource::Image, Some(conv)) => fuse_features(tape, d, image, conv, p)?,
            _ => d,
        };
        d = decode_step(tape, f, stage, p, &mut trace)?;
    }
    let s = saliency_head(tape, d, &dec.head, p)?;
    Ok((s, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tape::ConvGeom;
    use crate::Tensor;

    fn conv(reg: &mut Registry, cin: usize, cout: usize) -> ConvLayer {
        ConvLayer::same(reg, "c", Group::Decoder, cin, cout, 3, 1)
    }

    #[test]
    fn standard_spec_places_attention() {
        let spec = DecoderSpec::standard([8, 8, 8, 8, 4]);
        spec.validate(3).unwrap();
        let kinds: Vec<_> = spec.stages.iter().map(|s| s.kind).collect();
        use AttentionKind::*;
        assert_eq!(kinds, [Global, Global, Local, Local, None]);
        assert_eq!(spec.resolutions(&[111, 55, 27], 27, 224).unwrap(), [27, 27, 55, 111, 224]);
    }

    #[test]
    fn spec_needs_two_of_each_attention() {
        let mut spec = DecoderSpec::standard([8; 5]);
        spec.stages[1].kind = AttentionKind::Local;
        assert!(spec.validate(3).is_err());
    }

    #[test]
    fn fuse_upsamples_to_the_skip() {
        let mut reg = Registry::new();
        let c = conv(&mut reg, 4 + 2, 5);
        let store = ParamStore::<f32>::init(reg.finish(), 0);
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let prev = tape.constant(Tensor::full(&[1, 4, 27, 27], 0.1));
        let skip = tape.constant(Tensor::full(&[1, 2, 55, 55], 0.2));
        let y = fuse_features(&mut tape, prev, skip, &c, &p).unwrap();
        assert_eq!(tape.shape(y), &[1, 5, 55, 55]);
    }

    #[test]
    fn fuse_with_equal_sizes_skips_resampling_and_zero_weights_give_zero() {
        let mut reg = Registry::new();
        let c = conv(&mut reg, 3, 2);
        let store = ParamStore::<f32>::zeros(reg.finish());
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let prev = tape.constant(Tensor::full(&[1, 1, 6, 6], 1.0));
        let skip = tape.constant(Tensor::full(&[1, 2, 6, 6], 1.0));
        let before = tape.len();
        let y = fuse_features(&mut tape, prev, skip, &c, &p).unwrap();
        // concat, conv, relu
        assert_eq!(tape.len() - before, 3);
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fuse_rejects_wrong_channels_and_smaller_skip() {
        let mut reg = Registry::new();
        let c = conv(&mut reg, 5, 2);
        let store = ParamStore::<f32>::zeros(reg.finish());
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let prev = tape.constant(Tensor::zeros(&[1, 2, 6, 6]));
        let skip = tape.constant(Tensor::zeros(&[1, 2, 6, 6]));
        assert!(matches!(fuse_features(&mut tape, prev, skip, &c, &p), Err(Error::Dim { .. })));
        let small = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        assert!(fuse_features(&mut tape, prev, small, &c, &p).is_err());
    }

    #[test]
    fn plain_decode_step_projects_the_doubled_map() {
        let mut reg = Registry::new();
        let decode = conv(&mut reg, 2, 1);
        let store = ParamStore::<f64>::init(reg.finish(), 5);
        let stage = Stage {
            spec: StageSpec {
                skip: SkipSource::None,
                channels: 1,
                kind: AttentionKind::None,
            },
            fuse: None,
            attend: Attend::None,
            decode,
        };
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let fv = Tensor::from_fn(&[1, 1, 4, 5], |i| i as f64 * 0.1);
        let f = tape.constant(fv.clone());
        let mut trace = AttentionTrace::default();
        let y = decode_step(&mut tape, f, &stage, &p, &mut trace).unwrap();
        assert!(trace.calls.is_empty());
        let f2 = tape.constant(Tensor::batch(core::slice::from_ref(&fv)).unwrap());
        let cat = tape.concat(&[f2, f2], 1).unwrap();
        let expect = tape.conv2d(cat, p[0], Some(p[1]), ConvGeom::new(1, 1, 1)).unwrap();
        let expect = tape.relu(expect);
        assert_eq!(tape.value(y), tape.value(expect));
        assert_eq!(tape.shape(y), &[1, 1, 4, 5]);
    }

    #[test]
    fn global_decode_step_on_constant_map_is_constant() {
        let mut reg = Registry::new();
        let g = GlobalAttention::declare(&mut reg, "g", Group::Decoder, 2, &GlobalAttentionConfig::default()).unwrap();
        let decode = ConvLayer::same(&mut reg, "d", Group::Decoder, 4, 3, 3, 1);
        let store = ParamStore::<f64>::init(reg.finish(), 2);
        let stage = Stage {
            spec: StageSpec {
                skip: SkipSource::None,
                channels: 3,
                kind: AttentionKind::Global,
            },
            fuse: None,
            attend: Attend::Global(g),
            decode,
        };
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let f = tape.constant(Tensor::full(&[1, 2, 9, 9], 0.5));
        let mut trace = AttentionTrace::default();
        let y = decode_step(&mut tape, f, &stage, &p, &mut trace).unwrap();
        assert_eq!(trace.count(AttentionKind::Global), 1);
        assert_eq!(tape.shape(y), &[1, 3, 9, 9]);
        let v = tape.value(y);
        // interior pixels see the same constant neighbourhood
        for c in 0..3 {
            let centre = v.at4(0, c, 4, 4);
            for yy in 1..8 {
                for xx in 1..8 {
                    assert!((v.at4(0, c, yy, xx) - centre).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn head_outputs() {
        let mut reg = Registry::new();
        let head = ConvLayer::same(&mut reg, "h", Group::Decoder, 3, 1, 1, 1);
        let mut store = ParamStore::<f64>::zeros(reg.finish());
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let d = tape.constant(Tensor::full(&[2, 3, 5, 5], 1.0));
        let s = saliency_head(&mut tape, d, &head, &p).unwrap();
        assert_eq!(tape.shape(s), &[2, 1, 5, 5]);
        assert!(tape.value(s).data().iter().all(|v| *v == 0.5));
        store.values_mut()[1].data_mut()[0] = 20.0;
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let d = tape.constant(Tensor::full(&[1, 3, 2, 2], 1.0));
        let s = saliency_head(&mut tape, d, &head, &p).unwrap();
        assert!(tape.value(s).data().iter().all(|v| *v >= 1.0 - 1e-8));
    }
}
