//! SqueezeNet encoder with a dilated tail.
//!
//! The default plan follows SqueezeNet v1.1: a stride-2 3x3 stem, two 3x3/2
//! max pools, eight Fire modules, and no final pool, so the deepest map sits
//! at stride 8. Two extra convolutions (3x3 with a wide dilation, then 1x1)
//! enlarge the receptive field without shrinking the map. For a 224x224 input
//! the skip taps are 111x111, 55x55 and 27x27.

use alloc::format;
use alloc::vec::Vec;

use crate::layers::ConvLayer;
use crate::params::{Group, ParamId, Registry};
use crate::tape::{conv_out_extent, ConvGeom, PoolKind};
use crate::{Error, Real, Result, Tape, Var};

/// Squeeze (1x1) followed by parallel 1x1 and 3x3 expands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FireSpec {
    pub in_ch: usize,
    pub squeeze_ch: usize,
    pub expand1_ch: usize,
    pub expand3_ch: usize,
}

impl FireSpec {
    pub const fn new(in_ch: usize, squeeze_ch: usize, expand1_ch: usize, expand3_ch: usize) -> Self {
        FireSpec {
            in_ch,
            squeeze_ch,
            expand1_ch,
            expand3_ch,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.expand1_ch + self.expand3_ch
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.squeeze_ch == 0 || self.expand1_ch == 0 || self.expand3_ch == 0 {
            return Err(Error::invalid("fire", "channel counts must be positive"));
        }
        if self.squeeze_ch > self.out_ch() {
            return Err(Error::invalid("fire", "squeeze width exceeds expand width"));
        }
        Ok(())
    }

    /// `(in*s + s) + (s*e1 + e1) + (s*e3*9 + e3)`
    pub fn param_count(&self) -> usize {
        let s = self.squeeze_ch;
        (self.in_ch * s + s) + (s * self.expand1_ch + self.expand1_ch) + (s * self.expand3_ch * 9 + self.expand3_ch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderLayer {
    /// Convolution + ReLU, unpadded.
    Conv { out_ch: usize, kernel: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize },
    Fire(FireSpec),
    /// Expose the current feature map as a skip connection.
    Tap,
    /// Dilated 3x3 (same padding) then 1x1, both `channels` wide, each + ReLU.
    DilatedTail { channels: usize, dilation: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderSpec {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderSpec {
    /// SqueezeNet v1.1 channel plan with the 1024-wide dilation-12 tail.
    pub fn squeezenet() -> Self {
        use EncoderLayer::*;
        EncoderSpec {
            layers: alloc::vec![
                Conv {
                    out_ch: 64,
                    kernel: 3,
                    stride: 2
                },
                Tap,
                MaxPool { kernel: 3, stride: 2 },
                Fire(FireSpec::new(64, 16, 64, 64)),
                Fire(FireSpec::new(128, 16, 64, 64)),
                Fire(FireSpec::new(128, 32, 128, 128)),
                Tap,
                MaxPool { kernel: 3, stride: 2 },
                Fire(FireSpec::new(256, 32, 128, 128)),
                Fire(FireSpec::new(256, 48, 192, 192)),
                Fire(FireSpec::new(384, 48, 192, 192)),
                Fire(FireSpec::new(384, 64, 256, 256)),
                Fire(FireSpec::new(512, 64, 256, 256)),
                Tap,
                DilatedTail {
                    channels: 1024,
                    dilation: 12
                },
            ],
        }
    }

    /// Same layout at a quarter of the width, for CPU-scale training.
    pub fn compact() -> Self {
        use EncoderLayer::*;
        EncoderSpec {
            layers: alloc::vec![
                Conv {
                    out_ch: 16,
                    kernel: 3,
                    stride: 2
                },
                Tap,
                MaxPool { kernel: 3, stride: 2 },
                Fire(FireSpec::new(16, 4, 16, 16)),
                Fire(FireSpec::new(32, 4, 16, 16)),
                Fire(FireSpec::new(32, 8, 32, 32)),
                Tap,
                MaxPool { kernel: 3, stride: 2 },
                Fire(FireSpec::new(64, 8, 32, 32)),
                Fire(FireSpec::new(64, 12, 48, 48)),
                Fire(FireSpec::new(96, 12, 48, 48)),
                Fire(FireSpec::new(96, 16, 64, 64)),
                Fire(FireSpec::new(128, 16, 64, 64)),
                Tap,
                DilatedTail {
                    channels: 128,
                    dilation: 3
                },
            ],
        }
    }

    /// Check structure: one stem conv, eight Fires, three taps, a tail,
    /// consistent channels and an overall stride of 8 at the last tap.
    pub fn validate(&self) -> Result<()> {
        let mut convs = 0;
        let mut fires = 0;
        let mut taps = 0;
        let mut tails = 0;
        let mut stride = 1;
        let mut stride_at_last_tap = 0;
        let mut ch = 3;
        for layer in &self.layers {
            match *layer {
                EncoderLayer::Conv { out_ch, kernel, stride: s } => {
                    if out_ch == 0 || kernel == 0 || s == 0 {
                        return Err(Error::invalid("encoder_spec", "conv extents must be positive"));
                    }
                    convs += 1;
                    stride *= s;
                    ch = out_ch;
                }
                EncoderLayer::MaxPool { kernel, stride: s } => {
                    if kernel == 0 || s == 0 {
                        return Err(Error::invalid("encoder_spec", "pool extents must be positive"));
                    }
                    stride *= s;
                }
                EncoderLayer::Fire(f) => {
                    f.validate()?;
                    if f.in_ch != ch {
                        return Err(Error::Dim {
                            op: "encoder_spec",
                            what: "fire input channels",
                            expected: ch,
                            got: f.in_ch,
                        });
                    }
                    fires += 1;
                    ch = f.out_ch();
                }
                EncoderLayer::Tap => {
                    taps += 1;
                    stride_at_last_tap = stride;
                }
                EncoderLayer::DilatedTail { channels, dilation } => {
                    if channels == 0 || dilation == 0 {
                        return Err(Error::invalid("encoder_spec", "tail extents must be positive"));
                    }
                    tails += 1;
                    ch = channels;
                }
            }
        }
        let expect = |what: &'static str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dim {
                    op: "encoder_spec",
                    what,
                    expected,
                    got,
                })
            }
        };
        expect("stem convolutions", 1, convs)?;
        expect("fire modules", 8, fires)?;
        expect("skip taps", 3, taps)?;
        expect("dilated tails", 1, tails)?;
        expect("stride at deepest tap", 8, stride_at_last_tap)?;
        Ok(())
    }

    /// Channel count of each tap and of the bottleneck.
    pub fn channels(&self) -> (Vec<usize>, usize) {
        let mut ch = 3;
        let mut taps = Vec::new();
        for layer in &self.layers {
            match *layer {
                EncoderLayer::Conv { out_ch, .. } => ch = out_ch,
                EncoderLayer::Fire(f) => ch = f.out_ch(),
                EncoderLayer::Tap => taps.push(ch),
                EncoderLayer::DilatedTail { channels, .. } => ch = channels,
                EncoderLayer::MaxPool { .. } => {}
            }
        }
        (taps, ch)
    }

    /// Spatial extent of each tap and of the bottleneck for a square input.
    pub fn extents(&self, input: usize) -> Result<(Vec<usize>, usize)> {
        let mut side = input;
        let mut taps = Vec::new();
        for layer in &self.layers {
            match *layer {
                EncoderLayer::Conv { kernel, stride, .. } => {
                    side = conv_out_extent(side, kernel, ConvGeom::new(stride, 0, 1))
                        .ok_or_else(|| Error::invalid("encoder_spec", format!("input {input} too small for the stem")))?;
                }
                EncoderLayer::MaxPool { kernel, stride } => {
                    if side < kernel {
                        return Err(Error::invalid("encoder_spec", format!("input {input} too small for pooling")));
                    }
                    side = (side - kernel) / stride + 1;
                }
                EncoderLayer::Tap => taps.push(side),
                EncoderLayer::Fire(_) | EncoderLayer::DilatedTail { .. } => {}
            }
        }
        Ok((taps, side))
    }
}

/// Parameters of one Fire module.
#[derive(Clone, Debug)]
pub struct Fire {
    pub spec: FireSpec,
    pub squeeze: ConvLayer,
    pub expand1: ConvLayer,
    pub expand3: ConvLayer,
}

impl Fire {
    pub fn declare(reg: &mut Registry, name: &str, group: Group, spec: FireSpec) -> Self {
        Fire {
            spec,
            squeeze: ConvLayer::same(reg, &format!("{name}.squeeze"), group, spec.in_ch, spec.squeeze_ch, 1, 1),
            expand1: ConvLayer::same(reg, &format!("{name}.expand1"), group, spec.squeeze_ch, spec.expand1_ch, 1, 1),
            expand3: ConvLayer::same(reg, &format!("{name}.expand3"), group, spec.squeeze_ch, spec.expand3_ch, 3, 1),
        }
    }
}

/// `concat(relu(e1(s)), relu(e3(s)))` with `s = relu(squeeze(x))`.
pub fn fire_forward<T: Real>(tape: &mut Tape<T>, x: Var, fire: &Fire, p: &[Var]) -> Result<Var> {
    let ch = tape.shape(x).get(1).copied().unwrap_or(0);
    if ch != fire.spec.in_ch {
        return Err(Error::Dim {
            op: "fire",
            what: "input channels",
            expected: fire.spec.in_ch,
            got: ch,
        });
    }
    let s = fire.squeeze.forward_relu(tape, p, x)?;
    let e1 = fire.expand1.forward_relu(tape, p, s)?;
    let e3 = fire.expand3.forward_relu(tape, p, s)?;
    tape.concat(&[e1, e3], 1)
}

#[derive(Clone, Debug)]
enum Block {
    Conv(ConvLayer),
    Pool { kernel: usize, stride: usize },
    Fire(Fire),
    Tap,
    Tail { dilated: ConvLayer, pointwise: ConvLayer },
}

/// Encoder with registered parameters.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub spec: EncoderSpec,
    pub input_size: usize,
    blocks: Vec<Block>,
}

/// Skip maps (shallow to deep) and the bottleneck.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub skips: Vec<Var>,
    pub bottleneck: Var,
}

impl Encoder {
    pub fn declare(reg: &mut Registry, spec: &EncoderSpec, input_size: usize) -> Result<Self> {
        spec.validate()?;
        spec.extents(input_size)?;
        let group = Group::Encoder;
        let mut ch = 3;
        let mut fire_no = 1;
        let mut blocks = Vec::new();
        for layer in &spec.layers {
            blocks.push(match *layer {
                EncoderLayer::Conv { out_ch, kernel, stride } => {
                    let c = ConvLayer::declare(reg, "encoder.conv1", group, ch, out_ch, kernel, ConvGeom::new(stride, 0, 1));
                    ch = out_ch;
                    Block::Conv(c)
                }
                EncoderLayer::MaxPool { kernel, stride } => Block::Pool { kernel, stride },
                EncoderLayer::Fire(f) => {
                    fire_no += 1;
                    ch = f.out_ch();
                    Block::Fire(Fire::declare(reg, &format!("encoder.fire{fire_no}"), group, f))
                }
                EncoderLayer::Tap => Block::Tap,
                EncoderLayer::DilatedTail { channels, dilation } => {
                    let dilated = ConvLayer::same(reg, "encoder.tail.dilated", group, ch, channels, 3, dilation);
                    let pointwise = ConvLayer::same(reg, "encoder.tail.pointwise", group, channels, channels, 1, 1);
                    ch = channels;
                    Block::Tail { dilated, pointwise }
                }
            });
        }
        Ok(Encoder {
            spec: spec.clone(),
            input_size,
            blocks,
        })
    }
}

/// Run the encoder on `img [N,3,S,S]` where `S` is the configured input size.
pub fn encoder_forward<T: Real>(tape: &mut Tape<T>, img: Var, enc: &Encoder, p: &[Var]) -> Result<EncoderOutput> {
    let shape = tape.shape(img);
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Shape {
            op: "encoder",
            shape: shape.to_vec(),
            reason: "expected an [N,3,H,W] image batch",
        });
    }
    for &side in &shape[2..] {
        if side != enc.input_size {
            return Err(Error::Dim {
                op: "encoder",
                what: "input spatial extent",
                expected: enc.input_size,
                got: side,
            });
        }
    }
    let mut x = img;
    let mut skips = Vec::new();
    for block in &enc.blocks {
        x = match block {
            Block::Conv(c) => c.forward_relu(tape, p, x)?,
            Block::Pool { kernel, stride } => tape.pool2d(x, PoolKind::Max, *kernel, *stride)?,
            Block::Fire(f) => fire_forward(tape, x, f, p)?,
            Block::Tap => {
                skips.push(x);
                x
            }
            Block::Tail { dilated, pointwise } => {
                let d = dilated.forward_relu(tape, p, x)?;
                pointwise.forward_relu(tape, p, d)?
            }
        };
    }
    Ok(EncoderOutput { skips, bottleneck: x })
}

/// Identifiers of the two tail convolutions' parameters.
pub fn tail_params(enc: &Encoder) -> Vec<ParamId> {
    enc.blocks
        .iter()
        .filter_map(|b| match b {
            Block::Tail { dilated, pointwise } => Some([dilated.weight, dilated.bias, pointwise.weight, pointwise.bias]),
            _ => None,
        })
        .flatten()
        .collect()
}
