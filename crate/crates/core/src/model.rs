//! Whole-network description, parameter registry and forward pass.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

use crate::attention::{GlobalAttentionConfig, LocalAttentionConfig, ScaleMerge};
use crate::decoder::{decoder_forward, AttentionTrace, Decoder, DecoderSpec};
use crate::encoder::{encoder_forward, Encoder, EncoderOutput, EncoderSpec};
use crate::params::{ParamInfo, Registry};
use crate::{Error, Real, Result, Tape, Var};

/// Encoder channel plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    /// SqueezeNet v1.1 widths with a 1024-channel tail.
    SqueezeNet,
    /// Quarter widths with a 128-channel tail, for CPU training.
    Compact,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::SqueezeNet => "squeezenet",
            Backbone::Compact => "compact",
        }
    }

    pub fn spec(self) -> EncoderSpec {
        match self {
            Backbone::SqueezeNet => EncoderSpec::squeezenet(),
            Backbone::Compact => EncoderSpec::compact(),
        }
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squeezenet" => Ok(Backbone::SqueezeNet),
            "compact" => Ok(Backbone::Compact),
            _ => Err(Error::invalid("model_spec", format!("unknown backbone `{s}`"))),
        }
    }
}

/// Every architectural knob.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub backbone: Backbone,
    pub input_size: usize,
    pub decoder_channels: [usize; 5],
    pub global: GlobalAttentionConfig,
    pub local: LocalAttentionConfig,
}

impl ModelSpec {
    /// 224x224 input, SqueezeNet encoder, ~8M parameters.
    pub fn full() -> Self {
        ModelSpec {
            backbone: Backbone::SqueezeNet,
            input_size: 224,
            decoder_channels: [16, 16, 16, 16, 8],
            global: GlobalAttentionConfig::default(),
            local: LocalAttentionConfig::default(),
        }
    }

    /// 64x64 input and narrow layers; trains on a CPU in minutes.
    pub fn desk() -> Self {
        ModelSpec {
            backbone: Backbone::Compact,
            input_size: 64,
            decoder_channels: [16, 16, 16, 16, 8],
            global: GlobalAttentionConfig {
                renet_hidden: 16,
                ..GlobalAttentionConfig::default()
            },
            local: LocalAttentionConfig::default(),
        }
    }

    /// Named preset: `full` (alias `default`) or `desk`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" | "default" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            _ => Err(Error::invalid("model_spec", format!("unknown preset `{name}`"))),
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        self.backbone.spec()
    }

    pub fn decoder_spec(&self) -> DecoderSpec {
        DecoderSpec::standard(self.decoder_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let enc = self.encoder_spec();
        enc.validate()?;
        let (taps, bottleneck) = enc.extents(self.input_size)?;
        let dec = self.decoder_spec();
        dec.validate(taps.len())?;
        dec.resolutions(&taps, bottleneck, self.input_size)?;
        self.global.validate()?;
        self.local.validate()
    }

    /// `key = value` lines, readable by [`ModelSpec::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "backbone = {}", self.backbone.name());
        let _ = writeln!(s, "input_size = {}", self.input_size);
        let _ = writeln!(s, "decoder_channels = {}", list(&self.decoder_channels));
        let _ = writeln!(s, "scales = {}", list(&self.global.scales));
        let _ = writeln!(s, "renet_hidden = {}", self.global.renet_hidden);
        let merge = match self.global.merge {
            ScaleMerge::Sum => "sum",
            ScaleMerge::Concat => "concat",
        };
        let _ = writeln!(s, "scale_merge = {merge}");
        let _ = writeln!(s, "local_kernel = {}", self.local.kernel);
        let _ = writeln!(s, "local_dilation = {}", self.local.dilation);
        s
    }

    /// Parse [`ModelSpec::to_text`] output. Missing keys keep the `full` values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::full();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Malformed(format!("model spec line {}: expected `key = value`", no + 1)))?;
            spec.set(k.trim(), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Set one knob by key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::invalid("model_spec", format!("bad value `{value}` for `{key}`"));
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "backbone" => self.backbone = value.parse()?,
            "input_size" => self.input_size = num(value)?,
            "decoder_channels" => {
                let v = value.split(',').map(num).collect::<Result<Vec<_>>>()?;
                self.decoder_channels = v.try_into().map_err(|_| bad())?;
            }
            "scales" => self.global.scales = value.split(',').map(num).collect::<Result<Vec<_>>>()?,
            "renet_hidden" => self.global.renet_hidden = num(value)?,
            "scale_merge" => {
                self.global.merge = match value {
                    "sum" => ScaleMerge::Sum,
                    "concat" => ScaleMerge::Concat,
                    _ => return Err(bad()),
                }
            }
            "local_kernel" => self.local.kernel = num(value)?,
            "local_dilation" => self.local.dilation = num(value)?,
            _ => return Err(Error::invalid("model_spec", format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// The assembled network: layer layout plus the ordered parameter list.
#[derive(Clone, Debug)]
pub struct Salite {
    pub spec: ModelSpec,
    pub encoder: Encoder,
    pub decoder: Decoder,
    params: Vec<ParamInfo>,
}

/// Saliency maps `[N,1,S,S]` plus intermediate handles.
#[derive(Clone, Debug)]
pub struct Forward {
    pub saliency: Var,
    pub encoder: EncoderOutput,
    pub trace: AttentionTrace,
}

impl Salite {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut reg = Registry::new();
        let enc_spec = spec.encoder_spec();
        let encoder = Encoder::declare(&mut reg, &enc_spec, spec.input_size)?;
        let (tap_ch, bottleneck_ch) = enc_spec.channels();
        let decoder = Decoder::declare(&mut reg, &spec.decoder_spec(), &tap_ch, bottleneck_ch, &spec.global, spec.local)?;
        Ok(Salite {
            spec: spec.clone(),
            encoder,
            decoder,
            params: reg.finish(),
        })
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    /// `img` is `[N,3,S,S]`, normalized; `p` holds one tape variable per parameter.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, img: Var, p: &[Var]) -> Result<Forward> {
        if p.len() != self.params.len() {
            return Err(Error::Dim {
                op: "salite",
                what: "parameter count",
                expected: self.params.len(),
                got: p.len(),
            });
        }
        let encoder = encoder_forward(tape, img, &self.encoder, p)?;
        let (saliency, trace) = decoder_forward(tape, &self.decoder, encoder.bottleneck, &encoder.skips, img, p)?;
        Ok(Forward { saliency, encoder, trace })
    }
}
