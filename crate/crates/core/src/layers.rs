//! Parameterised building blocks shared by the encoder, attention and decoder.

use alloc::format;

use crate::params::{Group, Init, ParamId, Registry};
use crate::tape::{ConvGeom, LstmWeights};
use crate::{Real, Result, Tape, Var};

/// Convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub geom: ConvGeom,
}

impl ConvLayer {
    pub fn declare(reg: &mut Registry, name: &str, group: Group, in_ch: usize, out_ch: usize, kernel: usize, geom: ConvGeom) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = reg.declare(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            group,
            true,
            Init::KaimingUniform { fan_in },
        );
        let bias = reg.declare(format!("{name}.bias"), &[out_ch], group, false, Init::Zeros);
        ConvLayer {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            geom,
        }
    }

    /// Size-preserving `k x k` convolution (stride 1, "same" padding).
    pub fn same(reg: &mut Registry, name: &str, group: Group, in_ch: usize, out_ch: usize, kernel: usize, dilation: usize) -> Self {
        let pad = dilation * (kernel - 1) / 2;
        Self::declare(reg, name, group, in_ch, out_ch, kernel, ConvGeom::new(1, pad, dilation))
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.weight], Some(p[self.bias]), self.geom)
    }

    pub fn forward_relu<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = self.forward(tape, p, x)?;
        Ok(tape.relu(y))
    }
}

/// Weights of one LSTM direction.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayer {
    /// Weights uniform in `±1/sqrt(hidden)`.
    pub fn declare(reg: &mut Registry, name: &str, group: Group, input: usize, hidden: usize) -> Self {
        let init = Init::Uniform {
            bound: 1.0 / libm::sqrt(hidden as f64),
        };
        let w_ih = reg.declare(format!("{name}.w_ih"), &[4 * hidden, input], group, true, init);
        let w_hh = reg.declare(format!("{name}.w_hh"), &[4 * hidden, hidden], group, true, init);
        let bias = reg.declare(format!("{name}.bias"), &[4 * hidden], group, false, init);
        LstmLayer {
            w_ih,
            w_hh,
            bias,
            input,
            hidden,
        }
    }

    pub fn weights(&self, p: &[Var]) -> LstmWeights {
        LstmWeights {
            w_ih: p[self.w_ih],
            w_hh: p[self.w_hh],
            b: p[self.bias],
        }
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }
}
