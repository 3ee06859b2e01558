use alloc::vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::tensor::dims4;
use crate::{Error, Real, Result, Tensor};

impl<T: Real> Tape<T> {
    /// Softmax across the channel axis at every pixel of `x [N,D,H,W]`.
    ///
    /// The per-pixel maximum is subtracted before exponentiation.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let (n, d, h, w) = dims4(self.shape(x), "softmax_channels")?;
        if d == 0 {
            return Err(Error::Shape {
                op: "softmax_channels",
                shape: self.shape(x).to_vec(),
                reason: "need at least one channel",
            });
        }
        let xd = self.data(x);
        if let Some(index) = xd.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "softmax_channels",
                index,
            });
        }
        let hw = h * w;
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            let base = b * d * hw;
            for p in 0..hw {
                let mut m = T::neg_infinity();
                for i in 0..d {
                    m = m.max(xd[base + i * hw + p]);
                }
                let mut z = T::zero();
                for i in 0..d {
                    let e = (xd[base + i * hw + p] - m).exp();
                    out[base + i * hw + p] = e;
                    z += e;
                }
                let inv = T::one() / z;
                for i in 0..d {
                    out[base + i * hw + p] *= inv;
                }
            }
        }
        let value = Tensor::new(&[n, d, h, w], out)?;
        Ok(self.push_op(value, &[x], Op::Softmax { x }))
    }
}

pub(super) fn backward<T: Real>(nv: &NodeView<'_, T>, x: Var, out: &Tensor<T>, gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(x) {
        return;
    }
    let (n, d, h, w) = dims4(out.shape(), "softmax_channels").expect("validated");
    let hw = h * w;
    let a = out.data();
    let mut dx = vec![T::zero(); a.len()];
    for b in 0..n {
        let base = b * d * hw;
        for p in 0..hw {
            let mut dot = T::zero();
            for i in 0..d {
                dot += gy[base + i * hw + p] * a[base + i * hw + p];
            }
            for i in 0..d {
                let k = base + i * hw + p;
                dx[k] = a[k] * (gy[k] - dot);
            }
        }
    }
    cx.push(x, dx);
}
