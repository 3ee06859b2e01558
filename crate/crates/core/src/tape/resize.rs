use alloc::vec;
use alloc::vec::Vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::tensor::dims4;
use crate::{Error, Real, Result, Tensor};

/// Source coordinate taps for one output axis under align-corners sampling.
///
/// A single output sample reads the centre of the input axis.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|o| {
            let src = if output == 1 {
                (input - 1) as f64 / 2.0
            } else {
                o as f64 * (input - 1) as f64 / (output - 1) as f64
            };
            let lo = (libm::floor(src) as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

impl<T: Real> Tape<T> {
    /// Align-corners bilinear resampling of `x [N,C,H,W]` to `out_h x out_w`.
    pub fn resize_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (_, _, h, w) = dims4(self.shape(x), "resize_bilinear")?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::Shape {
                op: "resize_bilinear",
                shape: self.shape(x).to_vec(),
                reason: "input and output extents must be >= 1",
            });
        }
        let value = resize_values(self.value(x), out_h, out_w);
        Ok(self.push_op(value, &[x], Op::Resize { x }))
    }
}

/// Align-corners bilinear resampling outside any tape.
pub fn resize_values<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (n, c, h, w) = dims4(x.shape(), "resize_bilinear").expect("rank 4");
    if out_h == h && out_w == w {
        return x.clone();
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
                let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
                dst[oy * out_w + ox] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out).expect("shape")
}

pub(super) fn backward<T: Real>(nv: &NodeView<'_, T>, x: Var, out: &Tensor<T>, gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(x) {
        return;
    }
    let (n, c, h, w) = dims4(nv.shape(x), "resize_bilinear").expect("validated");
    let (_, _, out_h, out_w) = dims4(out.shape(), "resize_bilinear").expect("validated");
    if out_h == h && out_w == w {
        cx.push(x, gy.to_vec());
        return;
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let g = &gy[p * out_h * out_w..(p + 1) * out_h * out_w];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = g[oy * out_w + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] += top * (T::one() - fx);
                d[y0 * w + x1] += top * fx;
                d[y1 * w + x0] += bot * (T::one() - fx);
                d[y1 * w + x1] += bot * fx;
            }
        }
    }
    cx.push(x, dx);
}
