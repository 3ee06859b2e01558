use alloc::vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::tape::conv::{conv_out_extent, ConvGeom};
use crate::tensor::dims4;
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

fn pooled(shape: &[usize], k: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = dims4(shape, "pool2d")?;
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(Error::Shape {
            op: "pool2d",
            shape: shape.to_vec(),
            reason: "window must be >= 1 and fit inside the spatial extent",
        });
    }
    let g = ConvGeom::new(stride, 0, 1);
    let ho = conv_out_extent(h, k, g).expect("window fits");
    let wo = conv_out_extent(w, k, g).expect("window fits");
    Ok((n, c, h, w, ho, wo))
}

impl<T: Real> Tape<T> {
    /// Unpadded `k x k` pooling. Max pooling routes the gradient to the first
    /// maximal cell of each window in row-major order.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w, ho, wo) = pooled(self.shape(x), k, stride)?;
        let xd = self.data(x);
        let mut out = vec![T::zero(); n * c * ho * wo];
        match kind {
            PoolKind::Max => {
                let mut argmax = vec![0usize; out.len()];
                for p in 0..n * c {
                    let base = p * h * w;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut best = base + oy * stride * w + ox * stride;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                                    if xd[idx] > xd[best] {
                                        best = idx;
                                    }
                                }
                            }
                            let o = (p * ho + oy) * wo + ox;
                            out[o] = xd[best];
                            argmax[o] = best;
                        }
                    }
                }
                let value = Tensor::new(&[n, c, ho, wo], out)?;
                Ok(self.push_op(value, &[x], Op::MaxPool { x, argmax }))
            }
            PoolKind::Avg => {
                let inv = T::one() / T::from_f64((k * k) as f64);
                for p in 0..n * c {
                    let base = p * h * w;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = T::zero();
                            for ky in 0..k {
                                let row = base + (oy * stride + ky) * w + ox * stride;
                                for kx in 0..k {
                                    acc += xd[row + kx];
                                }
                            }
                            out[(p * ho + oy) * wo + ox] = acc * inv;
                        }
                    }
                }
                let value = Tensor::new(&[n, c, ho, wo], out)?;
                Ok(self.push_op(value, &[x], Op::AvgPool { x, k, stride }))
            }
        }
    }
}

pub(super) fn max_backward<T: Real>(nv: &NodeView<'_, T>, x: Var, argmax: &[usize], gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(x) {
        return;
    }
    let mut dx = vec![T::zero(); nv.data(x).len()];
    for (g, &src) in gy.iter().zip(argmax) {
        dx[src] += *g;
    }
    cx.push(x, dx);
}

pub(super) fn avg_backward<T: Real>(
    nv: &NodeView<'_, T>,
    x: Var,
    k: usize,
    stride: usize,
    out: &Tensor<T>,
    gy: &[T],
    cx: &mut Contribs<T>,
) {
    if !nv.tracks(x) {
        return;
    }
    let (_, _, h, w) = dims4(nv.shape(x), "pool2d").expect("validated");
    let (n, c, ho, wo) = dims4(out.shape(), "pool2d").expect("validated");
    let inv = T::one() / T::from_f64((k * k) as f64);
    let mut dx = vec![T::zero(); nv.data(x).len()];
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let g = gy[(p * ho + oy) * wo + ox] * inv;
                for ky in 0..k {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..k {
                        dx[row + kx] += g;
                    }
                }
            }
        }
    }
    cx.push(x, dx);
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn run(kind: PoolKind, data: alloc::vec::Vec<f64>, side: usize, k: usize, s: usize) -> Tensor<f64> {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[1, 1, side, side], data).unwrap());
        let y = t.pool2d(x, kind, k, s).unwrap();
        t.value(y).clone()
    }

    #[test]
    fn two_by_two_enumeration() {
        assert_eq!(run(PoolKind::Max, vec![1.0, 2.0, 3.0, 4.0], 2, 2, 2).data(), &[4.0]);
        assert_eq!(run(PoolKind::Avg, vec![1.0, 2.0, 3.0, 4.0], 2, 2, 2).data(), &[2.5]);
    }

    #[test]
    fn constant_input_is_preserved() {
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let y = run(kind, vec![0.75; 49], 7, 3, 2);
            assert_eq!(y.shape(), &[1, 1, 3, 3]);
            assert!(y.data().iter().all(|v| *v == 0.75));
        }
    }

    #[test]
    fn squeezenet_downsampling_extents() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[1, 1, 111, 111]));
        let y = t.pool2d(x, PoolKind::Max, 3, 2).unwrap();
        assert_eq!(t.shape(y), &[1, 1, 55, 55]);
        let z = t.pool2d(y, PoolKind::Max, 3, 2).unwrap();
        assert_eq!(t.shape(z), &[1, 1, 27, 27]);
    }

    #[test]
    fn window_larger_than_input_is_an_error() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(matches!(t.pool2d(x, PoolKind::Max, 3, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn max_tie_routes_gradient_to_first_cell() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::new(&[1, 1, 2, 2], vec![1.0, 5.0, 5.0, 5.0]).unwrap());
        let y = t.pool2d(x, PoolKind::Max, 2, 2).unwrap();
        let l = t.sum(y);
        t.backward(l).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
