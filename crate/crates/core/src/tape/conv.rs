use alloc::vec;
use alloc::vec::Vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::real::{MatMut, MatRef};
use crate::tensor::dims4;
use crate::{Error, Real, Result, Tensor};

/// Stride, zero padding and dilation of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        ConvGeom { stride, pad, dilation }
    }
}

/// `floor((extent + 2 pad - dilation (k - 1) - 1) / stride) + 1`, or `None`
/// when the dilated kernel does not fit.
pub fn conv_out_extent(extent: usize, k: usize, geom: ConvGeom) -> Option<usize> {
    if k == 0 || geom.stride == 0 || geom.dilation == 0 {
        return None;
    }
    let span = geom.dilation * (k - 1) + 1;
    let padded = extent + 2 * geom.pad;
    if padded < span {
        return None;
    }
    Some((padded - span) / geom.stride + 1)
}

struct Plan {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    geom: ConvGeom,
}

impl Plan {
    fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    /// 1x1, stride 1, no padding: the input plane is already the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == 1 && self.geom.pad == 0
    }

    fn tap_range(&self, k: usize, out: usize, extent: usize) -> (isize, usize, usize) {
        // input index = o * stride + k * dilation - pad; valid outputs [lo, hi)
        let off = (k * self.geom.dilation) as isize - self.geom.pad as isize;
        let s = self.geom.stride as isize;
        let mut lo = 0isize;
        while lo < out as isize && lo * s + off < 0 {
            lo += 1;
        }
        let mut hi = out as isize;
        while hi > lo && (hi - 1) * s + off >= extent as isize {
            hi -= 1;
        }
        (off, lo as usize, hi as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (h, w, ho, wo) = (self.h, self.w, self.ho, self.wo);
        let s = self.geom.stride;
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.kh {
                let (offy, ylo, yhi) = self.tap_range(ky, ho, h);
                for kx in 0..self.kw {
                    let (offx, xlo, xhi) = self.tap_range(kx, wo, w);
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    dst.fill(T::zero());
                    if xlo >= xhi {
                        continue;
                    }
                    for oy in ylo..yhi {
                        let iy = (oy as isize * s as isize + offy) as usize;
                        let src = &plane[iy * w..(iy + 1) * w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let ix0 = (xlo as isize + offx) as usize;
                            drow[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for ox in xlo..xhi {
                                drow[ox] = src[(ox as isize * s as isize + offx) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (h, w, ho, wo) = (self.h, self.w, self.ho, self.wo);
        let s = self.geom.stride;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.kh {
                let (offy, ylo, yhi) = self.tap_range(ky, ho, h);
                for kx in 0..self.kw {
                    let (offx, xlo, xhi) = self.tap_range(kx, wo, w);
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oy in ylo..yhi {
                        let iy = (oy as isize * s as isize + offy) as usize;
                        let drow = &mut plane[iy * w..(iy + 1) * w];
                        let srow = &src[oy * wo..(oy + 1) * wo];
                        for ox in xlo..xhi {
                            drow[(ox as isize * s as isize + offx) as usize] += srow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn plan(x: &[usize], w: &[usize], geom: ConvGeom) -> Result<Plan> {
    let (n, cin, h, wd) = dims4(x, "conv2d")?;
    let (cout, wcin, kh, kw) = dims4(w, "conv2d")?;
    if wcin != cin {
        return Err(Error::Dim {
            op: "conv2d",
            what: "input channels (weight vs input)",
            expected: wcin,
            got: cin,
        });
    }
    let bad = |reason| Error::Shape {
        op: "conv2d",
        shape: x.to_vec(),
        reason,
    };
    if geom.stride == 0 || geom.dilation == 0 {
        return Err(bad("stride and dilation must be >= 1"));
    }
    let ho = conv_out_extent(h, kh, geom).ok_or(bad("dilated kernel taller than padded input"))?;
    let wo = conv_out_extent(wd, kw, geom).ok_or(bad("dilated kernel wider than padded input"))?;
    Ok(Plan {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        ho,
        wo,
        geom,
    })
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x [N,Cin,H,W]` with `w [Cout,Cin,kh,kw]` plus an
    /// optional bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let p = plan(self.shape(x), self.shape(w), geom)?;
        if let Some(b) = b {
            if self.value(b).numel() != p.cout {
                return Err(Error::Dim {
                    op: "conv2d",
                    what: "bias length",
                    expected: p.cout,
                    got: self.value(b).numel(),
                });
            }
        }
        let (k, hw) = (p.cols_rows(), p.out_hw());
        let mut out = vec![T::zero(); p.n * p.cout * hw];
        let mut cols = if p.is_pointwise() { Vec::new() } else { vec![T::zero(); k * hw] };
        let xd = self.data(x);
        let wd = self.data(w);
        for n in 0..p.n {
            let xn = &xd[n * p.cin * p.h * p.w..(n + 1) * p.cin * p.h * p.w];
            let colm = if p.is_pointwise() {
                xn
            } else {
                p.im2col(xn, &mut cols);
                &cols[..]
            };
            let on = &mut out[n * p.cout * hw..(n + 1) * p.cout * hw];
            if let Some(b) = b {
                let bd = self.data(b);
                for (co, row) in on.chunks_mut(hw).enumerate() {
                    row.fill(bd[co]);
                }
            }
            T::gemm(
                p.cout,
                k,
                hw,
                T::one(),
                MatRef::row_major(wd, k),
                MatRef::row_major(colm, hw),
                if b.is_some() { T::one() } else { T::zero() },
                MatMut::row_major(on, hw),
            );
        }
        let value = Tensor::new(&[p.n, p.cout, p.ho, p.wo], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push_op(value, &inputs, Op::Conv2d { x, w, b, geom }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Real>(
    nv: &NodeView<'_, T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
    _out: &Tensor<T>,
    gy: &[T],
    cx: &mut Contribs<T>,
) {
    let p = plan(nv.shape(x), nv.shape(w), geom).expect("shapes validated in forward");
    let (k, hw) = (p.cols_rows(), p.out_hw());
    let xd = nv.data(x);
    let wd = nv.data(w);
    let want_x = nv.tracks(x);
    let want_w = nv.tracks(w);
    let mut dw = if want_w { vec![T::zero(); p.cout * k] } else { Vec::new() };
    let mut dx = if want_x { vec![T::zero(); xd.len()] } else { Vec::new() };
    let mut cols = if p.is_pointwise() { Vec::new() } else { vec![T::zero(); k * hw] };
    let mut dcols = if want_x && !p.is_pointwise() { vec![T::zero(); k * hw] } else { Vec::new() };
    let plane = p.cin * p.h * p.w;
    for n in 0..p.n {
        let gn = &gy[n * p.cout * hw..(n + 1) * p.cout * hw];
        if want_w {
            let xn = &xd[n * plane..(n + 1) * plane];
            let colm = if p.is_pointwise() {
                xn
            } else {
                p.im2col(xn, &mut cols);
                &cols[..]
            };
            // dW += gy_n * cols^T
            T::gemm(
                p.cout,
                hw,
                k,
                T::one(),
                MatRef::row_major(gn, hw),
                MatRef::transposed(colm, hw),
                T::one(),
                MatMut::row_major(&mut dw, k),
            );
        }
        if want_x {
            // dcols = W^T * gy_n
            let target: &mut [T] = if p.is_pointwise() { &mut dx[n * plane..(n + 1) * plane] } else { &mut dcols };
            T::gemm(
                k,
                p.cout,
                hw,
                T::one(),
                MatRef::transposed(wd, k),
                MatRef::row_major(gn, hw),
                T::zero(),
                MatMut::row_major(target, hw),
            );
            if !p.is_pointwise() {
                p.col2im(&dcols, &mut dx[n * plane..(n + 1) * plane]);
            }
        }
    }
    if want_x {
        cx.push(x, dx);
    }
    if want_w {
        cx.push(w, dw);
    }
    if let Some(b) = b {
        if nv.tracks(b) {
            let mut db = vec![T::zero(); p.cout];
            for n in 0..p.n {
                for (co, acc) in db.iter_mut().enumerate() {
                    let row = &gy[(n * p.cout + co) * hw..(n * p.cout + co + 1) * hw];
                    *acc += row.iter().copied().sum::<T>();
                }
            }
            cx.push(b, db);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Direct nested-loop cross-correlation, independent of im2col/gemm.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], g: ConvGeom) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4("t").unwrap();
        let (cout, _, kh, kw) = w.dims4("t").unwrap();
        let ho = conv_out_extent(h, kh, g).unwrap();
        let wo = conv_out_extent(wd, kw, g).unwrap();
        Tensor::from_fn(&[n, cout, ho, wo], |i| {
            let ox = i % wo;
            let oy = (i / wo) % ho;
            let co = (i / (wo * ho)) % cout;
            let nn = i / (wo * ho * cout);
            let mut acc = b[co];
            for ci in 0..cin {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kx * g.dilation) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x.at4(nn, ci, iy as usize, ix as usize) * w.at4(co, ci, ky, kx);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(conv_out_extent(224, 3, ConvGeom::new(2, 0, 1)), Some(111));
        assert_eq!(conv_out_extent(27, 3, ConvGeom::new(1, 12, 12)), Some(27));
        assert_eq!(conv_out_extent(2, 3, ConvGeom::new(1, 0, 1)), None);
        assert_eq!(conv_out_extent(5, 3, ConvGeom::new(1, 0, 3)), None);
    }

    #[test]
    fn padding_wider_than_input() {
        let x = Tensor::from_fn(&[1, 2, 1, 2], |i| i as f64 + 1.0);
        let w = Tensor::from_fn(&[1, 2, 7, 7], |i| (i % 5) as f64 - 2.0);
        let g = ConvGeom::new(1, 6, 2);
        let mut t = Tape::<f64>::new();
        let xv = t.param(x.clone());
        let wv = t.constant(w.clone());
        let y = t.conv2d(xv, wv, None, g).unwrap();
        assert_eq!(t.value(y), &naive(&x, &w, &[0.0], g));
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(t.grad(xv).is_some());
    }

    #[test]
    fn hand_cross_correlation() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = t.constant(Tensor::full(&[1, 1, 2, 2], 1.0));
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2d(x, w, Some(b), ConvGeom::new(1, 0, 1)).unwrap();
        assert_eq!(t.value(y).data(), &[10.0]);
    }

    #[test]
    fn identity_kernel_returns_input() {
        let mut t = Tape::<f32>::new();
        let xv = Tensor::from_fn(&[2, 1, 3, 4], |i| i as f32 * 0.5 - 2.0);
        let x = t.constant(xv.clone());
        let w = t.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = t.constant(Tensor::zeros(&[1]));
        let y = t.conv2d(x, w, Some(b), ConvGeom::new(1, 0, 1)).unwrap();
        assert_eq!(t.value(y), &xv);
    }

    #[test]
    fn stem_shape_on_224_input() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[1, 1, 224, 224]));
        let w = t.constant(Tensor::zeros(&[4, 1, 3, 3]));
        let y = t.conv2d(x, w, None, ConvGeom::new(2, 0, 1)).unwrap();
        assert_eq!(t.shape(y), &[1, 4, 111, 111]);
    }

    #[test]
    fn channel_mismatch_names_both_counts() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Tensor::zeros(&[1, 3, 5, 5]));
        let w = t.constant(Tensor::zeros(&[2, 4, 3, 3]));
        let err = t.conv2d(x, w, None, ConvGeom::new(1, 1, 1)).unwrap_err();
        assert_eq!(
            err,
            Error::Dim {
                op: "conv2d",
                what: "input channels (weight vs input)",
                expected: 4,
                got: 3
            }
        );
    }

    #[test]
    fn matches_naive_loops_over_geometries() {
        let geoms = [
            ConvGeom::new(1, 0, 1),
            ConvGeom::new(1, 1, 1),
            ConvGeom::new(2, 0, 1),
            ConvGeom::new(2, 1, 1),
            ConvGeom::new(1, 2, 2),
            ConvGeom::new(1, 6, 2),
            ConvGeom::new(3, 2, 2),
        ];
        for (gi, g) in geoms.iter().enumerate() {
            for &k in &[1usize, 3] {
                let xv = Tensor::from_fn(&[2, 3, 9, 8], |i| ((i * 7919 + gi) % 23) as f64 / 11.0 - 1.0);
                let wv = Tensor::from_fn(&[4, 3, k, k], |i| ((i * 104729) % 17) as f64 / 8.0 - 1.0);
                let bv = vec![0.5, -0.25, 0.0, 1.0];
                let Some(_) = conv_out_extent(9, k, *g) else { continue };
                let mut t = Tape::<f64>::new();
                let x = t.constant(xv.clone());
                let w = t.constant(wv.clone());
                let b = t.constant(Tensor::new(&[4], bv.clone()).unwrap());
                let y = t.conv2d(x, w, Some(b), *g).unwrap();
                let want = naive(&xv, &wv, &bv, *g);
                assert_eq!(t.shape(y), want.shape());
                for (a, e) in t.value(y).data().iter().zip(want.data()) {
                    assert!((a - e).abs() < 1e-12, "geom {g:?} k {k}: {a} vs {e}");
                }
            }
        }
    }
}
