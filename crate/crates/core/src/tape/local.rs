use alloc::vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::tensor::dims4;
use crate::{Error, Real, Result, Tensor};

/// Offsets `(dy, dx)` of the dilated `kernel x kernel` neighbourhood, row-major.
pub(crate) fn neighbourhood(kernel: usize, dilation: usize) -> impl Iterator<Item = (isize, isize)> {
    let r = (kernel / 2) as isize;
    let d = dilation as isize;
    (0..kernel * kernel).map(move |i| (((i / kernel) as isize - r) * d, ((i % kernel) as isize - r) * d))
}

fn span(offset: isize, extent: usize) -> (usize, usize) {
    // valid y with 0 <= y + offset < extent
    let lo = (-offset).max(0) as usize;
    let hi = (extent as isize - offset).clamp(0, extent as isize) as usize;
    (lo.min(hi), hi)
}

impl<T: Real> Tape<T> {
    /// Attention-weighted sum over a dilated neighbourhood:
    /// `out[n,c,y,x] = sum_i alpha[n,i,y,x] * x[n,c,y+dy_i,x+dx_i]`, with zeros
    /// outside the map. `alpha` has `kernel^2` channels.
    pub fn local_aggregate(&mut self, x: Var, alpha: Var, kernel: usize, dilation: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.shape(x), "local_aggregate")?;
        let (na, d, ha, wa) = dims4(self.shape(alpha), "local_aggregate")?;
        if kernel.is_multiple_of(2) || dilation == 0 {
            return Err(Error::invalid("local_aggregate", "kernel must be odd and dilation >= 1"));
        }
        if d != kernel * kernel {
            return Err(Error::Dim {
                op: "local_aggregate",
                what: "attention channels (kernel area)",
                expected: kernel * kernel,
                got: d,
            });
        }
        if (na, ha, wa) != (n, h, w) {
            return Err(Error::Shape {
                op: "local_aggregate",
                shape: self.shape(alpha).to_vec(),
                reason: "attention map must match the feature map's batch and spatial extent",
            });
        }
        let (xd, ad) = (self.data(x), self.data(alpha));
        let hw = h * w;
        let mut out = vec![T::zero(); n * c * hw];
        for b in 0..n {
            for (i, (dy, dx)) in neighbourhood(kernel, dilation).enumerate() {
                let (ylo, yhi) = span(dy, h);
                let (xlo, xhi) = span(dx, w);
                let a = &ad[(b * d + i) * hw..(b * d + i + 1) * hw];
                for ch in 0..c {
                    let src = &xd[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for y in ylo..yhi {
                        let sy = (y as isize + dy) as usize;
                        for xx in xlo..xhi {
                            let sx = (xx as isize + dx) as usize;
                            dst[y * w + xx] += a[y * w + xx] * src[sy * w + sx];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        Ok(self.push_op(
            value,
            &[x, alpha],
            Op::LocalAggregate {
                x,
                alpha,
                kernel,
                dilation,
            },
        ))
    }
}

pub(super) fn backward<T: Real>(
    nv: &NodeView<'_, T>,
    x: Var,
    alpha: Var,
    kernel: usize,
    dilation: usize,
    gy: &[T],
    cx: &mut Contribs<T>,
) {
    let (n, c, h, w) = dims4(nv.shape(x), "local_aggregate").expect("validated");
    let d = kernel * kernel;
    let hw = h * w;
    let (xd, ad) = (nv.data(x), nv.data(alpha));
    let (want_x, want_a) = (nv.tracks(x), nv.tracks(alpha));
    let mut dxv = if want_x { vec![T::zero(); xd.len()] } else { vec![] };
    let mut dav = if want_a { vec![T::zero(); ad.len()] } else { vec![] };
    for b in 0..n {
        for (i, (dy, dx)) in neighbourhood(kernel, dilation).enumerate() {
            let (ylo, yhi) = span(dy, h);
            let (xlo, xhi) = span(dx, w);
            let aoff = (b * d + i) * hw;
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    for xx in xlo..xhi {
                        let sx = (xx as isize + dx) as usize;
                        let g = gy[off + y * w + xx];
                        if want_a {
                            dav[aoff + y * w + xx] += g * xd[off + sy * w + sx];
                        }
                        if want_x {
                            dxv[off + sy * w + sx] += g * ad[aoff + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    if want_x {
        cx.push(x, dxv);
    }
    if want_a {
        cx.push(alpha, dav);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn neighbourhood_is_centred_and_dilated() {
        let offs: Vec<_> = neighbourhood(3, 2).collect();
        assert_eq!(offs[0], (-2, -2));
        assert_eq!(offs[4], (0, 0));
        assert_eq!(offs[8], (2, 2));
        assert_eq!(neighbourhood(7, 2).count(), 49);
    }

    #[test]
    fn one_by_one_map_keeps_only_centre_tap() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::new(&[1, 2, 1, 1], vec![3.0, -1.0]).unwrap());
        let alpha = t.constant(Tensor::full(&[1, 49, 1, 1], 1.0 / 49.0));
        let y = t.local_aggregate(x, alpha, 7, 2).unwrap();
        assert_eq!(t.value(y).data(), &[3.0 / 49.0, -1.0 / 49.0]);
    }
}
