use alloc::vec;
use alloc::vec::Vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::real::{MatMut, MatRef};
use crate::{Error, Real, Result, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Gather for `out = x.permute(perm)`: `out[idx] = x[src(idx)]`.
fn permute_data<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl<T: Real> Tape<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push_op(value, &[x], Op::Reshape { x }))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape {
                op: "permute",
                shape: shape.to_vec(),
                reason: "permutation does not match rank",
            });
        }
        let (out_shape, data) = permute_data(self.data(x), shape, perm);
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push_op(value, &[x], Op::Permute { x, perm: perm.to_vec() }))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape {
                op: "concat",
                shape: base,
                reason: "axis out of range",
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::Shape {
                    op: "concat",
                    shape: s.to_vec(),
                    reason: "extents off the concat axis must agree",
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, xs, Op::Concat { xs: xs.to_vec(), axis }))
    }

    /// Slice `index` of the leading axis, dropping that axis.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let shape = self.shape(x);
        if shape.is_empty() || index >= shape[0] {
            return Err(Error::Shape {
                op: "select",
                shape: shape.to_vec(),
                reason: "index out of range on leading axis",
            });
        }
        let per: usize = shape[1..].iter().product();
        let out_shape = shape[1..].to_vec();
        let data = self.data(x)[index * per..(index + 1) * per].to_vec();
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push_op(value, &[x], Op::Select { x, index }))
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::invalid("stack", "no inputs"))?;
        let base = self.shape(first).to_vec();
        let mut out = Vec::with_capacity(self.value(first).numel() * xs.len());
        for &v in xs {
            if self.shape(v) != base.as_slice() {
                return Err(Error::Shape {
                    op: "stack",
                    shape: self.shape(v).to_vec(),
                    reason: "stacked tensors must share a shape",
                });
            }
            out.extend_from_slice(self.data(v));
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&base);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push_op(value, xs, Op::Stack { xs: xs.to_vec() }))
    }

    /// Batched matrix product `[N,M,K] x [N,K,P] -> [N,M,P]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m, k) = rank3(self.shape(a))?;
        let (nb, kb, p) = rank3(self.shape(b))?;
        if n != nb {
            return Err(Error::Dim {
                op: "bmm",
                what: "batch",
                expected: n,
                got: nb,
            });
        }
        if k != kb {
            return Err(Error::Dim {
                op: "bmm",
                what: "inner extent",
                expected: k,
                got: kb,
            });
        }
        let mut out = vec![T::zero(); n * m * p];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..n {
            T::gemm(
                m,
                k,
                p,
                T::one(),
                MatRef::row_major(&ad[i * m * k..(i + 1) * m * k], k),
                MatRef::row_major(&bd[i * k * p..(i + 1) * k * p], p),
                T::zero(),
                MatMut::row_major(&mut out[i * m * p..(i + 1) * m * p], p),
            );
        }
        let value = Tensor::new(&[n, m, p], out)?;
        Ok(self.push_op(value, &[a, b], Op::Bmm { a, b }))
    }
}

fn rank3(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Shape {
            op: "bmm",
            shape: shape.to_vec(),
            reason: "expected rank 3",
        }),
    }
}

pub(super) fn permute_backward<T: Real>(nv: &NodeView<'_, T>, x: Var, perm: &[usize], gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(x) {
        return;
    }
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| nv.shape(x)[p]).collect();
    let (_, dx) = permute_data(gy, &out_shape, &inverse);
    cx.push(x, dx);
}

pub(super) fn concat_backward<T: Real>(nv: &NodeView<'_, T>, xs: &[Var], axis: usize, gy: &[T], cx: &mut Contribs<T>) {
    let base = nv.shape(xs[0]);
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = xs.iter().map(|v| nv.shape(*v)[axis]).sum();
    let mut offset = 0;
    for &v in xs {
        let len = nv.shape(v)[axis] * inner;
        if nv.tracks(v) {
            let mut g = Vec::with_capacity(outer * len);
            for o in 0..outer {
                let start = o * total * inner + offset;
                g.extend_from_slice(&gy[start..start + len]);
            }
            cx.push(v, g);
        }
        offset += len;
    }
}

pub(super) fn select_backward<T: Real>(nv: &NodeView<'_, T>, x: Var, index: usize, gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(x) {
        return;
    }
    let mut dx = vec![T::zero(); nv.data(x).len()];
    dx[index * gy.len()..(index + 1) * gy.len()].copy_from_slice(gy);
    cx.push(x, dx);
}

pub(super) fn stack_backward<T: Real>(nv: &NodeView<'_, T>, xs: &[Var], gy: &[T], cx: &mut Contribs<T>) {
    let per = nv.data(xs[0]).len();
    for (i, &v) in xs.iter().enumerate() {
        if nv.tracks(v) {
            cx.push(v, gy[i * per..(i + 1) * per].to_vec());
        }
    }
}

pub(super) fn bmm_backward<T: Real>(nv: &NodeView<'_, T>, a: Var, b: Var, gy: &[T], cx: &mut Contribs<T>) {
    let (n, m, k) = rank3(nv.shape(a)).expect("validated");
    let p = nv.shape(b)[2];
    let (ad, bd) = (nv.data(a), nv.data(b));
    if nv.tracks(a) {
        let mut da = vec![T::zero(); n * m * k];
        for i in 0..n {
            T::gemm(
                m,
                p,
                k,
                T::one(),
                MatRef::row_major(&gy[i * m * p..(i + 1) * m * p], p),
                MatRef::transposed(&bd[i * k * p..(i + 1) * k * p], p),
                T::zero(),
                MatMut::row_major(&mut da[i * m * k..(i + 1) * m * k], k),
            );
        }
        cx.push(a, da);
    }
    if nv.tracks(b) {
        let mut db = vec![T::zero(); n * k * p];
        for i in 0..n {
            T::gemm(
                k,
                m,
                p,
                T::one(),
                MatRef::transposed(&ad[i * m * k..(i + 1) * m * k], k),
                MatRef::row_major(&gy[i * m * p..(i + 1) * m * p], p),
                T::zero(),
                MatMut::row_major(&mut db[i * k * p..(i + 1) * k * p], p),
            );
        }
        cx.push(b, db);
    }
}
