use alloc::vec;
use alloc::vec::Vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::real::{MatMut, MatRef};
use crate::{Error, Real, Result, Tensor};

fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn expect2(shape: &[usize], what: &'static str) -> Result<(usize, usize)> {
    match *shape {
        [a, b] => Ok((a, b)),
        _ => Err(Error::Shape {
            op: "lstm_cell",
            shape: shape.to_vec(),
            reason: what,
        }),
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dim {
            op: "lstm_cell",
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Weights of one LSTM cell; gate blocks are ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[4H, I]`
    pub w_ih: Var,
    /// `[4H, H]`
    pub w_hh: Var,
    /// `[4H]`
    pub b: Var,
}

impl<T: Real> Tape<T> {
    /// One LSTM step for a batch: returns `(h', c')`, each `[B, H]`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, wts: LstmWeights) -> Result<(Var, Var)> {
        let both = self.lstm_cell_packed(x, h, c, wts)?;
        let h_new = self.select(both, 0)?;
        let c_new = self.select(both, 1)?;
        Ok((h_new, c_new))
    }

    /// Same as [`Tape::lstm_cell`] but leaves `h'` and `c'` stacked as `[2, B, H]`.
    pub fn lstm_cell_packed(&mut self, x: Var, h: Var, c: Var, wts: LstmWeights) -> Result<Var> {
        let (bsz, input) = expect2(self.shape(x), "input must be [B, I]")?;
        let (hb, hidden) = expect2(self.shape(h), "hidden state must be [B, H]")?;
        check_dim("hidden state batch", bsz, hb)?;
        let (cb, ch) = expect2(self.shape(c), "cell state must be [B, H]")?;
        check_dim("cell state batch", bsz, cb)?;
        check_dim("cell state width", hidden, ch)?;
        let (g4, wi) = expect2(self.shape(wts.w_ih), "w_ih must be [4H, I]")?;
        check_dim("w_ih rows (4H)", 4 * hidden, g4)?;
        check_dim("w_ih columns (input width)", wi, input)?;
        let (g4h, wh) = expect2(self.shape(wts.w_hh), "w_hh must be [4H, H]")?;
        check_dim("w_hh rows (4H)", 4 * hidden, g4h)?;
        check_dim("w_hh columns (hidden width)", hidden, wh)?;
        check_dim("bias length (4H)", 4 * hidden, self.value(wts.b).numel())?;

        let g = 4 * hidden;
        let mut pre = vec![T::zero(); bsz * g];
        for row in pre.chunks_mut(g) {
            row.copy_from_slice(self.data(wts.b));
        }
        T::gemm(
            bsz,
            input,
            g,
            T::one(),
            MatRef::row_major(self.data(x), input),
            MatRef::transposed(self.data(wts.w_ih), input),
            T::one(),
            MatMut::row_major(&mut pre, g),
        );
        T::gemm(
            bsz,
            hidden,
            g,
            T::one(),
            MatRef::row_major(self.data(h), hidden),
            MatRef::transposed(self.data(wts.w_hh), hidden),
            T::one(),
            MatMut::row_major(&mut pre, g),
        );
        let cd = self.data(c);
        let mut out = vec![T::zero(); 2 * bsz * hidden];
        let mut tanh_c = vec![T::zero(); bsz * hidden];
        for b in 0..bsz {
            let row = &mut pre[b * g..(b + 1) * g];
            for j in 0..hidden {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[hidden + j]);
                let gg = row[2 * hidden + j].tanh();
                let o = sigmoid(row[3 * hidden + j]);
                row[j] = i;
                row[hidden + j] = f;
                row[2 * hidden + j] = gg;
                row[3 * hidden + j] = o;
                let c_new = f * cd[b * hidden + j] + i * gg;
                let tc = c_new.tanh();
                tanh_c[b * hidden + j] = tc;
                out[b * hidden + j] = o * tc;
                out[bsz * hidden + b * hidden + j] = c_new;
            }
        }
        let value = Tensor::new(&[2, bsz, hidden], out)?;
        Ok(self.push_op(
            value,
            &[x, h, c, wts.w_ih, wts.w_hh, wts.b],
            Op::Lstm {
                x,
                h,
                c,
                w_ih: wts.w_ih,
                w_hh: wts.w_hh,
                b: wts.b,
                gates: pre,
                tanh_c,
            },
        ))
    }
}

pub(super) fn backward<T: Real>(nv: &NodeView<'_, T>, vars: [Var; 6], gates: &[T], tanh_c: &[T], gy: &[T], cx: &mut Contribs<T>) {
    let [x, h, c, w_ih, w_hh, b] = vars;
    let (bsz, input) = (nv.shape(x)[0], nv.shape(x)[1]);
    let hidden = nv.shape(h)[1];
    let g = 4 * hidden;
    let cd = nv.data(c);
    let (dh_out, dc_out) = gy.split_at(bsz * hidden);
    let mut da = vec![T::zero(); bsz * g];
    let mut dc_prev = vec![T::zero(); bsz * hidden];
    for bi in 0..bsz {
        let gr = &gates[bi * g..(bi + 1) * g];
        let dar = &mut da[bi * g..(bi + 1) * g];
        for j in 0..hidden {
            let k = bi * hidden + j;
            let (i, f, gg, o) = (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
            let tc = tanh_c[k];
            let dc = dc_out[k] + dh_out[k] * o * (T::one() - tc * tc);
            let d_o = dh_out[k] * tc;
            dar[j] = dc * gg * i * (T::one() - i);
            dar[hidden + j] = dc * cd[k] * f * (T::one() - f);
            dar[2 * hidden + j] = dc * i * (T::one() - gg * gg);
            dar[3 * hidden + j] = d_o * o * (T::one() - o);
            dc_prev[k] = dc * f;
        }
    }
    if nv.tracks(x) {
        let mut dx = vec![T::zero(); bsz * input];
        T::gemm(
            bsz,
            g,
            input,
            T::one(),
            MatRef::row_major(&da, g),
            MatRef::row_major(nv.data(w_ih), input),
            T::zero(),
            MatMut::row_major(&mut dx, input),
        );
        cx.push(x, dx);
    }
    if nv.tracks(h) {
        let mut dh = vec![T::zero(); bsz * hidden];
        T::gemm(
            bsz,
            g,
            hidden,
            T::one(),
            MatRef::row_major(&da, g),
            MatRef::row_major(nv.data(w_hh), hidden),
            T::zero(),
            MatMut::row_major(&mut dh, hidden),
        );
        cx.push(h, dh);
    }
    if nv.tracks(c) {
        cx.push(c, dc_prev);
    }
    if nv.tracks(w_ih) {
        let mut dw = vec![T::zero(); g * input];
        T::gemm(
            g,
            bsz,
            input,
            T::one(),
            MatRef::transposed(&da, g),
            MatRef::row_major(nv.data(x), input),
            T::zero(),
            MatMut::row_major(&mut dw, input),
        );
        cx.push(w_ih, dw);
    }
    if nv.tracks(w_hh) {
        let mut dw = vec![T::zero(); g * hidden];
        T::gemm(
            g,
            bsz,
            hidden,
            T::one(),
            MatRef::transposed(&da, g),
            MatRef::row_major(nv.data(h), hidden),
            T::zero(),
            MatMut::row_major(&mut dw, hidden),
        );
        cx.push(w_hh, dw);
    }
    if nv.tracks(b) {
        let mut db: Vec<T> = vec![T::zero(); g];
        for row in da.chunks(g) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += *v;
            }
        }
        cx.push(b, db);
    }
}
