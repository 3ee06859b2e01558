use alloc::vec::Vec;

use super::{Contribs, NodeView, Op, Tape, Var};
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    /// Subgradient at exactly 0 is 0.
    Relu,
    Sigmoid,
    Tanh,
}

impl Unary {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Unary::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Unary::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Unary::Tanh => v.tanh(),
        }
    }

    /// Derivative written in terms of the input `x` and output `y`.
    fn deriv<T: Real>(self, x: T, y: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Tanh => T::one() - y * y,
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let xv = self.value(x);
        let data: Vec<T> = xv.data().iter().map(|v| f.apply(*v)).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push_op(value, &[x], Op::Unary { x, f })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                shape: self.shape(b).to_vec(),
                reason: "operands must have identical shapes (no broadcasting)",
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(self.shape(a), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push_op(v, &[a, b], Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push_op(v, &[a, b], Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push_op(v, &[a, b], Op::Mul { a, b }))
    }

    /// Multiply by a scalar constant.
    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let xv = self.value(x);
        let v = Tensor::new(xv.shape(), xv.data().iter().map(|e| *e * s).collect()).expect("same shape");
        self.push_op(v, &[x], Op::Scale { x, s })
    }

    /// Add a scalar constant (no gradient flows to the constant).
    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let xv = self.value(x);
        let v = Tensor::new(xv.shape(), xv.data().iter().map(|e| *e + c).collect()).expect("same shape");
        self.push_op(v, &[x], Op::AddConst { x })
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum::<T>();
        self.push_op(Tensor::scalar(s), &[x], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_f64(self.value(x).numel() as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }
}

pub(super) fn unary_backward<T: Real>(nv: &NodeView<'_, T>, x: Var, f: Unary, out: &Tensor<T>, gy: &[T], cx: &mut Contribs<T>) {
    if !nv.tracks(x) {
        return;
    }
    let dx = nv
        .data(x)
        .iter()
        .zip(out.data())
        .zip(gy)
        .map(|((xv, yv), g)| *g * f.deriv(*xv, *yv))
        .collect();
    cx.push(x, dx);
}
