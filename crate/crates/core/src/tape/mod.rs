//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every forward operation as a node in execution order.
//! Inputs of a node always precede it, so a single reverse scan is a valid
//! topological traversal. Gradients accumulate additively across fan-out.
//!
//! A tape is single-threaded; independent tapes may run concurrently.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

mod conv;
mod elementwise;
mod layout;
mod local;
mod loss;
mod lstm;
mod pool;
mod resize;
mod softmax;

pub use conv::{conv_out_extent, ConvGeom};
pub use elementwise::Unary;
pub use lstm::LstmWeights;
pub use pool::PoolKind;
pub use resize::resize_values;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        k: usize,
        stride: usize,
    },
    Resize {
        x: Var,
    },
    Softmax {
        x: Var,
    },
    Lstm {
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
    Unary {
        x: Var,
        f: Unary,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    AddConst {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Select {
        x: Var,
        index: usize,
    },
    Stack {
        xs: Vec<Var>,
    },
    Bmm {
        a: Var,
        b: Var,
    },
    LocalAggregate {
        x: Var,
        alpha: Var,
        kernel: usize,
        dilation: usize,
    },
    WeightedBce {
        s: Var,
        target: Vec<T>,
        weight: Vec<T>,
    },
    WeightedHuber {
        s: Var,
        target: Vec<T>,
        weight: Vec<T>,
        delta: T,
    },
}

/// Gradient contributions emitted by one node's backward rule.
pub(crate) struct Contribs<T> {
    items: Vec<(Var, Vec<T>)>,
}

impl<T> Contribs<T> {
    fn push(&mut self, v: Var, g: Vec<T>) {
        self.items.push((v, g));
    }
}

/// Record of executed operations plus their values and gradients.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, true, Op::Leaf)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient buffer of `v` after [`Tape::backward`], if any reached it.
    ///
    /// Intermediate nodes release their buffers during the sweep; leaves and
    /// the root keep theirs.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_node(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, requires_grad, op)
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Propagate `d root / d node` to every tracked node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let numel = self.nodes[root.0].value.numel();
        if numel != 1 {
            return Err(Error::NotScalar(self.nodes[root.0].value.shape().to_vec()));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf) {
                node.grad = None;
            }
        }
        self.nodes[root.0].grad = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = (if i == root.0 { node.grad.clone() } else { node.grad.take() }) else {
                continue;
            };
            let mut contribs = Contribs { items: Vec::new() };
            node_backward(before, &node.op, &node.value, &gy, &mut contribs);
            for (v, g) in contribs.items {
                assert!(v.0 < i, "tape order violated: input {} of node {}", v.0, i);
                let target = &mut before[v.0];
                debug_assert_eq!(g.len(), target.value.numel());
                match &mut target.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => target.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Clear every gradient buffer.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }
}

pub(crate) struct NodeView<'a, T> {
    nodes: &'a [Node<T>],
}

impl<'a, T: Real> NodeView<'a, T> {
    fn data(&self, v: Var) -> &'a [T] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &'a [usize] {
        self.nodes[v.0].value.shape()
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }
}

fn node_backward<T: Real>(nodes: &[Node<T>], op: &Op<T>, out: &Tensor<T>, gy: &[T], cx: &mut Contribs<T>) {
    let nv = NodeView { nodes };
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom } => conv::backward(&nv, *x, *w, *b, *geom, out, gy, cx),
        Op::MaxPool { x, argmax } => pool::max_backward(&nv, *x, argmax, gy, cx),
        Op::AvgPool { x, k, stride } => pool::avg_backward(&nv, *x, *k, *stride, out, gy, cx),
        Op::Resize { x } => resize::backward(&nv, *x, out, gy, cx),
        Op::Softmax { x } => softmax::backward(&nv, *x, out, gy, cx),
        Op::Lstm {
            x,
            h,
            c,
            w_ih,
            w_hh,
            b,
            gates,
            tanh_c,
        } => lstm::backward(&nv, [*x, *h, *c, *w_ih, *w_hh, *b], gates, tanh_c, gy, cx),
        Op::Unary { x, f } => elementwise::unary_backward(&nv, *x, *f, out, gy, cx),
        Op::Add { a, b } => {
            if nv.tracks(*a) {
                cx.push(*a, gy.to_vec());
            }
            if nv.tracks(*b) {
                cx.push(*b, gy.to_vec());
            }
        }
        Op::Sub { a, b } => {
            if nv.tracks(*a) {
                cx.push(*a, gy.to_vec());
            }
            if nv.tracks(*b) {
                cx.push(*b, gy.iter().map(|g| -*g).collect());
            }
        }
        Op::Mul { a, b } => {
            if nv.tracks(*a) {
                cx.push(*a, gy.iter().zip(nv.data(*b)).map(|(g, v)| *g * *v).collect());
            }
            if nv.tracks(*b) {
                cx.push(*b, gy.iter().zip(nv.data(*a)).map(|(g, v)| *g * *v).collect());
            }
        }
        Op::Scale { x, s } => {
            if nv.tracks(*x) {
                cx.push(*x, gy.iter().map(|g| *g * *s).collect());
            }
        }
        Op::AddConst { x } | Op::Reshape { x } => {
            if nv.tracks(*x) {
                cx.push(*x, gy.to_vec());
            }
        }
        Op::Sum { x } => {
            if nv.tracks(*x) {
                cx.push(*x, vec![gy[0]; nv.data(*x).len()]);
            }
        }
        Op::Permute { x, perm } => layout::permute_backward(&nv, *x, perm, gy, cx),
        Op::Concat { xs, axis } => layout::concat_backward(&nv, xs, *axis, gy, cx),
        Op::Select { x, index } => layout::select_backward(&nv, *x, *index, gy, cx),
        Op::Stack { xs } => layout::stack_backward(&nv, xs, gy, cx),
        Op::Bmm { a, b } => layout::bmm_backward(&nv, *a, *b, gy, cx),
        Op::LocalAggregate {
            x,
            alpha,
            kernel,
            dilation,
        } => local::backward(&nv, *x, *alpha, *kernel, *dilation, gy, cx),
        Op::WeightedBce { s, target, weight } => loss::bce_backward(&nv, *s, target, weight, gy, cx),
        Op::WeightedHuber {
            s,
            target,
            weight,
            delta,
        } => loss::huber_backward(&nv, *s, target, weight, *delta, gy, cx),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
        assert_eq!(tape.grad(l).unwrap(), &[1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.7));
        let y = tape.add(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn sigmoid_times_constant() {
        let c = 3.5;
        let mut tape = Tape::<f64>::new();
        let logit = tape.param(Tensor::scalar(0.0));
        let s = tape.unary(logit, Unary::Sigmoid);
        let l = tape.scale(s, c);
        tape.backward(l).unwrap();
        assert!((tape.grad(logit).unwrap()[0] - 0.25 * c).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert_eq!(tape.backward(x), Err(Error::NotScalar(vec![2])));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[5.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let build = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.param(Tensor::from_fn(&[1, 2, 5, 5], |i| ((i * 37 % 11) as f32 - 5.0) * 0.1));
            let w = tape.param(Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 13 % 7) as f32 - 3.0) * 0.05));
            let y = tape.conv2d(x, w, None, ConvGeom::new(1, 1, 1)).unwrap();
            let y = tape.unary(y, Unary::Tanh);
            let l = tape.sum(y);
            tape.backward(l).unwrap();
            (tape.grad(x).unwrap().to_vec(), tape.grad(w).unwrap().to_vec())
        };
        let (a, b) = (build(), build());
        assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
