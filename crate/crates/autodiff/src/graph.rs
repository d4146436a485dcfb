use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::exec;
use crate::kernels::{self, ConvGeom};
use crate::{Real, Tensor};

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// Elementwise product with a constant tensor (masks, dropout).
    MulConst(usize, Rc<Tensor<T>>),
    /// `max(x, lo)`, carrying the pass-through mask.
    ClampMin(usize, Rc<Tensor<T>>),
    Affine(usize, T),
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Im2Col(usize, ConvGeom),
    Col2Im(usize, ConvGeom),
    Reshape(usize),
    BroadcastRows(usize),
    SumRows(usize),
    BroadcastLast(usize),
    SumLast(usize),
    BroadcastAll(usize),
    SumAll(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Sigmoid(usize),
    Softplus(usize),
    LogSoftmax(usize),
}

impl<T> Op<T> {
    fn parents(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul { a, b, .. } => [Some(a), Some(b)],
            MulConst(a, _) | ClampMin(a, _) | Affine(a, _) | Im2Col(a, _) | Col2Im(a, _) | Reshape(a)
            | BroadcastRows(a) | SumRows(a) | BroadcastLast(a) | SumLast(a) | BroadcastAll(a)
            | SumAll(a) | Exp(a) | Log(a) | Sqrt(a) | Sigmoid(a) | Softplus(a) | LogSoftmax(a) => {
                [Some(a), None]
            }
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
}

/// Tape of recorded operations. Build one per step and drop it afterwards.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a tensor as an input. Whether it is a parameter or a constant
    /// only matters for what [`Graph::grad`] is asked to differentiate.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The backward pass is recorded on this graph, so the returned
    /// gradients can themselves be differentiated. Inputs that `output`
    /// does not depend on get a zero gradient.
    pub fn grad<'g>(&'g self, output: Var<'g, T>, wrt: &[Var<'g, T>]) -> Vec<Var<'g, T>> {
        assert!(std::ptr::eq(output.graph, self), "output belongs to another graph");
        assert_eq!(output.value().numel(), 1, "grad() needs a scalar output");
        let last = output.id;
        let mut depends = vec![false; last + 1];
        for w in wrt {
            if w.id <= last {
                depends[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..=last {
                if depends[id] {
                    continue;
                }
                depends[id] = nodes[id].op.parents().iter().flatten().any(|&p| depends[p]);
            }
        }

        let mut grads: Vec<Option<Var<'g, T>>> = vec![None; last + 1];
        if depends[last] {
            grads[last] = Some(self.leaf(Tensor::full(output.value().shape(), T::one())));
        }
        for id in (0..=last).rev() {
            let Some(g) = grads[id] else { continue };
            if !depends[id] {
                continue;
            }
            let op = self.nodes.borrow()[id].op.clone();
            for (parent, contribution) in self.vjp(&op, self.var(id), g, &depends) {
                grads[parent] = Some(match grads[parent] {
                    Some(prev) => prev.add(contribution),
                    None => contribution,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => self.leaf(Tensor::zeros(w.value().shape())),
            })
            .collect()
    }

    fn vjp<'g>(
        &'g self,
        op: &Op<T>,
        out: Var<'g, T>,
        g: Var<'g, T>,
        depends: &[bool],
    ) -> Vec<(usize, Var<'g, T>)> {
        use Op::*;
        let v = |id: usize| self.var(id);
        let mut res = Vec::with_capacity(2);
        let mut emit = |id: usize, f: &dyn Fn() -> Var<'g, T>| {
            if depends[id] {
                res.push((id, f()));
            }
        };
        match op {
            Leaf => {}
            Add(a, b) => {
                emit(*a, &|| g);
                emit(*b, &|| g);
            }
            Sub(a, b) => {
                emit(*a, &|| g);
                emit(*b, &|| g.neg());
            }
            Mul(a, b) => {
                emit(*a, &|| g.mul(v(*b)));
                emit(*b, &|| g.mul(v(*a)));
            }
            Div(a, b) => {
                emit(*a, &|| g.div(v(*b)));
                emit(*b, &|| g.mul(out).div(v(*b)).neg());
            }
            MulConst(a, m) | ClampMin(a, m) => emit(*a, &|| g.mul_const(Rc::clone(m))),
            Affine(a, scale) => emit(*a, &|| g.affine(*scale, T::zero())),
            MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                emit(a, &|| {
                    if ta {
                        v(b).matmul_t(g, tb, true)
                    } else {
                        g.matmul_t(v(b), false, !tb)
                    }
                });
                emit(b, &|| {
                    if tb {
                        g.matmul_t(v(a), true, ta)
                    } else {
                        v(a).matmul_t(g, !ta, false)
                    }
                });
            }
            Im2Col(a, geom) => emit(*a, &|| g.col2im(*geom)),
            Col2Im(a, geom) => emit(*a, &|| g.im2col(*geom)),
            Reshape(a) => emit(*a, &|| g.reshape(v(*a).value().shape())),
            BroadcastRows(a) => emit(*a, &|| g.sum_rows()),
            SumRows(a) => emit(*a, &|| g.broadcast_rows(v(*a).value().shape()[0])),
            BroadcastLast(a) => emit(*a, &|| g.sum_last().reshape(v(*a).value().shape())),
            SumLast(a) => emit(*a, &|| g.broadcast_last(v(*a).value().shape())),
            BroadcastAll(a) => emit(*a, &|| g.sum_all()),
            SumAll(a) => emit(*a, &|| g.broadcast_all(v(*a).value().shape())),
            Exp(a) => emit(*a, &|| g.mul(out)),
            Log(a) => emit(*a, &|| g.div(v(*a))),
            Sqrt(a) => emit(*a, &|| {
                // zero at sqrt(0), where the function has no derivative
                let lo = T::of(1e-30);
                let safe = out.clamp_min(lo);
                let live = out.value().map(|x| if x > lo { T::one() } else { T::zero() });
                g.mul_const(Rc::new(live)).div(safe).affine(T::of(0.5), T::zero())
            }),
            Sigmoid(a) => emit(*a, &|| g.mul(out).mul(out.affine(-T::one(), T::one()))),
            Softplus(a) => emit(*a, &|| g.mul(v(*a).sigmoid())),
            LogSoftmax(a) => emit(*a, &|| {
                let shape = out.value().shape().to_vec();
                g.sub(out.exp().mul(g.sum_last().broadcast_last(&shape)))
            }),
        }
        res
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T + Sync + Send) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let (x, y) = (a.data(), b.data());
    let mut out = vec![T::zero(); x.len()];
    exec::fill_with(&mut out, |i| f(x[i], y[i]));
    Tensor::from_vec(a.shape(), out).expect("same shape")
}

fn map<T: Real>(a: &Tensor<T>, f: impl Fn(T) -> T + Sync + Send) -> Tensor<T> {
    let x = a.data();
    let mut out = vec![T::zero(); x.len()];
    exec::fill_with(&mut out, |i| f(x[i]));
    Tensor::from_vec(a.shape(), out).expect("same shape")
}

fn rows_of(shape: &[usize]) -> (usize, usize) {
    let f = shape.last().copied().unwrap_or(1).max(1);
    (shape.iter().product::<usize>() / f, f)
}

impl<'g, T: Real> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    fn same_graph(&self, other: &Var<'g, T>) {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
    }

    fn binary(self, other: Self, f: impl Fn(T, T) -> T + Sync + Send, op: Op<T>) -> Self {
        self.same_graph(&other);
        let v = zip_map(&self.value(), &other.value(), f);
        self.graph.push(v, op)
    }

    pub fn add(self, other: Self) -> Self {
        self.binary(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Self) -> Self {
        self.binary(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Self) -> Self {
        self.binary(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Self) -> Self {
        self.binary(other, |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn mul_const(self, mask: Rc<Tensor<T>>) -> Self {
        let v = zip_map(&self.value(), &mask, |a, m| a * m);
        self.graph.push(v, Op::MulConst(self.id, mask))
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: T, shift: T) -> Self {
        let v = map(&self.value(), |x| scale * x + shift);
        self.graph.push(v, Op::Affine(self.id, scale))
    }

    pub fn scale(self, s: T) -> Self {
        self.affine(s, T::zero())
    }

    pub fn neg(self) -> Self {
        self.affine(-T::one(), T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(self) -> Self {
        self.affine(-T::one(), T::one())
    }

    pub fn square(self) -> Self {
        self.mul(self)
    }

    pub fn clamp_min(self, lo: T) -> Self {
        let x = self.value();
        let mask = map(&x, |v| if v > lo { T::one() } else { T::zero() });
        let v = map(&x, |v| v.max(lo));
        self.graph.push(v, Op::ClampMin(self.id, Rc::new(mask)))
    }

    pub fn leaky_relu(self, slope: T) -> Self {
        let mask = map(&self.value(), |v| if v > T::zero() { T::one() } else { slope });
        self.mul_const(Rc::new(mask))
    }

    pub fn exp(self) -> Self {
        let v = map(&self.value(), |x| x.exp());
        self.graph.push(v, Op::Exp(self.id))
    }

    pub fn ln(self) -> Self {
        let v = map(&self.value(), |x| x.ln());
        self.graph.push(v, Op::Log(self.id))
    }

    pub fn sqrt(self) -> Self {
        let v = map(&self.value(), |x| x.sqrt());
        self.graph.push(v, Op::Sqrt(self.id))
    }

    pub fn sigmoid(self) -> Self {
        let v = map(&self.value(), kernels::sigmoid);
        self.graph.push(v, Op::Sigmoid(self.id))
    }

    pub fn softplus(self) -> Self {
        let v = map(&self.value(), kernels::softplus);
        self.graph.push(v, Op::Softplus(self.id))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Self {
        let x = self.value();
        let v = Tensor::from_vec(x.shape(), kernels::log_softmax(x.data(), x.last_dim())).expect("same shape");
        self.graph.push(v, Op::LogSoftmax(self.id))
    }

    /// 2-D matrix product `self · other`.
    pub fn matmul(self, other: Self) -> Self {
        self.matmul_t(other, false, false)
    }

    /// `op(self) · op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(self, other: Self, ta: bool, tb: bool) -> Self {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D, got {:?}", a.shape());
        assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D, got {:?}", b.shape());
        let (m, k) = if ta { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
        let (k2, n) = if tb { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?} (ta={ta}, tb={tb})", a.shape(), b.shape());
        let c = kernels::matmul(a.data(), b.data(), m, k, n, ta, tb);
        let v = Tensor::from_vec(&[m, n], c).expect("matmul output");
        self.graph.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
        )
    }

    /// Channel-last images `[n, h, w, c]` to patch rows `[n·ho·wo, k·k·c]`.
    pub fn im2col(self, geom: ConvGeom) -> Self {
        let x = self.value();
        let cols = kernels::im2col(x.data(), &geom);
        let v = Tensor::from_vec(&[geom.n * geom.positions(), geom.patch_len()], cols).expect("im2col");
        self.graph.push(v, Op::Im2Col(self.id, geom))
    }

    /// Patch rows back to images `[n, h, w, c]`, summing overlaps.
    pub fn col2im(self, geom: ConvGeom) -> Self {
        let x = self.value();
        let img = kernels::col2im(x.data(), &geom);
        let v = Tensor::from_vec(&[geom.n, geom.h, geom.w, geom.c], img).expect("col2im");
        self.graph.push(v, Op::Col2Im(self.id, geom))
    }

    pub fn reshape(self, shape: &[usize]) -> Self {
        let v = (*self.value()).clone().reshape(shape).expect("reshape size");
        self.graph.push(v, Op::Reshape(self.id))
    }

    /// Collapse all leading axes: `[.., f]` to `[rows, f]`.
    pub fn flatten_rows(self, rows: usize) -> Self {
        let n: usize = self.value().numel();
        self.reshape(&[rows, n / rows.max(1)])
    }

    /// Repeat along a new leading axis: `[..]` to `[rows, ..]`.
    pub fn broadcast_rows(self, rows: usize) -> Self {
        let x = self.value();
        let mut shape = vec![rows];
        shape.extend_from_slice(x.shape());
        let data = x.data().repeat(rows);
        self.graph.push(Tensor::from_vec(&shape, data).expect("broadcast"), Op::BroadcastRows(self.id))
    }

    /// Sum over the leading axis.
    pub fn sum_rows(self) -> Self {
        let x = self.value();
        let rows = x.shape()[0];
        let width = x.numel() / rows.max(1);
        let mut out = vec![T::zero(); width];
        for row in x.data().chunks(width.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let shape = if x.shape().len() > 1 { x.shape()[1..].to_vec() } else { vec![1] };
        self.graph.push(Tensor::from_vec(&shape, out).expect("sum_rows"), Op::SumRows(self.id))
    }

    /// Sum over the last axis.
    pub fn sum_last(self) -> Self {
        let x = self.value();
        let (_, f) = rows_of(x.shape());
        let out: Vec<T> = x.data().chunks(f).map(|c| c.iter().copied().sum()).collect();
        let shape = if x.shape().len() > 1 {
            x.shape()[..x.shape().len() - 1].to_vec()
        } else {
            vec![1]
        };
        self.graph.push(Tensor::from_vec(&shape, out).expect("sum_last"), Op::SumLast(self.id))
    }

    /// Repeat each element along a new last axis to reach `target`.
    pub fn broadcast_last(self, target: &[usize]) -> Self {
        let x = self.value();
        let (rows, f) = rows_of(target);
        assert_eq!(rows, x.numel(), "broadcast_last {:?} -> {:?}", x.shape(), target);
        let mut data = Vec::with_capacity(rows * f);
        for &v in x.data() {
            data.extend(std::iter::repeat_n(v, f));
        }
        self.graph.push(Tensor::from_vec(target, data).expect("broadcast"), Op::BroadcastLast(self.id))
    }

    pub fn sum_all(self) -> Self {
        let s: T = self.value().data().iter().copied().sum();
        self.graph.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn broadcast_all(self, target: &[usize]) -> Self {
        let x = self.value();
        assert_eq!(x.numel(), 1, "broadcast_all needs a scalar");
        self.graph.push(Tensor::full(target, x.item()), Op::BroadcastAll(self.id))
    }

    pub fn mean(self) -> Self {
        let n = self.value().numel().max(1);
        self.sum_all().scale(T::one() / T::of(n as f64))
    }

    /// `x + b` with `b` broadcast over every leading axis of `x`.
    pub fn add_bias(self, bias: Self) -> Self {
        let shape = self.shape();
        let width = bias.value().numel();
        let rows = self.value().numel() / width.max(1);
        let b = bias.reshape(&[width]).broadcast_rows(rows).reshape(&shape);
        self.add(b)
    }

    /// Select entry `labels[i]` from row `i` of a `[n, c]` matrix.
    pub fn pick(self, labels: &[usize]) -> Self {
        let x = self.value();
        let (rows, c) = rows_of(x.shape());
        assert_eq!(rows, labels.len(), "pick: one label per row");
        let mut onehot = vec![T::zero(); rows * c];
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "label {y} out of range for width {c}");
            onehot[i * c + y] = T::one();
        }
        let mask = Tensor::from_vec(x.shape(), onehot).expect("one-hot");
        self.mul_const(Rc::new(mask)).sum_last()
    }
}
