//! Reverse-mode differentiation over a recorded operation list.
//!
//! Every forward operation appends a node holding its value and the
//! operands it was computed from. Parameters are referenced from the
//! [`ParameterStore`] rather than copied, so one tape per bag is cheap even
//! for large embedding tables. Gradients of row lookups into a parameter are
//! kept sparse.

use std::collections::{BTreeMap, HashMap};

use super::{ParamId, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::Real;

/// Node handle on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Constant offset; the gradient passes through unchanged.
    AddConst(Var),
    MulConst(Var, Vec<T>),
    Scale(Var, T),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// `[p,q] · [q] -> [p]`
    MatVec(Var, Var),
    /// `[p] · [p,q] -> [q]`
    VecMat(Var, Var),
    /// `x [n,q]`, `w [p,q]` → `x wᵀ [n,p]`
    MatMulT(Var, Var),
    AddRowBias(Var, Var),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Row(Var, usize),
    StackRows(Vec<Var>),
    Softmax(Var),
    SumSq(Var),
    Sum(Var),
    /// `scale · −log softmax(logits)[gold]`
    CrossEntropy {
        logits: Var,
        gold: usize,
        scale: T,
    },
}

#[derive(Debug, Clone)]
enum Slot<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    slot: Slot<T>,
    op: Op<T>,
}

/// Gradient for one parameter: dense, or a set of touched rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Grad<T> {
    Dense(Tensor<T>),
    Rows {
        shape: Vec<usize>,
        rows: BTreeMap<usize, Vec<T>>,
    },
}

impl<T: Real> Grad<T> {
    pub fn to_dense(&self) -> Tensor<T> {
        match self {
            Grad::Dense(t) => t.clone(),
            Grad::Rows { shape, rows } => {
                let mut t = Tensor::zeros(shape);
                for (&r, vals) in rows {
                    for (a, &b) in t.row_mut(r).iter_mut().zip(vals) {
                        *a += b;
                    }
                }
                t
            }
        }
    }

    fn merge(&mut self, other: Grad<T>) {
        match (&mut *self, other) {
            (Grad::Dense(a), Grad::Dense(b)) => a.add_assign(&b),
            (Grad::Rows { rows: a, .. }, Grad::Rows { rows: b, .. }) => {
                for (r, vals) in b {
                    match a.get_mut(&r) {
                        Some(dst) => dst.iter_mut().zip(&vals).for_each(|(x, &y)| *x += y),
                        None => {
                            a.insert(r, vals);
                        }
                    }
                }
            }
            (Grad::Dense(a), rows @ Grad::Rows { .. }) => a.add_assign(&rows.to_dense()),
            (this @ Grad::Rows { .. }, Grad::Dense(b)) => {
                let mut d = this.to_dense();
                d.add_assign(&b);
                *this = Grad::Dense(d);
            }
        }
    }

    fn scale(&mut self, k: T) {
        match self {
            Grad::Dense(t) => t.scale_assign(k),
            Grad::Rows { rows, .. } => rows.values_mut().flatten().for_each(|x| *x *= k),
        }
    }
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, Grad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn new() -> Self {
        Gradients {
            grads: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Grad<T>> {
        self.grads.get(&id)
    }

    /// Dense gradient for `id`, zero when the parameter was off the graph.
    pub fn dense(&self, id: ParamId, shape: &[usize]) -> Tensor<T> {
        self.grads
            .get(&id)
            .map_or_else(|| Tensor::zeros(shape), Grad::to_dense)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn add(&mut self, id: ParamId, grad: Grad<T>) {
        match self.grads.get_mut(&id) {
            Some(g) => g.merge(grad),
            None => {
                self.grads.insert(id, grad);
            }
        }
    }

    pub fn add_dense(&mut self, id: ParamId, grad: Tensor<T>) {
        self.add(id, Grad::Dense(grad));
    }

    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.grads {
            self.add(id, g);
        }
    }

    pub fn scale(&mut self, k: T) {
        self.grads.values_mut().for_each(|g| g.scale(k));
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.values().all(|g| match g {
            Grad::Dense(t) => t.all_finite(),
            Grad::Rows { rows, .. } => rows.values().flatten().all(|x| x.is_finite()),
        })
    }
}

/// Result of a backward sweep: parameter gradients plus per-node gradients.
#[derive(Debug, Clone)]
pub struct Backward<T> {
    pub params: Gradients<T>,
    nodes: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Backward<T> {
    /// Gradient of the loss with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].as_ref()
    }
}

pub struct Tape<'s, T> {
    store: Option<&'s ParameterStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'s, T: Real> Default for Tape<'s, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Real> Tape<'s, T> {
    /// A tape with no parameter store; inputs enter through [`Tape::leaf`].
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_store(store: &'s ParameterStore<T>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].slot {
            Slot::Owned(t) => t,
            Slot::Param(id) => self
                .store
                .expect("parameter node without store")
                .value(*id),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            slot: Slot::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        assert!(self.store.is_some(), "tape has no parameter store");
        self.nodes.push(Node {
            slot: Slot::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::Config("tape has no parameter store".into()))?;
        let id = store.id(name)?;
        Ok(self.param(id))
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: &[T]) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), c.len(), "constant length mismatch");
        let data = x.data().iter().zip(c).map(|(&p, &q)| p + q).collect();
        let v = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(v, Op::AddConst(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Vec<T>) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), c.len(), "constant length mismatch");
        let data = x.data().iter().zip(&c).map(|(&p, &q)| p * q).collect();
        let v = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        self.push(v, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| T::one() - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(T::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let (mv, xv) = (self.value(m), self.value(x));
        let (p, q) = (mv.rows(), mv.cols());
        assert_eq!(xv.len(), q, "matvec inner dimension");
        let out = (0..p)
            .map(|i| dot(mv.row(i), xv.data()))
            .collect::<Vec<_>>();
        self.push(Tensor::vector(out), Op::MatVec(m, x))
    }

    pub fn vecmat(&mut self, x: Var, m: Var) -> Var {
        let (xv, mv) = (self.value(x), self.value(m));
        let (p, q) = (mv.rows(), mv.cols());
        assert_eq!(xv.len(), p, "vecmat inner dimension");
        let mut out = vec![T::zero(); q];
        for (i, &xi) in xv.data().iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(mv.row(i)) {
                *o += xi * w;
            }
        }
        self.push(Tensor::vector(out), Op::VecMat(x, m))
    }

    pub fn matmul_t(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, q) = (xv.rows(), xv.cols());
        let p = wv.rows();
        assert_eq!(wv.cols(), q, "matmul_t inner dimension");
        let mut out = Vec::with_capacity(n * p);
        for a in 0..n {
            let xa = xv.row(a);
            out.extend((0..p).map(|j| dot(xa, wv.row(j))));
        }
        let v = Tensor::new(vec![n, p], out).expect("matmul shape");
        self.push(v, Op::MatMulT(x, w))
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(xv.cols(), bv.len(), "bias width");
        let mut v = xv.clone();
        for r in 0..v.rows() {
            v.row_mut(r)
                .iter_mut()
                .zip(bv.data())
                .for_each(|(a, &c)| *a += c);
        }
        self.push(v, Op::AddRowBias(x, b))
    }

    /// Rows `idx` of a rank-2 table, stacked as `[idx.len(), cols]`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let tv = self.value(table);
        let k = tv.cols();
        let mut out = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            out.extend_from_slice(tv.row(i));
        }
        let v = Tensor::new(vec![idx.len(), k], out).expect("gather shape");
        self.push(v, Op::Gather(table, idx.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), n, "concat row count");
                out.extend_from_slice(pv.row(r));
            }
        }
        let v = Tensor::new(vec![n, total], out).expect("concat shape");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn row(&mut self, x: Var, t: usize) -> Var {
        let v = Tensor::vector(self.value(x).row(t).to_vec());
        self.push(v, Op::Row(x, t))
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let k = self.value(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            let rv = self.value(r);
            assert_eq!(rv.len(), k, "stack width");
            out.extend_from_slice(rv.data());
        }
        let v = Tensor::new(vec![rows.len(), k], out).expect("stack shape");
        self.push(v, Op::StackRows(rows.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = Tensor::vector(super::softmax(self.value(a).data()));
        self.push(v, Op::Softmax(a))
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum_squares());
        self.push(v, Op::SumSq(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// `scale · −log softmax(logits)[gold]`, computed in log space.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize, scale: T) -> Var {
        let lv = self.value(logits).data();
        assert!(gold < lv.len(), "gold class out of range");
        let v = Tensor::scalar(scale * -log_softmax_at(lv, gold));
        self.push(v, Op::CrossEntropy { logits, gold, scale })
    }

    /// Exact gradients of the scalar `loss` with respect to every node and
    /// every parameter reached from it.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Numerical(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let mut params = Gradients::new();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let gd = g.data();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(id) => params.add_dense(*id, g.clone()),
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| axpy(d, gd, T::one()));
                    self.acc(&mut grads, *b, |d| axpy(d, gd, T::one()));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |d| axpy(d, gd, T::one()));
                    self.acc(&mut grads, *b, |d| axpy(d, gd, -T::one()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(gd).zip(bv).for_each(|((x, &g), &y)| *x += g * y)
                    });
                    self.acc(&mut grads, *b, |d| {
                        d.iter_mut().zip(gd).zip(av).for_each(|((x, &g), &y)| *x += g * y)
                    });
                }
                Op::AddConst(a) => self.acc(&mut grads, *a, |d| axpy(d, gd, T::one())),
                Op::MulConst(a, c) => self.acc(&mut grads, *a, |d| {
                    d.iter_mut().zip(gd).zip(c).for_each(|((x, &g), &k)| *x += g * k)
                }),
                Op::Scale(a, k) => self.acc(&mut grads, *a, |d| axpy(d, gd, *k)),
                Op::OneMinus(a) => self.acc(&mut grads, *a, |d| axpy(d, gd, -T::one())),
                Op::Sigmoid(a) | Op::Tanh(a) => {
                    let y = self.value(Var(i)).data();
                    let tanh = matches!(self.nodes[i].op, Op::Tanh(_));
                    self.acc(&mut grads, *a, |d| {
                        for ((x, &g), &yv) in d.iter_mut().zip(gd).zip(y) {
                            let dy = if tanh {
                                T::one() - yv * yv
                            } else {
                                yv * (T::one() - yv)
                            };
                            *x += g * dy;
                        }
                    });
                }
                Op::MatVec(m, x) => {
                    let (mv, xv) = (self.value(*m), self.value(*x));
                    let q = mv.cols();
                    self.acc(&mut grads, *m, |d| {
                        for (r, &gi) in gd.iter().enumerate() {
                            axpy(&mut d[r * q..(r + 1) * q], xv.data(), gi);
                        }
                    });
                    self.acc(&mut grads, *x, |d| {
                        for (r, &gi) in gd.iter().enumerate() {
                            axpy(d, mv.row(r), gi);
                        }
                    });
                }
                Op::VecMat(x, m) => {
                    let (xv, mv) = (self.value(*x), self.value(*m));
                    let q = mv.cols();
                    self.acc(&mut grads, *x, |d| {
                        for (r, dx) in d.iter_mut().enumerate() {
                            *dx += dot(mv.row(r), gd);
                        }
                    });
                    self.acc(&mut grads, *m, |d| {
                        for (r, &xi) in xv.data().iter().enumerate() {
                            axpy(&mut d[r * q..(r + 1) * q], gd, xi);
                        }
                    });
                }
                Op::MatMulT(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, q, p) = (xv.rows(), xv.cols(), wv.rows());
                    self.acc(&mut grads, *x, |d| {
                        for a in 0..n {
                            let da = &mut d[a * q..(a + 1) * q];
                            for j in 0..p {
                                axpy(da, wv.row(j), gd[a * p + j]);
                            }
                        }
                    });
                    self.acc(&mut grads, *w, |d| {
                        for a in 0..n {
                            for j in 0..p {
                                axpy(&mut d[j * q..(j + 1) * q], xv.row(a), gd[a * p + j]);
                            }
                        }
                    });
                }
                Op::AddRowBias(x, b) => {
                    let p = self.value(*b).len();
                    self.acc(&mut grads, *x, |d| axpy(d, gd, T::one()));
                    self.acc(&mut grads, *b, |d| {
                        for row in gd.chunks(p) {
                            axpy(d, row, T::one());
                        }
                    });
                }
                Op::Gather(table, idx) => {
                    let k = self.value(*table).cols();
                    match self.nodes[table.0].op {
                        Op::Param(id) => {
                            let mut rows: BTreeMap<usize, Vec<T>> = BTreeMap::new();
                            for (a, &r) in idx.iter().enumerate() {
                                let dst = rows.entry(r).or_insert_with(|| vec![T::zero(); k]);
                                axpy(dst, &gd[a * k..(a + 1) * k], T::one());
                            }
                            params.add(
                                id,
                                Grad::Rows {
                                    shape: self.value(*table).shape().to_vec(),
                                    rows,
                                },
                            );
                        }
                        _ => self.acc(&mut grads, *table, |d| {
                            for (a, &r) in idx.iter().enumerate() {
                                axpy(&mut d[r * k..(r + 1) * k], &gd[a * k..(a + 1) * k], T::one());
                            }
                        }),
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        self.acc(&mut grads, p, |d| {
                            for (r, drow) in d.chunks_mut(w).enumerate() {
                                axpy(drow, &gd[r * total + offset..r * total + offset + w], T::one());
                            }
                        });
                        offset += w;
                    }
                }
                Op::Row(x, t) => {
                    let k = self.value(*x).cols();
                    self.acc(&mut grads, *x, |d| axpy(&mut d[t * k..(t + 1) * k], gd, T::one()));
                }
                Op::StackRows(rows) => {
                    let k = g.cols();
                    for (r, &v) in rows.iter().enumerate() {
                        self.acc(&mut grads, v, |d| axpy(d, &gd[r * k..(r + 1) * k], T::one()));
                    }
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i)).data();
                    let gy = dot(gd, y);
                    self.acc(&mut grads, *a, |d| {
                        for ((x, &g), &yv) in d.iter_mut().zip(gd).zip(y) {
                            *x += yv * (g - gy);
                        }
                    });
                }
                Op::SumSq(a) => {
                    let av = self.value(*a).data();
                    let two_g = gd[0] + gd[0];
                    self.acc(&mut grads, *a, |d| axpy(d, av, two_g));
                }
                Op::Sum(a) => {
                    let g0 = gd[0];
                    self.acc(&mut grads, *a, |d| d.iter_mut().for_each(|x| *x += g0));
                }
                Op::CrossEntropy {
                    logits,
                    gold,
                    scale,
                } => {
                    let p = super::softmax(self.value(*logits).data());
                    let k = gd[0] * *scale;
                    self.acc(&mut grads, *logits, |d| {
                        for (c, (x, &pc)) in d.iter_mut().zip(&p).enumerate() {
                            let y = if c == *gold { T::one() } else { T::zero() };
                            *x += k * (pc - y);
                        }
                    });
                }
            }
            grads[i] = Some(g);
        }
        Ok(Backward {
            params,
            nodes: grads,
        })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()));
        f(slot.data_mut());
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn axpy<T: Real>(dst: &mut [T], src: &[T], k: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

pub(crate) fn log_softmax_at<T: Real>(logits: &[T], i: usize) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
    logits[i] - lse
}
