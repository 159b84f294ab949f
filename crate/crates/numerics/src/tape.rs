//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its value and, when any input
//! requires a gradient, the information its backward rule needs. Nodes
//! are appended after their inputs, so the tape is always in topological
//! order and [`Tape::backward`] is a single reverse sweep.
//!
//! Handles ([`Var`]) are plain indices; all methods take `&self` so that
//! calls nest naturally: `t.tanh(t.add(t.matmul(x, w), b))`.
//!
//! Shape mismatches inside an expression are programming errors and
//! panic. Non-finite values are not: the first operation to produce one is
//! remembered and reported by [`Tape::check`] and [`Tape::backward`].

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is stretched to the left's shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

type CustomBackward<S> = Box<dyn Fn(&Tensor<S>, &Tensor<S>, &Tensor<S>) -> Tensor<S> + Send>;

enum Op<S> {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, S),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var, S),
    Softmax(Var),
    NormalizeRows(Var),
    Sum(Var),
    SumRows(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    ScatterCols(Var, Vec<usize>),
    Custom(Var, CustomBackward<S>),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner<S> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    first_non_finite: Option<&'static str>,
}

pub struct Tape<S> {
    inner: RefCell<Inner<S>>,
    recording: bool,
    consumed: Cell<bool>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    /// Keyed by parameter name; parameters unused by the loss are absent.
    pub params: BTreeMap<String, Tensor<S>>,
    inputs: HashMap<Var, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn empty() -> Self {
        Self {
            params: BTreeMap::new(),
            inputs: HashMap::new(),
        }
    }

    /// Gradient wrt a leaf created with [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.inputs.get(&v)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    /// Elementwise accumulation of another pass's parameter gradients.
    pub fn accumulate(&mut self, other: &Gradients<S>) {
        for (name, g) in &other.params {
            match self.params.get_mut(name) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.params.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: S) {
        for g in self.params.values_mut() {
            g.scale_assign(s);
        }
    }

    pub fn global_norm(&self) -> S {
        self.params
            .values()
            .map(Tensor::norm_sq)
            .fold(S::zero(), |a, b| a + b)
            .sqrt()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                params: HashMap::new(),
                first_non_finite: None,
            }),
            recording: true,
            consumed: Cell::new(false),
        }
    }

    /// A tape that only evaluates: nothing is kept for a backward pass.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool, name: &'static str) -> Var {
        let mut inner = self.inner.borrow_mut();
        if inner.first_non_finite.is_none() && !value.is_finite() {
            inner.first_non_finite = Some(name);
        }
        let requires_grad = requires_grad && self.recording;
        let op = if requires_grad { op } else { Op::Leaf };
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(inner.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let inner = self.inner.borrow();
        vars.iter().any(|v| inner.nodes[v.0].requires_grad)
    }

    /// Value of a node (cloned).
    pub fn value(&self, v: Var) -> Tensor<S> {
        self.inner.borrow().nodes[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.inner.borrow().nodes[v.0].value.shape().to_vec()
    }

    /// First element of a node's value.
    pub fn item(&self, v: Var) -> S {
        self.inner.borrow().nodes[v.0].value.item()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor<S>) -> R) -> R {
        f(&self.inner.borrow().nodes[v.0].value)
    }

    /// Errors if any operation so far produced a non-finite value.
    pub fn check(&self) -> Result<()> {
        match self.inner.borrow().first_non_finite {
            Some(op) => Err(NumericsError::NonFinite { op }),
            None => Ok(()),
        }
    }

    pub fn constant(&self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// A leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn input(&self, t: Tensor<S>) -> Var {
        self.push(t, Op::Leaf, true, "input")
    }

    /// Registers (once per tape) the named parameter as a trainable leaf.
    pub fn param(&self, store: &ParamStore<S>, name: &str) -> Var {
        if let Some(&v) = self.inner.borrow().params.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
            .clone();
        let v = self.push(value, Op::Leaf, true, "param");
        self.inner.borrow_mut().params.insert(name.to_string(), v);
        v
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Bcast {
        let inner = self.inner.borrow();
        let sa = inner.nodes[a.0].value.shape();
        let sb = inner.nodes[b.0].value.shape();
        if sa == sb {
            Bcast::Same
        } else if sb == [1, 1] {
            Bcast::Scalar
        } else if sb.len() == 2 && sb[0] == 1 && sa.len() == 2 && sa[1] == sb[1] {
            Bcast::Row
        } else {
            panic!("{op}: incompatible shapes {sa:?} and {sb:?}")
        }
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> (Tensor<S>, Bcast) {
        let mode = self.bcast(name, a, b);
        let inner = self.inner.borrow();
        let x = &inner.nodes[a.0].value;
        let y = &inner.nodes[b.0].value;
        let out = match mode {
            Bcast::Same => x.zip_map(y, f),
            Bcast::Scalar => {
                let s = y.item();
                x.map(|v| f(v, s))
            }
            Bcast::Row => {
                let n = x.cols();
                let yd = y.data();
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| f(v, yd[i % n]))
                    .collect();
                Tensor::new(x.shape().to_vec(), data).expect("same shape")
            }
        };
        (out, mode)
    }

    /// `a + b`; `b` may be a `[1, n]` row or a `[1, 1]` scalar broadcast over `a`.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (out, mode) = self.binary("add", a, b, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        self.push(out, Op::Add(a, b, mode), rg, "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (out, mode) = self.binary("sub", a, b, |x, y| x - y);
        let rg = self.needs(&[a, b]);
        self.push(out, Op::Sub(a, b, mode), rg, "sub")
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (out, mode) = self.binary("mul", a, b, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        self.push(out, Op::Mul(a, b, mode), rg, "mul")
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&self, x: Var, scale: S, shift: S) -> Var {
        let out = self.with_value(x, |t| t.map(|v| scale * v + shift));
        let rg = self.needs(&[x]);
        self.push(out, Op::Affine(x, scale), rg, "affine")
    }

    pub fn scale(&self, x: Var, s: S) -> Var {
        self.affine(x, s, S::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&self, x: Var) -> Var {
        self.affine(x, -S::one(), S::one())
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            inner.nodes[a.0]
                .value
                .matmul(&inner.nodes[b.0].value)
                .unwrap_or_else(|e| panic!("{e}"))
        };
        let rg = self.needs(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&self, a: Var, b: Var) -> Var {
        let out = {
            let inner = self.inner.borrow();
            inner.nodes[a.0]
                .value
                .matmul_t(&inner.nodes[b.0].value)
                .unwrap_or_else(|e| panic!("{e}"))
        };
        let rg = self.needs(&[a, b]);
        self.push(out, Op::MatMulT(a, b), rg, "matmul_t")
    }

    pub fn transpose(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| t.transpose().unwrap_or_else(|e| panic!("{e}")));
        let rg = self.needs(&[x]);
        self.push(out, Op::Transpose(x), rg, "transpose")
    }

    pub fn tanh(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| t.map(S::tanh));
        let rg = self.needs(&[x]);
        self.push(out, Op::Tanh(x), rg, "tanh")
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| t.map(sigmoid));
        let rg = self.needs(&[x]);
        self.push(out, Op::Sigmoid(x), rg, "sigmoid")
    }

    pub fn exp(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| t.map(S::exp));
        let rg = self.needs(&[x]);
        self.push(out, Op::Exp(x), rg, "exp")
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_floor(&self, x: Var, floor: S) -> Var {
        let out = self.with_value(x, |t| t.map(|v| v.max(floor).ln()));
        let rg = self.needs(&[x]);
        self.push(out, Op::Log(x, floor), rg, "log")
    }

    pub fn log(&self, x: Var) -> Var {
        self.log_floor(x, S::zero())
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| t.softmax_rows().unwrap_or_else(|e| panic!("{e}")));
        let rg = self.needs(&[x]);
        self.push(out, Op::Softmax(x), rg, "softmax")
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| {
            let n = t.cols();
            let mut d = t.data().to_vec();
            for row in d.chunks_mut(n) {
                let s: S = row.iter().copied().sum();
                for v in row {
                    *v /= s;
                }
            }
            Tensor::new(t.shape().to_vec(), d).expect("same shape")
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::NormalizeRows(x), rg, "normalize_rows")
    }

    /// Sum of all entries, as `[1, 1]`.
    pub fn sum(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| Tensor::scalar(t.sum()));
        let rg = self.needs(&[x]);
        self.push(out, Op::Sum(x), rg, "sum")
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.with_value(x, Tensor::len);
        let s = self.sum(x);
        self.scale(s, S::one() / S::lit(n as f64))
    }

    /// Column sums: `[m, n] -> [1, n]`.
    pub fn sum_rows(&self, x: Var) -> Var {
        let out = self.with_value(x, |t| {
            let n = t.cols();
            let mut acc = vec![S::zero(); n];
            for row in t.data().chunks(n) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::row(acc)
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::SumRows(x), rg, "sum_rows")
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let out = {
            let inner = self.inner.borrow();
            let m = inner.nodes[parts[0].0].value.rows();
            let total: usize = parts
                .iter()
                .map(|p| {
                    let v = &inner.nodes[p.0].value;
                    assert_eq!(v.rows(), m, "concat_cols: row counts differ");
                    v.cols()
                })
                .sum();
            let mut data = Vec::with_capacity(m * total);
            for r in 0..m {
                for p in parts {
                    data.extend_from_slice(inner.nodes[p.0].value.row_slice(r));
                }
            }
            Tensor::matrix(m, total, data).expect("consistent")
        };
        let rg = self.needs(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn stack_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows of nothing");
        let out = {
            let inner = self.inner.borrow();
            let n = inner.nodes[parts[0].0].value.cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let v = &inner.nodes[p.0].value;
                assert_eq!(v.cols(), n, "stack_rows: column counts differ");
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(rows, n, data).expect("consistent")
        };
        let rg = self.needs(parts);
        self.push(out, Op::StackRows(parts.to_vec()), rg, "stack_rows")
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Var {
        let out = self.with_value(x, |t| {
            assert!(len > 0 && start + len <= t.rows(), "slice_rows out of range");
            let n = t.cols();
            Tensor::matrix(len, n, t.data()[start * n..(start + len) * n].to_vec()).expect("range")
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::SliceRows(x, start), rg, "slice_rows")
    }

    pub fn row(&self, x: Var, r: usize) -> Var {
        self.slice_rows(x, r, 1)
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Var {
        let out = self.with_value(x, |t| {
            assert!(len > 0 && start + len <= t.cols(), "slice_cols out of range");
            let data = (0..t.rows())
                .flat_map(|r| t.row_slice(r)[start..start + len].iter().copied())
                .collect();
            Tensor::matrix(t.rows(), len, data).expect("range")
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::SliceCols(x, start), rg, "slice_cols")
    }

    /// `out[r] = x[idx[r]]` (row lookup, e.g. embeddings).
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Var {
        let out = self.with_value(x, |t| {
            let n = t.cols();
            let mut data = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                assert!(i < t.rows(), "gather_rows index {i} out of range");
                data.extend_from_slice(t.row_slice(i));
            }
            Tensor::matrix(idx.len(), n, data).expect("range")
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::GatherRows(x, idx.to_vec()), rg, "gather_rows")
    }

    /// `out[:, j] = x[:, idx[j]]`.
    pub fn gather_cols(&self, x: Var, idx: &[usize]) -> Var {
        let out = self.with_value(x, |t| {
            let n = t.cols();
            let mut data = Vec::with_capacity(t.rows() * idx.len());
            for r in 0..t.rows() {
                let row = t.row_slice(r);
                for &j in idx {
                    assert!(j < n, "gather_cols index {j} out of range");
                    data.push(row[j]);
                }
            }
            Tensor::matrix(t.rows(), idx.len(), data).expect("range")
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::GatherCols(x, idx.to_vec()), rg, "gather_cols")
    }

    /// Single entry as `[1, 1]`.
    pub fn pick(&self, x: Var, r: usize, c: usize) -> Var {
        let row = if self.with_value(x, Tensor::rows) == 1 { x } else { self.row(x, r) };
        self.gather_cols(row, &[c])
    }

    /// `out[:, idx[j]] += x[:, j]` into `width` zero-initialized columns.
    pub fn scatter_cols(&self, x: Var, idx: &[usize], width: usize) -> Var {
        let out = self.with_value(x, |t| {
            assert_eq!(idx.len(), t.cols(), "scatter_cols: one index per column");
            let mut out = Tensor::zeros(&[t.rows(), width]);
            let d = out.data_mut();
            for r in 0..t.rows() {
                for (j, &dst) in idx.iter().enumerate() {
                    assert!(dst < width, "scatter_cols index {dst} out of range");
                    d[r * width + dst] += t.get(r, j);
                }
            }
            out
        });
        let rg = self.needs(&[x]);
        self.push(out, Op::ScatterCols(x, idx.to_vec()), rg, "scatter_cols")
    }

    /// Elementwise op with a caller-supplied backward rule
    /// `backward(x, y, dy) -> dx`.
    pub fn custom_unary(
        &self,
        x: Var,
        forward: impl Fn(&Tensor<S>) -> Tensor<S>,
        backward: impl Fn(&Tensor<S>, &Tensor<S>, &Tensor<S>) -> Tensor<S> + Send + 'static,
    ) -> Var {
        let out = self.with_value(x, forward);
        let rg = self.needs(&[x]);
        self.push(out, Op::Custom(x, Box::new(backward)), rg, "custom")
    }

    /// Reverse sweep from a scalar loss. The tape can be swept only once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.consumed.replace(true) {
            return Err(NumericsError::TapeConsumed);
        }
        self.check()?;
        let mut inner = self.inner.borrow_mut();
        if inner.nodes.is_empty() {
            return Err(NumericsError::EmptyTape);
        }
        let loss_shape = inner.nodes[loss.0].value.shape().to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::NonScalarLoss(loss_shape));
        }
        let nodes = std::mem::take(&mut inner.nodes);
        let params = std::mem::take(&mut inner.params);
        drop(inner);

        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&loss_shape, S::one()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, i, &g, &mut grads);
        }

        let mut out = Gradients::empty();
        let param_ids: HashMap<usize, &String> = params.iter().map(|(n, v)| (v.0, n)).collect();
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !nodes[i].requires_grad || !matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFinite { op: "backward" });
            }
            match param_ids.get(&i) {
                Some(name) => {
                    out.params.insert((*name).clone(), g);
                }
                None => {
                    out.inputs.insert(Var(i), g);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Reduces an output-shaped gradient to the shape of a broadcast operand.
fn reduce<S: Scalar>(g: &Tensor<S>, mode: Bcast) -> Tensor<S> {
    match mode {
        Bcast::Same => g.clone(),
        Bcast::Scalar => Tensor::scalar(g.sum()),
        Bcast::Row => {
            let n = g.cols();
            let mut acc = vec![S::zero(); n];
            for row in g.data().chunks(n) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Tensor::row(acc)
        }
    }
}

/// Expands a broadcast operand to the output shape.
fn expand<S: Scalar>(b: &Tensor<S>, shape: &[usize], mode: Bcast) -> Tensor<S> {
    match mode {
        Bcast::Same => b.clone(),
        Bcast::Scalar => Tensor::filled(shape, b.item()),
        Bcast::Row => {
            let rows = shape[0];
            Tensor::new(shape.to_vec(), b.data().repeat(rows)).expect("row broadcast")
        }
    }
}

fn propagate<S: Scalar>(nodes: &[Node<S>], i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
    let y = &nodes[i].value;
    let val = |v: &Var| &nodes[v.0].value;
    let wants = |v: &Var| nodes[v.0].requires_grad;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b, mode) => {
            if wants(a) {
                accumulate(grads, *a, g.clone());
            }
            if wants(b) {
                accumulate(grads, *b, reduce(g, *mode));
            }
        }
        Op::Sub(a, b, mode) => {
            if wants(a) {
                accumulate(grads, *a, g.clone());
            }
            if wants(b) {
                accumulate(grads, *b, reduce(&g.map(|v| -v), *mode));
            }
        }
        Op::Mul(a, b, mode) => {
            if wants(a) {
                let bx = expand(val(b), y.shape(), *mode);
                accumulate(grads, *a, g.zip_map(&bx, |u, v| u * v));
            }
            if wants(b) {
                accumulate(grads, *b, reduce(&g.zip_map(val(a), |u, v| u * v), *mode));
            }
        }
        Op::Affine(x, s) => accumulate(grads, *x, g.map(|v| v * *s)),
        Op::MatMul(a, b) => {
            if wants(a) {
                accumulate(grads, *a, g.matmul_t(val(b)).expect("shapes"));
            }
            if wants(b) {
                accumulate(grads, *b, val(a).t_matmul(g).expect("shapes"));
            }
        }
        Op::MatMulT(a, b) => {
            if wants(a) {
                accumulate(grads, *a, g.matmul(val(b)).expect("shapes"));
            }
            if wants(b) {
                accumulate(grads, *b, g.t_matmul(val(a)).expect("shapes"));
            }
        }
        Op::Transpose(x) => accumulate(grads, *x, g.transpose().expect("matrix")),
        Op::Tanh(x) => accumulate(grads, *x, g.zip_map(y, |u, t| u * (S::one() - t * t))),
        Op::Sigmoid(x) => accumulate(grads, *x, g.zip_map(y, |u, s| u * s * (S::one() - s))),
        Op::Exp(x) => accumulate(grads, *x, g.zip_map(y, |u, e| u * e)),
        Op::Log(x, floor) => {
            let floor = *floor;
            let gx = g.zip_map(val(x), |u, v| if v > floor { u / v } else { S::zero() });
            accumulate(grads, *x, gx);
        }
        Op::Softmax(x) => {
            let n = y.cols();
            let mut gx = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                gx.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - dot)));
            }
            accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).expect("shape"));
        }
        Op::NormalizeRows(x) => {
            let xv = val(x);
            let n = y.cols();
            let mut gx = Vec::with_capacity(y.len());
            for ((yr, gr), xr) in y.data().chunks(n).zip(g.data().chunks(n)).zip(xv.data().chunks(n)) {
                let s: S = xr.iter().copied().sum();
                let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                gx.extend(gr.iter().map(|&b| (b - dot) / s));
            }
            accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).expect("shape"));
        }
        Op::Sum(x) => accumulate(grads, *x, Tensor::filled(val(x).shape(), g.item())),
        Op::SumRows(x) => {
            let shape = val(x).shape().to_vec();
            accumulate(grads, *x, expand(g, &shape, Bcast::Row));
        }
        Op::ConcatCols(parts) => {
            let m = g.rows();
            let mut offset = 0;
            for p in parts {
                let n = val(p).cols();
                if wants(p) {
                    let data = (0..m)
                        .flat_map(|r| g.row_slice(r)[offset..offset + n].iter().copied())
                        .collect();
                    accumulate(grads, *p, Tensor::matrix(m, n, data).expect("shape"));
                }
                offset += n;
            }
        }
        Op::StackRows(parts) => {
            let n = g.cols();
            let mut row = 0;
            for p in parts {
                let r = val(p).rows();
                if wants(p) {
                    let data = g.data()[row * n..(row + r) * n].to_vec();
                    accumulate(grads, *p, Tensor::matrix(r, n, data).expect("shape"));
                }
                row += r;
            }
        }
        Op::SliceRows(x, start) => {
            let xv = val(x);
            let n = xv.cols();
            let mut gx = Tensor::zeros(xv.shape());
            gx.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
            accumulate(grads, *x, gx);
        }
        Op::SliceCols(x, start) => {
            let xv = val(x);
            let (n, len) = (xv.cols(), g.cols());
            let mut gx = Tensor::zeros(xv.shape());
            let d = gx.data_mut();
            for r in 0..g.rows() {
                d[r * n + start..r * n + start + len].copy_from_slice(g.row_slice(r));
            }
            accumulate(grads, *x, gx);
        }
        Op::GatherRows(x, idx) => {
            let xv = val(x);
            let n = xv.cols();
            let mut gx = Tensor::zeros(xv.shape());
            let d = gx.data_mut();
            for (r, &src) in idx.iter().enumerate() {
                for (o, &v) in d[src * n..(src + 1) * n].iter_mut().zip(g.row_slice(r)) {
                    *o += v;
                }
            }
            accumulate(grads, *x, gx);
        }
        Op::GatherCols(x, idx) => {
            let xv = val(x);
            let n = xv.cols();
            let mut gx = Tensor::zeros(xv.shape());
            let d = gx.data_mut();
            for r in 0..g.rows() {
                for (j, &src) in idx.iter().enumerate() {
                    d[r * n + src] += g.get(r, j);
                }
            }
            accumulate(grads, *x, gx);
        }
        Op::ScatterCols(x, idx) => {
            let xv = val(x);
            let data = (0..g.rows())
                .flat_map(|r| idx.iter().map(move |&dst| (r, dst)))
                .map(|(r, dst)| g.get(r, dst))
                .collect();
            accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data).expect("shape"));
        }
        Op::Custom(x, back) => accumulate(grads, *x, back(val(x), y, g)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_gradient() {
        let t = Tape::<f64>::new();
        let x = t.input(Tensor::row(vec![1.0, 2.0]));
        let loss = t.sum(t.mul(x, x));
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn log_softmax_gradient_identity() {
        let z = vec![0.3, -1.2, 2.0, 0.5];
        let k = 2;
        let t = Tape::<f64>::new();
        let x = t.input(Tensor::row(z.clone()));
        let p = t.softmax(x);
        let loss = t.log(t.pick(p, 0, k));
        let g = t.backward(loss).unwrap();
        let sm = Tensor::row(z).softmax_rows().unwrap();
        for (j, &gj) in g.wrt(x).unwrap().data().iter().enumerate() {
            // d log softmax(z)_k / dz = onehot(k) - softmax(z)
            let expected = if j == k { 1.0 } else { 0.0 } - sm.data()[j];
            assert_abs_diff_eq!(gj, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let t = Tape::<f64>::new();
        let x = t.input(Tensor::scalar(3.0));
        let y = t.mul(x, x);
        t.backward(y).unwrap();
        assert_eq!(t.backward(y), Err(NumericsError::TapeConsumed));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let t = Tape::<f64>::new();
        let x = t.input(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(NumericsError::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_values_are_reported() {
        let t = Tape::<f64>::new();
        let x = t.input(Tensor::row(vec![0.0, 1.0]));
        let y = t.log(x);
        assert_eq!(t.check(), Err(NumericsError::NonFinite { op: "log" }));
        let s = t.sum(y);
        assert!(matches!(t.backward(s), Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let t = Tape::<f64>::new();
        let m = t.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let r = t.input(Tensor::row(vec![10.0, 20.0]));
        let s = t.input(Tensor::scalar(0.5));
        let y = t.mul(t.add(m, r), s);
        let loss = t.sum(y);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(r).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.wrt(m).unwrap().data(), &[0.5; 4]);
        assert_abs_diff_eq!(g.wrt(s).unwrap().item(), 70.0, epsilon = 1e-12);
    }

    #[test]
    fn scatter_and_gather_are_adjoint() {
        let t = Tape::<f64>::new();
        let x = t.input(Tensor::row(vec![0.5, 0.3, 0.2]));
        let y = t.scatter_cols(x, &[0, 0, 1], 4);
        assert_eq!(t.value(y).data(), &[0.8, 0.2, 0.0, 0.0]);
        let w = t.constant(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let loss = t.sum(t.mul(y, w));
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn inference_tape_records_no_grad() {
        let t = Tape::<f64>::inference();
        let x = t.input(Tensor::scalar(2.0));
        let y = t.mul(x, x);
        assert_eq!(t.item(y), 4.0);
        let g = t.backward(y).unwrap();
        assert!(g.wrt(x).is_none());
    }
}
