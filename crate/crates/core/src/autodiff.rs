//! Tape-based reverse-mode automatic differentiation.
//!
//! Every value on the tape is a dense row-major matrix of `f64`; scalars
//! are `1x1`. Batched work (one row per training window) therefore costs
//! one node per operation rather than one node per window, which keeps the
//! bookkeeping overhead small next to the arithmetic.
//!
//! Node values live in a single arena that is reused between passes, so a
//! steady-state training loop does not allocate. Nodes are appended in
//! evaluation order, which makes the record a topological order: parents
//! always precede children and the backward sweep is a reverse scan.
//!
//! Trainable leaves are bound to a slot range of a flat [`GradVector`];
//! [`Tape::backward`] returns the accumulated gradient for every slot and
//! clears the tape.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    const NONE: Var = Var(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn is_some(self) -> bool {
        self.0 != u32::MAX
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => relu(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => relu_slope(y),
        }
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient 0 at exactly 0.
#[inline]
fn relu_slope(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Param {
        slot: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Shift(Var),
    /// `a * x + y`
    Axpy {
        a: f64,
        x: Var,
        y: Var,
    },
    /// Elementwise product with a `1x1` node.
    MulScalar(Var, Var),
    Powi(Var, i32),
    Tanh(Var),
    Relu(Var),
    /// `w (m x k) . x (k x 1)`
    MatVec(Var, Var),
    Dot(Var, Var),
    Sum(Var),
    /// Polynomial with coefficients `poly_store[start..start + len]`, lowest degree first.
    Poly {
        x: Var,
        start: u32,
        len: u32,
    },
    Column(Var, u32),
    /// `act(x . w^T + x2 . w2^T + b)` with `x2`, `w2`, `b` optional.
    Dense {
        x: Var,
        w: Var,
        x2: Var,
        w2: Var,
        b: Var,
        act: Activation,
    },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    offset: usize,
    rows: u32,
    cols: u32,
    needs_grad: bool,
}

impl Node {
    fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }
}

/// Flat gradient over all trainable scalars, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(pub Vec<f64>);

impl Deref for GradVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GradVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    grads: Vec<f64>,
    poly_store: Vec<f64>,
    scratch: Vec<f64>,
    n_trainable: usize,
}

impl Tape {
    /// Tape whose gradients cover `n_trainable` scalars.
    pub fn new(n_trainable: usize) -> Self {
        Self {
            n_trainable,
            ..Self::default()
        }
    }

    pub fn n_trainable(&self) -> usize {
        self.n_trainable
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all nodes, keeping allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.poly_store.clear();
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.index()];
        (n.rows as usize, n.cols as usize)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.index()];
        &self.values[n.offset..n.offset + n.len()]
    }

    /// Value of a `1x1` node (first element otherwise).
    pub fn scalar(&self, v: Var) -> f64 {
        self.values[self.nodes[v.index()].offset]
    }

    fn node(&self, v: Var) -> Node {
        self.nodes[v.index()]
    }

    fn needs(&self, v: Var) -> bool {
        v.is_some() && self.nodes[v.index()].needs_grad
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, needs_grad: bool) -> Var {
        let id = Var(u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes"));
        self.nodes.push(Node {
            op,
            offset: self.values.len(),
            rows: rows as u32,
            cols: cols as u32,
            needs_grad,
        });
        id
    }

    // ----- leaves -------------------------------------------------------

    pub fn constant(&mut self, data: &[f64], rows: usize, cols: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "constant shape mismatch");
        let v = self.push(Op::Const, rows, cols, false);
        self.values.extend_from_slice(data);
        v
    }

    pub fn scalar_const(&mut self, x: f64) -> Var {
        self.constant(&[x], 1, 1)
    }

    /// Constant filled in place by `fill`, which receives a zeroed buffer.
    pub fn constant_with(&mut self, rows: usize, cols: usize, fill: impl FnOnce(&mut [f64])) -> Var {
        let v = self.push(Op::Const, rows, cols, false);
        let start = self.values.len();
        self.values.resize(start + rows * cols, 0.0);
        fill(&mut self.values[start..]);
        v
    }

    /// Trainable leaf occupying gradient slots `slot..slot + rows*cols`.
    pub fn param(&mut self, data: &[f64], rows: usize, cols: usize, slot: usize) -> Var {
        assert_eq!(data.len(), rows * cols, "param shape mismatch");
        assert!(
            slot + data.len() <= self.n_trainable,
            "param slots {}..{} exceed trainable count {}",
            slot,
            slot + data.len(),
            self.n_trainable
        );
        let v = self.push(Op::Param { slot }, rows, cols, true);
        self.values.extend_from_slice(data);
        v
    }

    // ----- elementwise --------------------------------------------------

    fn same_shape(&self, a: Var, b: Var) -> (usize, usize) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!(sa, sb, "shape mismatch {sa:?} vs {sb:?}");
        sa
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.same_shape(a, b);
        let (oa, ob) = (self.node(a).offset, self.node(b).offset);
        let needs = self.needs(a) || self.needs(b);
        let v = self.push(op, r, c, needs);
        for i in 0..r * c {
            let y = f(self.values[oa + i], self.values[ob + i]);
            self.values.push(y);
        }
        v
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let na = self.node(a);
        let v = self.push(op, na.rows as usize, na.cols as usize, na.needs_grad);
        for i in 0..na.len() {
            let y = f(self.values[na.offset + i]);
            self.values.push(y);
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).contains(&0.0) {
            return Err(Error::DivisionByZero { node: self.nodes.len() });
        }
        Ok(self.binary(a, b, Op::Div(a, b), |x, y| x / y))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn shift(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Shift(a), |x| x + k)
    }

    /// `a * x + y`.
    pub fn axpy(&mut self, a: f64, x: Var, y: Var) -> Var {
        self.binary(x, y, Op::Axpy { a, x, y }, |xv, yv| yv + a * xv)
    }

    /// Every element of `x` times the `1x1` node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar needs a 1x1 factor");
        let sv = self.scalar(s);
        let nx = self.node(x);
        let needs = nx.needs_grad || self.needs(s);
        let v = self.push(Op::MulScalar(x, s), nx.rows as usize, nx.cols as usize, needs);
        for i in 0..nx.len() {
            let y = self.values[nx.offset + i] * sv;
            self.values.push(y);
        }
        v
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Var {
        self.unary(a, Op::Powi(a, n), |x| x.powi(n))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), relu)
    }

    /// Polynomial `sum coeffs[m] x^m` applied elementwise (Horner).
    pub fn poly(&mut self, x: Var, coeffs: &[f64]) -> Var {
        let start = self.poly_store.len() as u32;
        self.poly_store.extend_from_slice(coeffs);
        let op = Op::Poly {
            x,
            start,
            len: coeffs.len() as u32,
        };
        let nx = self.node(x);
        let v = self.push(op, nx.rows as usize, nx.cols as usize, nx.needs_grad);
        for i in 0..nx.len() {
            let z = self.values[nx.offset + i];
            let y = coeffs.iter().rev().fold(0.0, |acc, &a| acc * z + a);
            self.values.push(y);
        }
        v
    }

    // ----- reductions and reshaping ---------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let s: f64 = self.values[na.offset..na.offset + na.len()].iter().sum();
        let v = self.push(Op::Sum(a), 1, 1, na.needs_grad);
        self.values.push(s);
        v
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let _ = self.same_shape(a, b);
        let (na, nb) = (self.node(a), self.node(b));
        let s: f64 = (0..na.len())
            .map(|i| self.values[na.offset + i] * self.values[nb.offset + i])
            .sum();
        let v = self.push(Op::Dot(a, b), 1, 1, na.needs_grad || nb.needs_grad);
        self.values.push(s);
        v
    }

    /// Matrix-vector product `w . x` with `w: m x k`, `x: k x 1`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (nw, nx) = (self.node(w), self.node(x));
        let (m, k) = (nw.rows as usize, nw.cols as usize);
        assert_eq!(nx.len(), k, "matvec inner dimension mismatch");
        let v = self.push(Op::MatVec(w, x), m, 1, nw.needs_grad || nx.needs_grad);
        for i in 0..m {
            let row = &self.values[nw.offset + i * k..nw.offset + (i + 1) * k];
            let xs = &self.values[nx.offset..nx.offset + k];
            let s: f64 = row.iter().zip(xs).map(|(a, b)| a * b).sum();
            self.values.push(s);
        }
        v
    }

    /// Column `c` of `a` as a `rows x 1` node.
    pub fn column(&mut self, a: Var, c: usize) -> Var {
        let na = self.node(a);
        let (rows, cols) = (na.rows as usize, na.cols as usize);
        assert!(c < cols, "column {c} out of range for {cols} columns");
        let v = self.push(Op::Column(a, c as u32), rows, 1, na.needs_grad);
        for r in 0..rows {
            let y = self.values[na.offset + r * cols + c];
            self.values.push(y);
        }
        v
    }

    /// Fully connected layer over a batch: `act(x . w^T + b)`, with
    /// `x: batch x k`, `w: m x k`, `b: 1 x m` (or `Var` of any shape with
    /// `m` elements).
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>, act: Activation) -> Var {
        self.dense_impl(x, w, None, b, act)
    }

    /// `act(x . w^T + x2 . w2^T + b)`, e.g. an Elman recurrent cell.
    pub fn dense2(&mut self, x: Var, w: Var, x2: Var, w2: Var, b: Option<Var>, act: Activation) -> Var {
        self.dense_impl(x, w, Some((x2, w2)), b, act)
    }

    fn dense_impl(&mut self, x: Var, w: Var, second: Option<(Var, Var)>, b: Option<Var>, act: Activation) -> Var {
        let (nx, nw) = (self.node(x), self.node(w));
        let batch = nx.rows as usize;
        let k = nx.cols as usize;
        let m = nw.rows as usize;
        assert_eq!(nw.cols as usize, k, "dense: x has {k} columns, w has {}", nw.cols);
        let (x2, w2) = second.unwrap_or((Var::NONE, Var::NONE));
        if let Some((x2, w2)) = second {
            let (n2, nw2) = (self.node(x2), self.node(w2));
            assert_eq!(n2.rows as usize, batch, "dense2: batch mismatch");
            assert_eq!(nw2.rows as usize, m, "dense2: output width mismatch");
            assert_eq!(nw2.cols, n2.cols, "dense2: inner dimension mismatch");
        }
        let b = b.unwrap_or(Var::NONE);
        if b.is_some() {
            assert_eq!(self.node(b).len(), m, "dense: bias length mismatch");
        }
        let needs = [x, w, x2, w2, b].iter().any(|&v| self.needs(v));
        let out = self.push(Op::Dense { x, w, x2, w2, b, act }, batch, m, needs);
        let off = self.values.len();
        if b.is_some() {
            let ob = self.node(b).offset;
            self.values.reserve(batch * m);
            for _ in 0..batch {
                self.values.extend_from_within(ob..ob + m);
            }
        } else {
            self.values.resize(off + batch * m, 0.0);
        }
        let base = self.values.as_mut_ptr();
        // SAFETY: the output region [off, off + batch*m) was just appended
        // and is disjoint from every earlier node's region; all regions are
        // inside `values` whose length covers them.
        unsafe {
            gemm_xwt(batch, k, m, base.add(nx.offset), base.add(nw.offset), base.add(off));
            if x2.is_some() {
                let (n2, nw2) = (self.node(x2), self.node(w2));
                gemm_xwt(
                    batch,
                    n2.cols as usize,
                    m,
                    base.add(n2.offset),
                    base.add(nw2.offset),
                    base.add(off),
                );
            }
        }
        if act != Activation::Identity {
            for y in &mut self.values[off..off + batch * m] {
                *y = act.apply(*y);
            }
        }
        out
    }

    // ----- backward -----------------------------------------------------

    /// Reverse sweep from the scalar `output`; returns the gradient with
    /// respect to every trainable slot and clears the tape.
    pub fn backward(&mut self, output: Var) -> Result<GradVector> {
        let out = self.node(output);
        if out.len() != 1 {
            return Err(Error::NonScalarOutput {
                node: output.index(),
                rows: out.rows as usize,
                cols: out.cols as usize,
            });
        }
        let mut grad = GradVector(vec![0.0; self.n_trainable]);
        if out.needs_grad {
            self.grads.clear();
            self.grads.resize(out.offset + 1, 0.0);
            self.grads[out.offset] = 1.0;
            for idx in (0..=output.index()).rev() {
                let node = self.nodes[idx];
                if node.needs_grad {
                    self.backprop_node(node);
                }
            }
            for node in &self.nodes[..=output.index()] {
                if let Op::Param { slot } = node.op {
                    let g = &self.grads[node.offset..node.offset + node.len()];
                    for (dst, src) in grad[slot..slot + g.len()].iter_mut().zip(g) {
                        *dst += src;
                    }
                }
            }
        }
        self.clear();
        Ok(grad)
    }

    fn backprop_node(&mut self, node: Node) {
        let o = node.offset;
        let n = node.len();
        match node.op {
            Op::Const | Op::Param { .. } => {}
            Op::Add(a, b) => {
                self.accumulate(a, o, n, |_, g| g);
                self.accumulate(b, o, n, |_, g| g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, o, n, |_, g| g);
                self.accumulate(b, o, n, |_, g| -g);
            }
            Op::Mul(a, b) => {
                let (oa, ob) = (self.node(a).offset, self.node(b).offset);
                if self.needs(a) {
                    for i in 0..n {
                        self.grads[oa + i] += self.grads[o + i] * self.values[ob + i];
                    }
                }
                if self.needs(b) {
                    for i in 0..n {
                        self.grads[ob + i] += self.grads[o + i] * self.values[oa + i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (oa, ob) = (self.node(a).offset, self.node(b).offset);
                if self.needs(a) {
                    for i in 0..n {
                        self.grads[oa + i] += self.grads[o + i] / self.values[ob + i];
                    }
                }
                if self.needs(b) {
                    for i in 0..n {
                        let d = self.values[ob + i];
                        self.grads[ob + i] -= self.grads[o + i] * self.values[oa + i] / (d * d);
                    }
                }
            }
            Op::Neg(a) => self.accumulate(a, o, n, |_, g| -g),
            Op::Scale(a, k) => self.accumulate(a, o, n, |_, g| k * g),
            Op::Shift(a) => self.accumulate(a, o, n, |_, g| g),
            Op::Axpy { a, x, y } => {
                self.accumulate(x, o, n, |_, g| a * g);
                self.accumulate(y, o, n, |_, g| g);
            }
            Op::MulScalar(x, s) => {
                let (ox, os) = (self.node(x).offset, self.node(s).offset);
                let sv = self.values[os];
                if self.needs(x) {
                    for i in 0..n {
                        self.grads[ox + i] += self.grads[o + i] * sv;
                    }
                }
                if self.needs(s) {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += self.grads[o + i] * self.values[ox + i];
                    }
                    self.grads[os] += acc;
                }
            }
            Op::Powi(a, p) => {
                let oa = self.node(a).offset;
                if self.needs(a) {
                    for i in 0..n {
                        let x = self.values[oa + i];
                        self.grads[oa + i] += self.grads[o + i] * p as f64 * x.powi(p - 1);
                    }
                }
            }
            Op::Tanh(a) => {
                let oa = self.node(a).offset;
                for i in 0..n {
                    let y = self.values[o + i];
                    self.grads[oa + i] += self.grads[o + i] * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let oa = self.node(a).offset;
                for i in 0..n {
                    self.grads[oa + i] += self.grads[o + i] * relu_slope(self.values[o + i]);
                }
            }
            Op::Poly { x, start, len } => {
                let ox = self.node(x).offset;
                let coeffs = &self.poly_store[start as usize..(start + len) as usize];
                for i in 0..n {
                    let z = self.values[ox + i];
                    let slope = coeffs
                        .iter()
                        .enumerate()
                        .skip(1)
                        .rev()
                        .fold(0.0, |acc, (m, &a)| acc * z + m as f64 * a);
                    self.grads[ox + i] += self.grads[o + i] * slope;
                }
            }
            Op::Sum(a) => {
                let g = self.grads[o];
                let na = self.node(a);
                for i in 0..na.len() {
                    self.grads[na.offset + i] += g;
                }
            }
            Op::Dot(a, b) => {
                let g = self.grads[o];
                let (na, nb) = (self.node(a), self.node(b));
                if na.needs_grad {
                    for i in 0..na.len() {
                        self.grads[na.offset + i] += g * self.values[nb.offset + i];
                    }
                }
                if nb.needs_grad {
                    for i in 0..na.len() {
                        self.grads[nb.offset + i] += g * self.values[na.offset + i];
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (nw, nx) = (self.node(w), self.node(x));
                let (m, k) = (nw.rows as usize, nw.cols as usize);
                for i in 0..m {
                    let g = self.grads[o + i];
                    if nw.needs_grad {
                        for c in 0..k {
                            self.grads[nw.offset + i * k + c] += g * self.values[nx.offset + c];
                        }
                    }
                    if nx.needs_grad {
                        for c in 0..k {
                            self.grads[nx.offset + c] += g * self.values[nw.offset + i * k + c];
                        }
                    }
                }
            }
            Op::Column(a, c) => {
                let na = self.node(a);
                let cols = na.cols as usize;
                for r in 0..n {
                    self.grads[na.offset + r * cols + c as usize] += self.grads[o + r];
                }
            }
            Op::Dense { x, w, x2, w2, b, act } => self.backprop_dense(node, x, w, x2, w2, b, act),
        }
    }

    /// `grads[parent] += f(parent value, output grad)` elementwise.
    #[inline]
    fn accumulate(&mut self, parent: Var, o: usize, n: usize, f: impl Fn(f64, f64) -> f64) {
        if !self.needs(parent) {
            return;
        }
        let op = self.node(parent).offset;
        for i in 0..n {
            let g = self.grads[o + i];
            self.grads[op + i] += f(self.values[op + i], g);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_dense(&mut self, node: Node, x: Var, w: Var, x2: Var, w2: Var, b: Var, act: Activation) {
        let batch = node.rows as usize;
        let m = node.cols as usize;
        let o = node.offset;
        let mut g = std::mem::take(&mut self.scratch);
        g.clear();
        g.extend((0..batch * m).map(|i| self.grads[o + i] * act.slope_from_output(self.values[o + i])));

        if self.needs(b) {
            let ob = self.node(b).offset;
            for r in 0..batch {
                for i in 0..m {
                    self.grads[ob + i] += g[r * m + i];
                }
            }
        }
        for (xv, wv) in [(x, w), (x2, w2)] {
            if !xv.is_some() {
                continue;
            }
            let (nx, nw) = (self.node(xv), self.node(wv));
            let k = nx.cols as usize;
            let vals = self.values.as_ptr();
            let grads = self.grads.as_mut_ptr();
            // SAFETY: `g` is a separate allocation; x and w occupy disjoint
            // regions of `grads` (distinct nodes) that precede this node.
            unsafe {
                if nx.needs_grad {
                    gemm_gw(batch, m, k, g.as_ptr(), vals.add(nw.offset), grads.add(nx.offset));
                }
                if nw.needs_grad {
                    gemm_gtx(batch, m, k, g.as_ptr(), vals.add(nx.offset), grads.add(nw.offset));
                }
            }
        }
        self.scratch = g;
    }
}

/// `out (batch x m) += x (batch x k) . w^T` where `w` is `m x k`.
///
/// # Safety
/// Pointers must cover the stated shapes; `out` must not overlap the inputs.
unsafe fn gemm_xwt(batch: usize, k: usize, m: usize, x: *const f64, w: *const f64, out: *mut f64) {
    matrixmultiply::dgemm(
        batch, k, m, 1.0, x, k as isize, 1, w, 1, k as isize, 1.0, out, m as isize, 1,
    );
}

/// `dx (batch x k) += g (batch x m) . w (m x k)`.
unsafe fn gemm_gw(batch: usize, m: usize, k: usize, g: *const f64, w: *const f64, dx: *mut f64) {
    matrixmultiply::dgemm(
        batch, m, k, 1.0, g, m as isize, 1, w, k as isize, 1, 1.0, dx, k as isize, 1,
    );
}

/// `dw (m x k) += g^T (m x batch) . x (batch x k)`.
unsafe fn gemm_gtx(batch: usize, m: usize, k: usize, g: *const f64, x: *const f64, dw: *mut f64) {
    matrixmultiply::dgemm(
        m, batch, k, 1.0, g, 1, m as isize, x, k as isize, 1, 1.0, dw, k as isize, 1,
    );
}
