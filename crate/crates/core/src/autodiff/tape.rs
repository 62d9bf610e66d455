//! Define-by-run reverse-mode tape over dense `f64` vectors.
//!
//! Every operation evaluates eagerly when it is recorded, so node values are
//! cached as soon as they exist and [`Tape::backward`] can run at any point on
//! a scalar output. Matrices are flat row-major vectors with explicit shapes
//! passed to the ops that need them.
//!
//! ```
//! use bico_core::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(vec![3.0]);
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(tape.scalar(y), 9.0);
//! assert_eq!(grads.wrt(x), vec![6.0]);
//! ```

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    /// Element-wise product of two vectors read as `[re.. | im..]`.
    ComplexMul(Var, Var),
    /// `m (rows x cols) * x (cols)`.
    MatVec {
        m: Var,
        x: Var,
        rows: usize,
        cols: usize,
    },
    /// `m^T (cols x rows) * w (rows)`.
    VecMat {
        m: Var,
        w: Var,
        rows: usize,
        cols: usize,
    },
    Concat(Vec<Var>),
    Slice {
        src: Var,
        start: usize,
    },
    Softmax(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Tanh(Var),
    Cos(Var),
    Sin(Var),
    Dot(Var, Var),
    CosineSim(Var, Var),
    LogSumExp(Var),
    Sum(Var),
    Mean(Vec<Var>),
    /// `sum_k weights[k] * items[k]`.
    Combine {
        weights: Var,
        items: Vec<Var>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node that requires one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, or zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.lens[v.0]],
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (la, lb) = (self.dim(a), self.dim(b));
        if la != lb {
            return Err(Error::shape(op, format!("{la} vs {lb}")));
        }
        Ok(la)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("sub", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.rg(a);
        self.push(Op::Scale(a, c), value, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn complex_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.same_len("complex_mul", a, b)?;
        if n % 2 != 0 {
            return Err(Error::shape("complex_mul", format!("odd length {n}")));
        }
        let h = n / 2;
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = vec![0.0; n];
        for k in 0..h {
            let (ar, ai, br, bi) = (av[k], av[k + h], bv[k], bv[k + h]);
            value[k] = ar * br - ai * bi;
            value[k + h] = ar * bi + ai * br;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ComplexMul(a, b), value, rg))
    }

    pub fn matvec(&mut self, m: Var, x: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.dim(m) != rows * cols || self.dim(x) != cols {
            return Err(Error::shape(
                "matvec",
                format!(
                    "matrix {} for {rows}x{cols}, vector {}",
                    self.dim(m),
                    self.dim(x)
                ),
            ));
        }
        let (mv, xv) = (self.value(m), self.value(x));
        let value = mv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(m) || self.rg(x);
        Ok(self.push(Op::MatVec { m, x, rows, cols }, value, rg))
    }

    pub fn vecmat(&mut self, m: Var, w: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.dim(m) != rows * cols || self.dim(w) != rows {
            return Err(Error::shape(
                "vecmat",
                format!(
                    "matrix {} for {rows}x{cols}, weights {}",
                    self.dim(m),
                    self.dim(w)
                ),
            ));
        }
        let (mv, wv) = (self.value(m), self.value(w));
        let mut value = vec![0.0; cols];
        for (row, &wi) in mv.chunks_exact(cols).zip(wv) {
            for (acc, &mij) in value.iter_mut().zip(row) {
                *acc += wi * mij;
            }
        }
        let rg = self.rg(m) || self.rg(w);
        Ok(self.push(Op::VecMat { m, w, rows, cols }, value, rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.dim(p)).sum());
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dim(src) || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) of {}", start + len, self.dim(src)),
            ));
        }
        let value = self.value(src)[start..start + len].to_vec();
        let rg = self.rg(src);
        Ok(self.push(Op::Slice { src, start }, value, rg))
    }

    pub fn index(&mut self, src: Var, i: usize) -> Result<Var> {
        self.slice(src, i, 1)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.dim(a) == 0 {
            return Err(Error::shape("softmax", "empty input"));
        }
        let value = softmax(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(Op::Softmax(a), value, rg))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let rg = self.rg(a);
        self.push(Op::LeakyRelu(a, slope), value, rg)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp_m1() })
            .collect();
        let rg = self.rg(a);
        self.push(Op::Elu(a), value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        let rg = self.rg(a);
        self.push(Op::Tanh(a), value, rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.cos()).collect();
        let rg = self.rg(a);
        self.push(Op::Cos(a), value, rg)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.sin()).collect();
        let rg = self.rg(a);
        self.push(Op::Sin(a), value, rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let value = dot(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Dot(a, b), vec![value], rg))
    }

    /// Cosine similarity; zero-norm inputs are a numeric error.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("cosine_sim", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let (na, nb) = (norm(av), norm(bv));
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Numeric(
                "cosine similarity of a zero-norm vector".into(),
            ));
        }
        let value = dot(av, bv) / (na * nb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::CosineSim(a, b), vec![value], rg))
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        if self.dim(a) == 0 {
            return Err(Error::shape("log_sum_exp", "empty input"));
        }
        let value = log_sum_exp(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(Op::LogSumExp(a), vec![value], rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), vec![value], rg)
    }

    /// Element-wise mean of equally sized vectors.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let Some(&first) = items.first() else {
            return Err(Error::shape("mean", "no inputs"));
        };
        let n = self.dim(first);
        let mut value = vec![0.0; n];
        for &it in items {
            if self.dim(it) != n {
                return Err(Error::shape("mean", format!("{} vs {n}", self.dim(it))));
            }
            for (acc, x) in value.iter_mut().zip(self.value(it)) {
                *acc += x;
            }
        }
        let inv = 1.0 / items.len() as f64;
        value.iter_mut().for_each(|x| *x *= inv);
        let rg = items.iter().any(|&v| self.rg(v));
        Ok(self.push(Op::Mean(items.to_vec()), value, rg))
    }

    /// Weighted sum `sum_k w[k] * items[k]`.
    pub fn combine(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.dim(weights) != items.len() || items.is_empty() {
            return Err(Error::shape(
                "combine",
                format!("{} weights for {} items", self.dim(weights), items.len()),
            ));
        }
        let n = self.dim(items[0]);
        let mut value = vec![0.0; n];
        for (k, &it) in items.iter().enumerate() {
            if self.dim(it) != n {
                return Err(Error::shape("combine", format!("{} vs {n}", self.dim(it))));
            }
            let w = self.value(weights)[k];
            for (acc, x) in value.iter_mut().zip(self.value(it)) {
                *acc += w * x;
            }
        }
        let rg = self.rg(weights) || items.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Op::Combine {
                weights,
                items: items.to_vec(),
            },
            value,
            rg,
        ))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::shape("backward", "output is not on this tape"));
        }
        if self.dim(out) != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got length {}", self.dim(out)),
            ));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        if nodes[out.0].requires_grad {
            grads[out.0] = Some(vec![1.0]);
        }

        // Accumulates into the gradient slot of `v` if it needs one.
        fn slot<'g>(
            nodes: &[Node],
            grads: &'g mut [Option<Vec<f64>>],
            v: Var,
        ) -> Option<&'g mut Vec<f64>> {
            if !nodes[v.0].requires_grad {
                return None;
            }
            let len = nodes[v.0].value.len();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
        }

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(s) = slot(nodes, &mut grads, v) {
                            axpy(s, 1.0, &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        axpy(s, 1.0, &g);
                    }
                    if let Some(s) = slot(nodes, &mut grads, *b) {
                        axpy(s, -1.0, &g);
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        axpy(s, *c, &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, gi), bi) in s.iter_mut().zip(&g).zip(bv) {
                            *s += gi * bi;
                        }
                    }
                    if let Some(s) = slot(nodes, &mut grads, *b) {
                        for ((s, gi), ai) in s.iter_mut().zip(&g).zip(av) {
                            *s += gi * ai;
                        }
                    }
                }
                Op::ComplexMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let h = av.len() / 2;
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for k in 0..h {
                            let (gr, gi) = (g[k], g[k + h]);
                            let (br, bi) = (bv[k], bv[k + h]);
                            s[k] += gr * br + gi * bi;
                            s[k + h] += -gr * bi + gi * br;
                        }
                    }
                    if let Some(s) = slot(nodes, &mut grads, *b) {
                        for k in 0..h {
                            let (gr, gi) = (g[k], g[k + h]);
                            let (ar, ai) = (av[k], av[k + h]);
                            s[k] += gr * ar + gi * ai;
                            s[k + h] += -gr * ai + gi * ar;
                        }
                    }
                }
                Op::MatVec { m, x, cols, .. } => {
                    let (mv, xv) = (&nodes[m.0].value, &nodes[x.0].value);
                    if let Some(s) = slot(nodes, &mut grads, *m) {
                        for (srow, gi) in s.chunks_exact_mut(*cols).zip(&g) {
                            if *gi != 0.0 {
                                axpy(srow, *gi, xv);
                            }
                        }
                    }
                    if let Some(s) = slot(nodes, &mut grads, *x) {
                        for (mrow, gi) in mv.chunks_exact(*cols).zip(&g) {
                            if *gi != 0.0 {
                                axpy(s, *gi, mrow);
                            }
                        }
                    }
                }
                Op::VecMat { m, w, cols, .. } => {
                    let (mv, wv) = (&nodes[m.0].value, &nodes[w.0].value);
                    if let Some(s) = slot(nodes, &mut grads, *m) {
                        for (srow, wi) in s.chunks_exact_mut(*cols).zip(wv) {
                            axpy(srow, *wi, &g);
                        }
                    }
                    if let Some(s) = slot(nodes, &mut grads, *w) {
                        for (si, mrow) in s.iter_mut().zip(mv.chunks_exact(*cols)) {
                            *si += dot(mrow, &g);
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = nodes[p.0].value.len();
                        if let Some(s) = slot(nodes, &mut grads, p) {
                            axpy(s, 1.0, &g[off..off + n]);
                        }
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    if let Some(s) = slot(nodes, &mut grads, *src) {
                        axpy(&mut s[*start..*start + g.len()], 1.0, &g);
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, yi), gi) in s.iter_mut().zip(y).zip(&g) {
                            *s += yi * (gi - gy);
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let av = &nodes[a.0].value;
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, x), gi) in s.iter_mut().zip(av).zip(&g) {
                            *s += if *x > 0.0 { *gi } else { slope * gi };
                        }
                    }
                }
                Op::Elu(a) => {
                    let av = &nodes[a.0].value;
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, x), gi) in s.iter_mut().zip(av).zip(&g) {
                            *s += if *x > 0.0 { *gi } else { x.exp() * gi };
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, yi), gi) in s.iter_mut().zip(y).zip(&g) {
                            *s += (1.0 - yi * yi) * gi;
                        }
                    }
                }
                Op::Cos(a) => {
                    let av = &nodes[a.0].value;
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, x), gi) in s.iter_mut().zip(av).zip(&g) {
                            *s -= x.sin() * gi;
                        }
                    }
                }
                Op::Sin(a) => {
                    let av = &nodes[a.0].value;
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        for ((s, x), gi) in s.iter_mut().zip(av).zip(&g) {
                            *s += x.cos() * gi;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        axpy(s, g[0], bv);
                    }
                    if let Some(s) = slot(nodes, &mut grads, *b) {
                        axpy(s, g[0], av);
                    }
                }
                Op::CosineSim(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let c = node.value[0];
                    let (na, nb) = (norm(av), norm(bv));
                    let inv = 1.0 / (na * nb);
                    // d c / d a = b / (|a||b|) - c a / |a|^2
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        let ca = c / (na * na);
                        for ((s, ai), bi) in s.iter_mut().zip(av).zip(bv) {
                            *s += g[0] * (bi * inv - ca * ai);
                        }
                    }
                    if let Some(s) = slot(nodes, &mut grads, *b) {
                        let cb = c / (nb * nb);
                        for ((s, ai), bi) in s.iter_mut().zip(av).zip(bv) {
                            *s += g[0] * (ai * inv - cb * bi);
                        }
                    }
                }
                Op::LogSumExp(a) => {
                    let av = &nodes[a.0].value;
                    let p = softmax(av);
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        axpy(s, g[0], &p);
                    }
                }
                Op::Sum(a) => {
                    if let Some(s) = slot(nodes, &mut grads, *a) {
                        s.iter_mut().for_each(|x| *x += g[0]);
                    }
                }
                Op::Mean(items) => {
                    let inv = 1.0 / items.len() as f64;
                    for &it in items {
                        if let Some(s) = slot(nodes, &mut grads, it) {
                            axpy(s, inv, &g);
                        }
                    }
                }
                Op::Combine { weights, items } => {
                    let wv = &nodes[weights.0].value;
                    if let Some(s) = slot(nodes, &mut grads, *weights) {
                        for (sk, &it) in s.iter_mut().zip(items) {
                            *sk += dot(&g, &nodes[it.0].value);
                        }
                    }
                    for (k, &it) in items.iter().enumerate() {
                        if let Some(s) = slot(nodes, &mut grads, it) {
                            axpy(s, wv[k], &g);
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            lens: nodes.iter().map(|n| n.value.len()).collect(),
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
