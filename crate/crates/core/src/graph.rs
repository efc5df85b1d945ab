//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already a topological order. Parameters are borrowed from a
//! [`ParamStore`] without copying; [`Graph::backward`] returns a
//! [`Gradients`] set that the caller folds back into the store.
//!
//! Tensors are treated as matrices: leading extents collapse into rows and
//! the last extent is the column count. Vectors are `1×n`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{dims2, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Computation graph for one forward/backward pass.
pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Default for Graph<'static> {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph<'static> {
    /// A graph with no parameter store; leaves come from [`Graph::input`].
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }
}

impl<'s> Graph<'s> {
    pub fn with_params(store: &'s ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf holding `t`. The leaf is differentiable iff `t.requires_grad()`.
    pub fn input(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, needs_grad)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.input(t))
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let store = self
            .store
            .expect("Graph::param requires a graph built with a ParamStore");
        let t = store.get(id);
        let var = Var(self.nodes.len());
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        self.params.insert(id, var);
        var
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(id) => self.store.expect("param node").get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("valid node")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nn_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    /// `a[m×k] · b[n×k]ᵀ`, the form used by linear layers and attention scores.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul_t", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMulT(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = kernels::transpose(self.value(a), m, n);
        let ng = self.ng(a);
        self.push(vec![n, m], out, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add(a, b), ng))
    }

    /// Broadcast-adds the length-`n` vector `b` to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, n) = self.dims(a);
        let bv = self.value(b);
        if bv.len() != n {
            return Err(self.mismatch("add_row", a, b));
        }
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::AddRow(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let ng = self.ng(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, c), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.ng(a) || self.ng(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul(a, b), ng))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, false)
    }

    /// Row softmax where row `i` only sees columns `0..=i`.
    pub fn softmax_rows_causal(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let (m, n) = self.dims(x);
        let xv = self.value(x);
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let out = kernels::softmax_rows(xv, m, n, causal);
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Softmax(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (_, d) = self.dims(x);
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        let (y, xhat, rstd) = kernels::layer_norm_rows(self.value(x), self.value(gain), self.value(bias), d);
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        Ok(self.push(shape, y, op, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let ng = self.ng(x);
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Gelu(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > n {
            return Err(Error::OutOfRange {
                what: "slice_cols end",
                value: start + len,
                max: n,
            });
        }
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let ng = self.ng(x);
        Ok(self.push(vec![m, len], out, Op::SliceCols { x, start }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > m {
            return Err(Error::OutOfRange {
                what: "slice_rows end",
                value: start + len,
                max: m,
            });
        }
        let out = self.value(x)[start * n..(start + len) * n].to_vec();
        let ng = self.ng(x);
        Ok(self.push(vec![len, n], out, Op::SliceRows { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let (m, _) = self.dims(parts[0]);
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pm != m {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            total += pn;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (_, pn) = self.dims(p);
                out.extend_from_slice(&self.value(p)[i * pn..(i + 1) * pn]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![m, total], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let (_, n) = self.dims(parts[0]);
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pn != n {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += pm;
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![rows, n], out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::Validation("gather_rows with no indices".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(Error::OutOfRange {
                what: "row index",
                value: bad,
                max: m - 1,
            });
        }
        let tv = self.value(table);
        let out = ids
            .iter()
            .flat_map(|&i| tv[i * n..(i + 1) * n].iter().copied())
            .collect();
        let ng = self.ng(table);
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        Ok(self.push(vec![ids.len(), n], out, op, ng))
    }

    /// Mean cross-entropy over rows whose target is `Some`; other rows are
    /// masked out of both the value and the gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (m, n) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::Validation("cross_entropy with no targets".into()));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= n) {
            return Err(Error::OutOfRange {
                what: "target id",
                value: bad,
                max: n - 1,
            });
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = t else { continue };
            let row = &lv[i * n..(i + 1) * n];
            let lse = kernels::log_sum_exp(row);
            loss += lse - row[*t];
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
        let ng = self.ng(logits);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            count,
        };
        Ok(self.push(vec![1], vec![loss / count as f64], op, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.ng(x);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Validation(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, i, &gout, &mut grads);
            grads[i] = Some(gout);
        }

        let params = self
            .params
            .iter()
            .filter(|(_, v)| self.nodes[v.0].needs_grad)
            .map(|(id, v)| (*id, *v))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (m, n) = dims2(&node.shape);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (_, k) = self.dims(*a);
                if self.ng(*a) {
                    let g = slot(grads, *a, m * k);
                    kernels::matmul_nt_acc(gout, self.value(*b), g, m, n, k);
                }
                if self.ng(*b) {
                    let g = slot(grads, *b, k * n);
                    kernels::matmul_tn_acc(self.value(*a), gout, g, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                let (_, k) = self.dims(*a);
                if self.ng(*a) {
                    let g = slot(grads, *a, m * k);
                    kernels::matmul_nn_acc(gout, self.value(*b), g, m, n, k);
                }
                if self.ng(*b) {
                    let g = slot(grads, *b, n * k);
                    kernels::matmul_tn_acc(gout, self.value(*a), g, m, n, k);
                }
            }
            Op::Transpose(a) => {
                let t = kernels::transpose(gout, m, n);
                add_into(slot(grads, *a, t.len()), &t);
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.ng(*v) {
                        add_into(slot(grads, *v, gout.len()), gout);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.ng(*a) {
                    add_into(slot(grads, *a, gout.len()), gout);
                }
                if self.ng(*b) {
                    let g = slot(grads, *b, n);
                    for row in gout.chunks(n) {
                        add_into(g, row);
                    }
                }
            }
            Op::Scale(a, c) => {
                let g = slot(grads, *a, gout.len());
                for (d, s) in g.iter_mut().zip(gout) {
                    *d += c * s;
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let g = slot(grads, *a, gout.len());
                    for ((d, s), y) in g.iter_mut().zip(gout).zip(bv) {
                        *d += s * y;
                    }
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let g = slot(grads, *b, gout.len());
                    for ((d, s), x) in g.iter_mut().zip(gout).zip(av) {
                        *d += s * x;
                    }
                }
            }
            Op::Softmax(x) => {
                let y = self.owned(idx);
                let g = slot(grads, *x, gout.len());
                for r in 0..m {
                    let yr = &y[r * n..(r + 1) * n];
                    let gr = &gout[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let dst = &mut g[r * n..(r + 1) * n];
                    for j in 0..n {
                        dst[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gain);
                if self.ng(*gain) {
                    let g = slot(grads, *gain, n);
                    for r in 0..m {
                        for j in 0..n {
                            g[j] += gout[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                if self.ng(*bias) {
                    let g = slot(grads, *bias, n);
                    for row in gout.chunks(n) {
                        add_into(g, row);
                    }
                }
                if self.ng(*x) {
                    let g = slot(grads, *x, m * n);
                    let inv_n = 1.0 / n as f64;
                    for (r, &rs) in rstd.iter().enumerate().take(m) {
                        let off = r * n;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..n {
                            let d = gout[off + j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xhat[off + j];
                        }
                        mean_d *= inv_n;
                        mean_dx *= inv_n;
                        for j in 0..n {
                            let d = gout[off + j] * gv[j];
                            g[off + j] += rs * (d - mean_d - xhat[off + j] * mean_dx);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let g = slot(grads, *x, gout.len());
                for ((d, s), &v) in g.iter_mut().zip(gout).zip(xv) {
                    *d += s * kernels::gelu_grad(v);
                }
            }
            Op::SliceCols { x, start } => {
                let (_, xn) = self.dims(*x);
                let g = slot(grads, *x, m * xn);
                for r in 0..m {
                    add_into(&mut g[r * xn + start..r * xn + start + n], &gout[r * n..(r + 1) * n]);
                }
            }
            Op::SliceRows { x, start } => {
                let (xm, xn) = self.dims(*x);
                let g = slot(grads, *x, xm * xn);
                add_into(&mut g[start * xn..(start + m) * xn], gout);
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let (_, pn) = self.dims(*p);
                    if self.ng(*p) {
                        let g = slot(grads, *p, m * pn);
                        for r in 0..m {
                            add_into(&mut g[r * pn..(r + 1) * pn], &gout[r * n + col..r * n + col + pn]);
                        }
                    }
                    col += pn;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.ng(*p) {
                        add_into(slot(grads, *p, len), &gout[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::Gather { table, ids } => {
                let (tm, tn) = self.dims(*table);
                let g = slot(grads, *table, tm * tn);
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut g[i * tn..(i + 1) * tn], &gout[r * tn..(r + 1) * tn]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let (lm, ln) = self.dims(*logits);
                let scale = gout[0] / *count as f64;
                let g = slot(grads, *logits, lm * ln);
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    for j in 0..ln {
                        g[r * ln + j] += scale * probs[r * ln + j];
                    }
                    g[r * ln + t] -= scale;
                }
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                let g = slot(grads, *x, len);
                for d in g.iter_mut() {
                    *d += gout[0];
                }
            }
        }
    }

    fn owned(&self, idx: usize) -> &[f64] {
        match &self.nodes[idx].value {
            Value::Owned(d) => d,
            Value::Param(_) => unreachable!("op nodes own their values"),
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to any differentiable node.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every trainable parameter reached by the loss.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].as_deref().map(|g| (*id, g)))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.grads[v.0].as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_sum_gradient() {
        let mut g = Graph::new();
        let a = g.input(Tensor::full(&[2, 2], 1.0).with_requires_grad());
        let b = g.input(Tensor::eye(2));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(grads.wrt(b).is_none());
    }

    #[test]
    fn frozen_param_gets_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[2, 2], 0.5)).unwrap();
        store.get_mut(w).set_requires_grad(false);
        let mut g = Graph::with_params(&store);
        let wv = g.param(w);
        let x = g.input(Tensor::full(&[1, 2], 1.0).with_requires_grad());
        let y = g.matmul_t(x, wv).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.param(w).is_none());
        assert_eq!(grads.wrt(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn param_node_is_reused() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[3])).unwrap();
        let mut g = Graph::with_params(&store);
        assert_eq!(g.param(w), g.param(w));
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn cross_entropy_requires_a_target() {
        let mut g = Graph::new();
        let l = g.input(Tensor::zeros(&[2, 3]));
        assert!(g.cross_entropy(l, &[None, None]).is_err());
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[3, 3]));
        let y = g.softmax_rows_causal(x).unwrap();
        let v = g.value(y);
        assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
        assert_eq!(&v[3..6], &[0.5, 0.5, 0.0]);
    }
}
