//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every value on the tape is a rank-2 tensor. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for the backward pass. Broadcasting is limited to
//! adding a single row to every row of a matrix.

use std::collections::HashMap;

use super::tensor::{ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GatherCols(Var, Vec<usize>),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
    Huber(Var, Vec<f64>, f64),
    RepeatCols(Var),
    Reshape(Var),
    PairSum(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// A computation graph under construction. One tape per training step;
/// tapes are not shared across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` means the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_raw(n.rows, n.cols, n.value.clone())
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf)
    }

    pub fn constant_raw(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!("{rows}x{cols} constant with {} values", data.len())));
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    pub fn row(&mut self, data: &[f64]) -> Var {
        self.push(1, data.len(), data.to_vec(), Op::Leaf)
    }

    /// Places a parameter of `store` on the tape. Repeated calls with the
    /// same name return the same node, so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let v = self.constant(t);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::dim(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let out = matmul_kernel(&self.node(a).value, &self.node(b).value, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let out = transpose_kernel(&self.node(a).value, m, n);
        self.push(n, m, out, Op::Transpose(a))
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            return Err(Error::dim(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, what)?;
        let out = self.node(a).value.iter().zip(&self.node(b).value).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(r, c, out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the single-row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (r, c) = self.dims(row);
        if r != 1 || c != n {
            return Err(Error::dim(format!("row broadcast of {r}x{c} onto {m}x{n}")));
        }
        let bias = &self.node(row).value;
        let mut out = self.node(a).value.clone();
        for chunk in out.chunks_exact_mut(n.max(1)) {
            for (o, b) in chunk.iter_mut().zip(bias) {
                *o += b;
            }
        }
        Ok(self.push(m, n, out, Op::AddRow(a, row)))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.node(a).value.iter().map(|&x| f(x)).collect();
        self.push(r, c, out, op)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 || c == 0 {
            return Err(Error::dim("softmax of an empty matrix"));
        }
        let out = softmax_rows_kernel(&self.node(a).value, c);
        Ok(self.push(r, c, out, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 || c == 0 {
            return Err(Error::dim("log-softmax of an empty matrix"));
        }
        let mut out = self.node(a).value.clone();
        for row in out.chunks_exact_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        Ok(self.push(r, c, out, Op::LogSoftmaxRows(a)))
    }

    /// Stacks matrices vertically. All parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat of zero parts"));
        };
        let cols = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != cols {
                return Err(Error::dim(format!("row concat of width {c} onto width {cols}")));
            }
            rows += r;
            out.extend_from_slice(&self.node(p).value);
        }
        Ok(self.push(rows, cols, out, Op::ConcatRows(parts.to_vec())))
    }

    /// Joins matrices side by side. All parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat of zero parts"));
        };
        let rows = self.dims(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(Error::dim(format!("column concat of height {r} onto height {rows}")));
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let n = self.node(p);
                out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
            }
        }
        Ok(self.push(rows, cols, out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(Error::dim(format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.node(a).value[start * c..(start + len) * c].to_vec();
        Ok(self.push(len, c, out, Op::SliceRows(a, start)))
    }

    /// Selects columns by index (repeats allowed).
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::dim(format!("column {bad} of {c}")));
        }
        let src = &self.node(a).value;
        let mut out = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            out.extend(idx.iter().map(|&j| src[i * c + j]));
        }
        Ok(self.push(r, idx.len(), out, Op::GatherCols(a, idx.to_vec())))
    }

    /// Column-wise mean over rows: m×n → 1×n.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 {
            return Err(Error::dim("mean over zero rows"));
        }
        let mut out = vec![0.0; c];
        for row in self.node(a).value.chunks_exact(c.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        Ok(self.push(1, c, out, Op::MeanRows(a)))
    }

    /// Column-wise max over rows: m×n → 1×n. Ties go to the first row.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r == 0 {
            return Err(Error::dim("max over zero rows"));
        }
        let v = &self.node(a).value;
        let mut arg = vec![0usize; c];
        let mut out = v[..c].to_vec();
        for i in 1..r {
            for j in 0..c {
                if v[i * c + j] > out[j] {
                    out[j] = v[i * c + j];
                    arg[j] = i;
                }
            }
        }
        Ok(self.push(1, c, out, Op::MaxRows(a, arg)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum();
        self.push(1, 1, vec![s], Op::Sum(a))
    }

    /// Σ wᵢ·aᵢ with constant weights.
    pub fn weighted_sum(&mut self, a: Var, w: &[f64]) -> Result<Var> {
        if w.len() != self.node(a).value.len() {
            return Err(Error::dim(format!("{} weights for {} values", w.len(), self.node(a).value.len())));
        }
        let s = self.node(a).value.iter().zip(w).map(|(x, w)| x * w).sum();
        Ok(self.push(1, 1, vec![s], Op::WeightedSum(a, w.to_vec())))
    }

    /// Mean Huber loss between `a` and a constant target.
    pub fn huber(&mut self, a: Var, target: &[f64], delta: f64) -> Result<Var> {
        let n = self.node(a).value.len();
        if target.len() != n || n == 0 {
            return Err(Error::dim(format!("huber over {n} values with {} targets", target.len())));
        }
        let s: f64 = self.node(a).value.iter().zip(target).map(|(x, t)| huber(x - t, delta)).sum();
        Ok(self.push(1, 1, vec![s / n as f64], Op::Huber(a, target.to_vec(), delta)))
    }

    /// m×1 → m×n by repeating the single column.
    pub fn repeat_cols(&mut self, a: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if c != 1 {
            return Err(Error::dim(format!("repeat_cols expects one column, got {c}")));
        }
        let out = self.node(a).value.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
        Ok(self.push(r, n, out, Op::RepeatCols(a)))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r * c != rows * cols {
            return Err(Error::dim(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        let out = self.node(a).value.clone();
        Ok(self.push(rows, cols, out, Op::Reshape(a)))
    }

    /// All-pairs row sum: out[i·nb + j] = a[i] + b[j], giving (na·nb)×n.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, n) = self.dims(a);
        let (nb, n2) = self.dims(b);
        if n != n2 {
            return Err(Error::dim(format!("pair_sum widths {n} vs {n2}")));
        }
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let mut out = Vec::with_capacity(na * nb * n);
        for i in 0..na {
            let ra = &av[i * n..(i + 1) * n];
            for j in 0..nb {
                out.extend(ra.iter().zip(&bv[j * n..(j + 1) * n]).map(|(x, y)| x + y));
            }
        }
        Ok(self.push(na * nb, n, out, Op::PairSum(a, b)))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.dims(loss);
        if (r, c) != (1, 1) {
            return Err(Error::contract(format!("backward from a {r}x{c} node; loss must be scalar")));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    /// Runs the backward pass and writes parameter gradients into `store`.
    /// Parameters that were not used (or do not influence the loss) get zeros.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (name, p) in store.iter_mut() {
            if let Some(&v) = self.params.get(name) {
                if let Some(g) = grads.get(v) {
                    p.grad.data_mut().copy_from_slice(g);
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let na = self.node(*a);
                let nb = self.node(*b);
                let (m, k, n) = (na.rows, na.cols, nb.cols);
                // dA = dC·Bᵀ
                let acc = slot(grads, *a, m * k);
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let br = &nb.value[p * n..(p + 1) * n];
                        acc[r * k + p] += dot(gr, br);
                    }
                }
                // dB = Aᵀ·dC
                let acc = slot(grads, *b, k * n);
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av = na.value[r * k + p];
                        if av != 0.0 {
                            axpy(av, gr, &mut acc[p * n..(p + 1) * n]);
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let t = transpose_kernel(g, rows, cols);
                add_into(slot(grads, *a, t.len()), &t);
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                add_into(slot(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(slot(grads, *a, g.len()), g);
                axpy(-1.0, g, slot(grads, *b, g.len()));
            }
            Op::Mul(a, b) => {
                let av = &self.node(*a).value;
                let bv = &self.node(*b).value;
                for (o, (gi, bi)) in slot(grads, *a, g.len()).iter_mut().zip(g.iter().zip(bv)) {
                    *o += gi * bi;
                }
                for (o, (gi, ai)) in slot(grads, *b, g.len()).iter_mut().zip(g.iter().zip(av)) {
                    *o += gi * ai;
                }
            }
            Op::AddRow(a, row) => {
                add_into(slot(grads, *a, g.len()), g);
                let acc = slot(grads, *row, cols);
                for gr in g.chunks_exact(cols.max(1)) {
                    add_into(acc, gr);
                }
            }
            Op::Scale(a, s) => axpy(*s, g, slot(grads, *a, g.len())),
            Op::AddScalar(a) => add_into(slot(grads, *a, g.len()), g),
            Op::Relu(a) => {
                let x = &self.node(*a).value;
                for ((o, gi), xi) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(x) {
                    if *xi > 0.0 {
                        *o += gi;
                    }
                }
            }
            Op::Tanh(a) => {
                for ((o, gi), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(&node.value) {
                    *o += gi * (1.0 - y * y);
                }
            }
            Op::Sigmoid(a) => {
                for ((o, gi), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(&node.value) {
                    *o += gi * y * (1.0 - y);
                }
            }
            Op::Ln(a) => {
                let x = &self.node(*a).value;
                for ((o, gi), xi) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(x) {
                    *o += gi / xi;
                }
            }
            Op::SoftmaxRows(a) => {
                let acc = slot(grads, *a, g.len());
                for r in 0..rows {
                    let y = &node.value[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let s = dot(y, gr);
                    for j in 0..cols {
                        acc[r * cols + j] += y[j] * (gr[j] - s);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let acc = slot(grads, *a, g.len());
                for r in 0..rows {
                    let y = &node.value[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let s: f64 = gr.iter().sum();
                    for j in 0..cols {
                        acc[r * cols + j] += gr[j] - y[j].exp() * s;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.node(*p).value.len();
                    add_into(slot(grads, *p, len), &g[off..off + len]);
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col_off = 0;
                for p in parts {
                    let pc = self.node(*p).cols;
                    let acc = slot(grads, *p, rows * pc);
                    for r in 0..rows {
                        add_into(
                            &mut acc[r * pc..(r + 1) * pc],
                            &g[r * cols + col_off..r * cols + col_off + pc],
                        );
                    }
                    col_off += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let len = self.node(*a).value.len();
                let acc = slot(grads, *a, len);
                add_into(&mut acc[start * cols..start * cols + g.len()], g);
            }
            Op::GatherCols(a, idx) => {
                let ac = self.node(*a).cols;
                let acc = slot(grads, *a, rows * ac);
                for r in 0..rows {
                    for (k, &j) in idx.iter().enumerate() {
                        acc[r * ac + j] += g[r * cols + k];
                    }
                }
            }
            Op::MeanRows(a) => {
                let ar = self.node(*a).rows;
                let acc = slot(grads, *a, ar * cols);
                let inv = 1.0 / ar as f64;
                for r in 0..ar {
                    axpy(inv, g, &mut acc[r * cols..(r + 1) * cols]);
                }
            }
            Op::MaxRows(a, arg) => {
                let len = self.node(*a).value.len();
                let acc = slot(grads, *a, len);
                for (j, &r) in arg.iter().enumerate() {
                    acc[r * cols + j] += g[j];
                }
            }
            Op::Sum(a) => {
                let len = self.node(*a).value.len();
                slot(grads, *a, len).iter_mut().for_each(|o| *o += g[0]);
            }
            Op::WeightedSum(a, w) => axpy(g[0], w, slot(grads, *a, w.len())),
            Op::Huber(a, t, delta) => {
                let x = &self.node(*a).value;
                let inv = g[0] / x.len() as f64;
                for ((o, xi), ti) in slot(grads, *a, x.len()).iter_mut().zip(x).zip(t) {
                    *o += inv * huber_grad(xi - ti, *delta);
                }
            }
            Op::RepeatCols(a) => {
                let acc = slot(grads, *a, rows);
                for (r, gr) in g.chunks_exact(cols.max(1)).enumerate() {
                    acc[r] += gr.iter().sum::<f64>();
                }
            }
            Op::Reshape(a) => add_into(slot(grads, *a, g.len()), g),
            Op::PairSum(a, b) => {
                let na = self.node(*a).rows;
                let nb = self.node(*b).rows;
                let n = cols;
                let acc = slot(grads, *a, na * n);
                for i in 0..na {
                    for j in 0..nb {
                        add_into(&mut acc[i * n..(i + 1) * n], &g[(i * nb + j) * n..(i * nb + j + 1) * n]);
                    }
                }
                let acc = slot(grads, *b, nb * n);
                for i in 0..na {
                    for j in 0..nb {
                        add_into(&mut acc[j * n..(j + 1) * n], &g[(i * nb + j) * n..(i * nb + j + 1) * n]);
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn axpy(s: f64, x: &[f64], acc: &mut [f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += s * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
    out
}

fn transpose_kernel(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn softmax_rows_kernel(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}
