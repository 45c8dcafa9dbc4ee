//! Neural building blocks on top of the tape: dense layers, the two-layer
//! MLP, the GRU cell and plain value-level helpers.

use rand_chacha::ChaCha8Rng;

use super::tape::{softmax_rows_kernel, Tape, Var};
use super::tensor::{glorot_uniform, ParameterStore, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of a matrix.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2();
    if r == 0 || c == 0 {
        return Err(Error::dim("softmax of an empty matrix"));
    }
    Ok(Tensor::from_raw(r, c, softmax_rows_kernel(m.data(), c)))
}

/// Softmax of a single vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::dim("softmax of an empty vector"));
    }
    Ok(softmax_rows_kernel(v, v.len()))
}

fn bias(n: usize) -> Tensor {
    Tensor::from_raw(1, n, vec![0.0; n])
}

/// Affine layer `x·W + b` with `W` stored as in×out.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: String,
    pub b: Option<String>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn init(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let w = format!("{prefix}.w");
        store.insert(&w, glorot_uniform(rng, fan_in, fan_out))?;
        let b = if with_bias {
            let b = format!("{prefix}.b");
            store.insert(&b, bias(fan_out))?;
            Some(b)
        } else {
            None
        };
        Ok(Self { w, b, fan_in, fan_out })
    }

    /// Same as [`Linear::init`] but with an all-zero weight matrix.
    pub fn init_zero(store: &mut ParameterStore, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let w = format!("{prefix}.w");
        store.insert(&w, Tensor::from_raw(fan_in, fan_out, vec![0.0; fan_in * fan_out]))?;
        Ok(Self { w, b: None, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, &self.w)?;
        let y = tape.matmul(x, w)?;
        match &self.b {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two-layer perceptron: affine → ReLU → affine.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp2 {
    pub fn init(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        store.insert(format!("{prefix}.w1"), glorot_uniform(rng, input, hidden))?;
        store.insert(format!("{prefix}.b1"), bias(hidden))?;
        store.insert(format!("{prefix}.w2"), glorot_uniform(rng, hidden, output))?;
        store.insert(format!("{prefix}.b2"), bias(output))?;
        Ok(Self { prefix: prefix.to_string(), input, hidden, output })
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    /// `x` is rows×input; returns rows×output.
    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let (_, c) = tape.dims(x);
        if c != self.input {
            return Err(Error::dim(format!("{} expects width {}, got {c}", self.prefix, self.input)));
        }
        let w1 = tape.param(store, &self.name("w1"))?;
        let b1 = tape.param(store, &self.name("b1"))?;
        let z = tape.matmul(x, w1)?;
        let z = tape.add_row(z, b1)?;
        let a = tape.relu(z);
        self.second_layer(tape, store, a)
    }

    fn second_layer(&self, tape: &mut Tape, store: &ParameterStore, a: Var) -> Result<Var> {
        let w2 = tape.param(store, &self.name("w2"))?;
        let b2 = tape.param(store, &self.name("b2"))?;
        let y = tape.matmul(a, w2)?;
        tape.add_row(y, b2)
    }

    /// Evaluates the MLP on `[per_row_i ⊕ shared]` for every row `i` without
    /// materialising the concatenation: the first-layer weight is split into
    /// the block acting on `per_row` and the block acting on the shared row.
    pub fn forward_split(&self, tape: &mut Tape, store: &ParameterStore, per_row: Var, shared: Var) -> Result<Var> {
        let (_, a) = tape.dims(per_row);
        let (sr, b) = tape.dims(shared);
        if sr != 1 || a + b != self.input {
            return Err(Error::dim(format!(
                "{} expects width {}, got {a} + {sr}x{b}",
                self.prefix, self.input
            )));
        }
        let w1 = tape.param(store, &self.name("w1"))?;
        let b1 = tape.param(store, &self.name("b1"))?;
        let w_row = tape.slice_rows(w1, 0, a)?;
        let w_shared = tape.slice_rows(w1, a, b)?;
        let zr = tape.matmul(per_row, w_row)?;
        let zs = tape.matmul(shared, w_shared)?;
        let zs = tape.add(zs, b1)?;
        let z = tape.add_row(zr, zs)?;
        let h = tape.relu(z);
        self.second_layer(tape, store, h)
    }

    /// Scores every (i, j) combination of `[left_i ⊕ right_j]`, with the
    /// first-layer weight split at `left` width. Rows come out in row-major
    /// (i, j) order.
    pub fn forward_pairs(&self, tape: &mut Tape, store: &ParameterStore, left: Var, right: Var) -> Result<Var> {
        let (_, a) = tape.dims(left);
        let (_, b) = tape.dims(right);
        if a + b != self.input {
            return Err(Error::dim(format!("{} expects width {}, got {a} + {b}", self.prefix, self.input)));
        }
        let w1 = tape.param(store, &self.name("w1"))?;
        let b1 = tape.param(store, &self.name("b1"))?;
        let wl = tape.slice_rows(w1, 0, a)?;
        let wr = tape.slice_rows(w1, a, b)?;
        let zl = tape.matmul(left, wl)?;
        let zr = tape.matmul(right, wr)?;
        let zr = tape.add_row(zr, b1)?;
        let z = tape.pair_sum(zl, zr)?;
        let h = tape.relu(z);
        self.second_layer(tape, store, h)
    }

    /// Value-level evaluation of a single input vector.
    pub fn eval(&self, store: &ParameterStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.row(x);
        let y = self.forward(&mut tape, store, xv)?;
        Ok(tape.value(y).to_vec())
    }
}

/// Gated recurrent unit. The reset gate multiplies the previous state before
/// the recurrent candidate projection:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// n  = tanh(x·Wn + (r∘h)·Un + bn)
/// h' = (1 − z)∘n + z∘h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn init(store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        for gate in ["z", "r", "n"] {
            store.insert(format!("{prefix}.w_{gate}"), glorot_uniform(rng, input, hidden))?;
            store.insert(format!("{prefix}.u_{gate}"), glorot_uniform(rng, hidden, hidden))?;
            store.insert(format!("{prefix}.b_{gate}"), bias(hidden))?;
        }
        Ok(Self { prefix: prefix.to_string(), input, hidden })
    }

    fn p(&self, tape: &mut Tape, store: &ParameterStore, kind: &str, gate: &str) -> Result<Var> {
        tape.param(store, &format!("{}.{kind}_{gate}", self.prefix))
    }

    fn gate_pre(&self, tape: &mut Tape, store: &ParameterStore, gate: &str, x: Var, h: Var) -> Result<Var> {
        let w = self.p(tape, store, "w", gate)?;
        let u = self.p(tape, store, "u", gate)?;
        let b = self.p(tape, store, "b", gate)?;
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(h, u)?;
        let s = tape.add(xw, hu)?;
        tape.add_row(s, b)
    }

    /// One step for a batch: `x` is B×input, `h` is B×hidden.
    pub fn step(&self, tape: &mut Tape, store: &ParameterStore, x: Var, h: Var) -> Result<Var> {
        let (bx, cx) = tape.dims(x);
        let (bh, ch) = tape.dims(h);
        if cx != self.input || ch != self.hidden || bx != bh {
            return Err(Error::dim(format!(
                "gru step with x {bx}x{cx}, h {bh}x{ch}; expected width {} and {}",
                self.input, self.hidden
            )));
        }
        let z_pre = self.gate_pre(tape, store, "z", x, h)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = self.gate_pre(tape, store, "r", x, h)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let n_pre = self.gate_pre(tape, store, "n", x, rh)?;
        let n = tape.tanh(n_pre);
        let neg_z = tape.scale(z, -1.0);
        let keep = tape.add_scalar(neg_z, 1.0);
        let a = tape.mul(keep, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }

    /// Value-level single step.
    pub fn step_values(&self, store: &ParameterStore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xv = tape.row(x);
        let hv = tape.row(h);
        let out = self.step(&mut tape, store, xv, hv)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Scaled dot-product attention with an optional additive key bias:
/// `softmax((q·kᵀ + q·kbᵀ) / √d) · v`. Returns the output and the weights.
pub fn scaled_attention(tape: &mut Tape, q: Var, k: Var, v: Var, key_bias: Option<Var>) -> Result<(Var, Var)> {
    let (_, d) = tape.dims(q);
    let (nk, dk) = tape.dims(k);
    let (nv, _) = tape.dims(v);
    if dk != d || nv != nk {
        return Err(Error::dim(format!("attention with q width {d}, keys {nk}x{dk}, values {nv} rows")));
    }
    let kt = tape.transpose(k);
    let mut logits = tape.matmul(q, kt)?;
    if let Some(kb) = key_bias {
        let (nb, db) = tape.dims(kb);
        if nb != nk || db != d {
            return Err(Error::dim(format!("key bias {nb}x{db} does not match keys {nk}x{d}")));
        }
        let kbt = tape.transpose(kb);
        let bias = tape.matmul(q, kbt)?;
        logits = tape.add(logits, bias)?;
    }
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let w = tape.softmax_rows(logits)?;
    Ok((tape.matmul(w, v)?, w))
}
