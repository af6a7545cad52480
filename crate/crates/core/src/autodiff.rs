//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every forward operation appends one record to a [`Tape`] and returns a
//! [`Var`] handle to its output. Records are appended in evaluation order, so
//! the tape is topologically sorted by construction and [`Tape::backward`]
//! visits each record exactly once, in reverse.
//!
//! Leaves are either tracked parameters ([`Tape::param`]) or constants
//! ([`Tape::constant`]). An output is tracked when any of its inputs is, and
//! only tracked leaves receive gradients. [`Tape::backward`] consumes the
//! tape, so each phase of a training iteration starts from a fresh one.
//!
//! ```
//! use mfrw_core::autodiff::Tape;
//! use mfrw_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
//! let loss = tape.mean(w).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[0.25; 4]);
//! ```

use std::collections::BTreeMap;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{gemm, gemm_a_bt, gemm_at_b, Tensor};

/// Pre-activations are clamped to this magnitude inside `sigmoid`, which keeps
/// the output strictly inside (0, 1) in `f64`.
pub const SIGMOID_CLAMP: f64 = 36.0;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Affine {
        x: Var,
        w: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Mean(Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    Reshape(Var),
    /// Saved softmax probabilities, one row per example.
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    tracked: bool,
    op: Op,
}

/// Ordered record of forward operations.
#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradients of tracked leaves, keyed by their [`Var`].
#[derive(Debug, Default, Clone)]
pub struct GradientMap {
    grads: BTreeMap<Var, Tensor>,
}

impl GradientMap {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradients for `vars` in order; a missing entry is a usage error.
    pub fn collect(&self, vars: &[Var]) -> Result<Vec<Tensor>> {
        vars.iter()
            .map(|v| {
                self.grads
                    .get(v)
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("no gradient for var {}", v.0)))
            })
            .collect()
    }

    /// Gradients for `vars` in order, substituting zeros (shaped like
    /// `like`) where the loss does not depend on a var.
    pub fn collect_or_zero(&self, vars: &[Var], like: &[Tensor]) -> Vec<Tensor> {
        vars.iter()
            .zip(like)
            .map(|(v, t)| self.grads.get(v).cloned().unwrap_or_else(|| t.zeros_like()))
            .collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// A tracked leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// An untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn params<'a>(&mut self, values: impl IntoIterator<Item = &'a Tensor>) -> Vec<Var> {
        values.into_iter().map(|t| self.param(t.clone())).collect()
    }

    pub fn constants<'a>(&mut self, values: impl IntoIterator<Item = &'a Tensor>) -> Vec<Var> {
        values
            .into_iter()
            .map(|t| self.constant(t.clone()))
            .collect()
    }

    fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.records.push(Record {
            value,
            tracked,
            op: Op::Leaf,
        });
        Var(self.records.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.records[v.0].tracked
    }

    /// A constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = inputs.iter().any(|v| self.records[v.0].tracked);
        self.records.push(Record { value, tracked, op });
        Ok(Var(self.records.len() - 1))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.records.len() {
            Ok(())
        } else {
            Err(Error::Usage(format!("var {} is not on this tape", v.0)))
        }
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        self.check(v)?;
        self.value(v).dims2().ok_or_else(|| {
            dim_err(
                op,
                format!("expected a matrix, got {:?}", self.value(v).shape()),
            )
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(dim_err("matmul", format!("[{m}×{k}] × [{k2}×{n}]")));
        }
        let out = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(
            "matmul",
            Tensor::matrix(m, n, out)?,
            &[a, b],
            Op::MatMul(a, b),
        )
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| self.shape_pair_err("hadamard", a, b))?;
        self.push("hadamard", out, &[a, b], Op::Hadamard(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| self.shape_pair_err("add", a, b))?;
        self.push("add", out, &[a, b], Op::Add(a, b))
    }

    fn shape_pair_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        dim_err(
            op,
            format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
        )
    }

    /// `x·W + bias` with `x:[n×d]`, `W:[d×h]`, `bias:[h]` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.matrix_dims("affine", x)?;
        let (d2, h) = self.matrix_dims("affine", w)?;
        self.check(bias)?;
        if d != d2 || self.value(bias).shape() != [h] {
            return Err(dim_err(
                "affine",
                format!(
                    "x [{n}×{d}], W [{d2}×{h}], bias {:?}",
                    self.value(bias).shape()
                ),
            ));
        }
        let mut out = gemm(self.value(x).data(), self.value(w).data(), n, d, h);
        let b = self.value(bias).data();
        for row in out.chunks_mut(h) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.push(
            "affine",
            Tensor::matrix(n, h, out)?,
            &[x, w, bias],
            Op::Affine { x, w, bias },
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push("relu", out, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, &[a], Op::Sigmoid(a))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = Tensor::scalar(self.value(a).mean());
        self.push("mean", out, &[a], Op::Mean(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * c);
        self.push("scale", out, &[a], Op::Scale(a, c))
    }

    /// Joins `a:[n×p]` and `b:[n×q]` into `[n×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, p) = self.matrix_dims("concat_cols", a)?;
        let (n2, q) = self.matrix_dims("concat_cols", b)?;
        if n != n2 {
            return Err(dim_err("concat_cols", format!("{n} rows vs {n2} rows")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        self.push(
            "concat_cols",
            Tensor::matrix(n, p + q, out)?,
            &[a, b],
            Op::ConcatCols(a, b),
        )
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).reshape(shape)?;
        self.push("reshape", out, &[a], Op::Reshape(a))
    }

    /// Per-example `−log softmax(logits_i)[labels_i]`, stabilised by
    /// subtracting each row's maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims("softmax_cross_entropy", logits)?;
        if labels.len() != n {
            return Err(dim_err(
                "softmax_cross_entropy",
                format!("{n} rows but {} labels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let (losses, probs) = softmax_ce_rows(self.value(logits).data(), labels, c);
        self.push(
            "softmax_cross_entropy",
            Tensor::vector(losses)?,
            &[logits],
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Back-propagates from a one-element `root`, consuming the tape.
    pub fn backward(self, root: Var) -> Result<GradientMap> {
        self.check(root)?;
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        if !self.records[root.0].tracked {
            return Ok(GradientMap::default());
        }
        grads[root.0] = Some(Tensor::ones(self.value(root).shape()));

        for idx in (0..=root.0).rev() {
            let rec = &self.records[idx];
            if !rec.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(rec.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, contrib) in self.local_grads(rec, &g)? {
                if !self.records[input.0].tracked {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.axpy(1.0, &contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let rec = &self.records[i];
                (rec.tracked && matches!(rec.op, Op::Leaf))
                    .then_some(g)
                    .flatten()
                    .map(|g| (Var(i), g))
            })
            .collect();
        Ok(GradientMap { grads })
    }

    /// Vector-Jacobian products of one record with respect to its inputs.
    fn local_grads(&self, rec: &Record, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        let tracked = |v: Var| self.records[v.0].tracked;
        let mut out = Vec::with_capacity(3);
        match &rec.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = val(a).dims2().unwrap();
                let n = val(b).dims2().unwrap().1;
                if tracked(a) {
                    let ga = gemm_a_bt(g.data(), val(b).data(), m, n, k);
                    out.push((a, Tensor::matrix(m, k, ga)?));
                }
                if tracked(b) {
                    let gb = gemm_at_b(val(a).data(), g.data(), m, k, n);
                    out.push((b, Tensor::matrix(k, n, gb)?));
                }
            }
            &Op::Hadamard(a, b) => {
                if tracked(a) {
                    out.push((a, g.zip_map(val(b), |gv, bv| gv * bv)?));
                }
                if tracked(b) {
                    out.push((b, g.zip_map(val(a), |gv, av| gv * av)?));
                }
            }
            &Op::Add(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            &Op::Affine { x, w, bias } => {
                let (n, d) = val(x).dims2().unwrap();
                let h = val(w).dims2().unwrap().1;
                if tracked(x) {
                    let gx = gemm_a_bt(g.data(), val(w).data(), n, h, d);
                    out.push((x, Tensor::matrix(n, d, gx)?));
                }
                if tracked(w) {
                    let gw = gemm_at_b(val(x).data(), g.data(), n, d, h);
                    out.push((w, Tensor::matrix(d, h, gw)?));
                }
                if tracked(bias) {
                    let mut gb = vec![0.0; h];
                    for row in g.data().chunks(h) {
                        for (acc, gv) in gb.iter_mut().zip(row) {
                            *acc += gv;
                        }
                    }
                    out.push((bias, Tensor::vector(gb)?));
                }
            }
            &Op::Relu(a) => {
                out.push((
                    a,
                    g.zip_map(val(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?,
                ));
            }
            &Op::Sigmoid(a) => {
                out.push((a, g.zip_map(&rec.value, |gv, s| gv * s * (1.0 - s))?));
            }
            &Op::Mean(a) => {
                let n = val(a).len() as f64;
                let gv = g.data()[0] / n;
                out.push((a, Tensor::filled(val(a).shape(), gv)));
            }
            &Op::Scale(a, c) => {
                out.push((a, g.map(|v| v * c)));
            }
            &Op::ConcatCols(a, b) => {
                let (n, p) = val(a).dims2().unwrap();
                let q = val(b).dims2().unwrap().1;
                let gd = g.data();
                let mut ga = Vec::with_capacity(n * p);
                let mut gb = Vec::with_capacity(n * q);
                for row in gd.chunks(p + q) {
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                out.push((a, Tensor::matrix(n, p, ga)?));
                out.push((b, Tensor::matrix(n, q, gb)?));
            }
            &Op::Reshape(a) => {
                out.push((a, g.reshape(val(a).shape().to_vec())?));
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let (n, c) = val(*logits).dims2().unwrap();
                let mut gl = probs.clone();
                for i in 0..n {
                    let gi = g.data()[i];
                    let row = &mut gl[i * c..(i + 1) * c];
                    row[labels[i]] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= gi;
                    }
                }
                out.push((*logits, Tensor::matrix(n, c, gl)?));
            }
        }
        Ok(out)
    }
}

/// Logistic function with the pre-activation clamped to ±[`SIGMOID_CLAMP`].
pub fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Returns per-row losses and the softmax probabilities.
fn softmax_ce_rows(logits: &[f64], labels: &[usize], c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut losses = Vec::with_capacity(labels.len());
    let mut probs = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        losses.push(log_sum - (row[y] - max));
        probs.extend(row.iter().map(|&z| (z - max).exp() / sum));
    }
    (losses, probs)
}
