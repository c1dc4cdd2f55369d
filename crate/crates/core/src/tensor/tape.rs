use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{matmul_nn, matmul_nt, matmul_tn, ParamId, ParamSet, Tensor};
use crate::error::{usage, Error, Result};
use crate::math;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Clamp01(Var),
    Concat(Var, Var),
    SoftmaxCe { logits: Var, labels: Vec<usize> },
    UniformCe(Var),
    Bce { logits: Var, targets: Vec<f64> },
    RowNorm(Var),
    RowSumSq(Var),
    WeightedSum(Var, Vec<f64>),
    Mean(Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // softmax probabilities for the cross-entropy nodes
    aux: Option<Tensor>,
}

/// Define-by-run operation record.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    trainable: Option<Vec<String>>,
}

/// Per-parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
    reached: Vec<bool>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn by_name<'a>(&'a self, params: &ParamSet, name: &str) -> Option<&'a Tensor> {
        params.id(name).map(|id| self.get(id))
    }

    /// Whether the parameter was on a differentiable path to the loss.
    pub fn reached(&self, id: ParamId) -> bool {
        self.reached[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for &v in row {
        s += math::exp(v - max);
    }
    let lse = max + math::ln(s);
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
    lse
}

/// Row-wise softmax of a 2-D tensor, stabilized by max subtraction.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = Tensor::zeros(&[t.rows(), c]);
    for i in 0..t.rows() {
        let o = &mut out.data_mut()[i * c..(i + 1) * c];
        log_softmax_row(t.row(i), o);
        for v in o.iter_mut() {
            *v = math::exp(*v);
        }
    }
    out
}

impl Tape {
    /// A tape on which every parameter is trainable.
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which only parameters under the given component prefixes
    /// require gradients; everything else enters as a constant.
    pub fn with_trainable(prefixes: &[&str]) -> Self {
        Self {
            trainable: Some(prefixes.iter().map(|p| String::from(*p)).collect()),
            ..Self::default()
        }
    }

    /// A tape with no trainable parameters (pure forward evaluation).
    pub fn inference() -> Self {
        Self::with_trainable(&[])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Records a parameter leaf; repeated calls reuse the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = match &self.trainable {
            None => true,
            Some(list) => {
                let name = params.name(id);
                list.iter().any(|p| super::params::has_prefix(name, p))
            }
        };
        let v = self.push(params.get(id).clone(), Op::Param, trainable);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(&[m, n]);
        matmul_nn(ta.data(), tb.data(), out.data_mut(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x[m×n] + b`, where `b` has `n` elements and is added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = tx.cols();
        if tx.shape().len() != 2 || tb.len() != n {
            return Err(dim_err("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.len() == 1 {
            let y = tb.data()[0];
            Ok(map(ta, |x| f(x, y)))
        } else if ta.len() == 1 {
            let x = ta.data()[0];
            Ok(map(tb, |y| f(x, y)))
        } else {
            Err(dim_err(name, ta, tb))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = map(self.value(a), |x| x * k);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = map(self.value(a), math::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = map(self.value(a), math::sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn clamp01(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.clamp(0.0, 1.0));
        let rg = self.rg(a);
        self.push(out, Op::Clamp01(a), rg)
    }

    /// Row-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(dim_err("concat", ta, tb));
        }
        let (m, p, q) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::matrix(m, p + q, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    fn check_logits(&self, logits: Var, op: &'static str, min_cols: usize) -> Result<(usize, usize)> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.cols() < min_cols {
            return Err(Error::Dimension {
                op,
                left: t.shape().to_vec(),
                right: vec![min_cols],
            });
        }
        if t.rows() == 0 {
            return Err(usage(alloc::format!("{op} on an empty batch")));
        }
        Ok((t.rows(), t.cols()))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.check_logits(logits, "softmax_cross_entropy", 2)?;
        if labels.len() != m {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: vec![m, c],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label { label: bad, classes: c });
        }
        let t = self.value(logits);
        let mut logp = vec![0.0; c];
        let mut probs = Tensor::zeros(&[m, c]);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            log_softmax_row(t.row(i), &mut logp);
            total -= logp[y];
            for (p, &lp) in probs.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&logp) {
                *p = math::exp(lp);
            }
        }
        let rg = self.rg(logits);
        let v = self.push(
            Tensor::scalar(total / m as f64),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        );
        self.nodes[v.0].aux = Some(probs);
        Ok(v)
    }

    /// Mean over rows of the cross-entropy between the uniform distribution
    /// and `softmax(logits)`: `-(1/C) Σ_c log p_c`. Minimum is `ln C`.
    pub fn uniform_cross_entropy(&mut self, logits: Var) -> Result<Var> {
        let (m, c) = self.check_logits(logits, "uniform_cross_entropy", 2)?;
        let t = self.value(logits);
        let mut logp = vec![0.0; c];
        let mut probs = Tensor::zeros(&[m, c]);
        let mut total = 0.0;
        for i in 0..m {
            log_softmax_row(t.row(i), &mut logp);
            total -= logp.iter().sum::<f64>() / c as f64;
            for (p, &lp) in probs.data_mut()[i * c..(i + 1) * c].iter_mut().zip(&logp) {
                *p = math::exp(lp);
            }
        }
        let rg = self.rg(logits);
        let v = self.push(Tensor::scalar(total / m as f64), Op::UniformCe(logits), rg);
        self.nodes[v.0].aux = Some(probs);
        Ok(v)
    }

    /// Mean binary cross-entropy of `sigmoid(logit)` against 0/1 targets,
    /// evaluated in the stable logit form.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.cols() != 1 || t.rows() != targets.len() {
            return Err(Error::Dimension {
                op: "binary_cross_entropy",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if t.rows() == 0 {
            return Err(usage("binary_cross_entropy on an empty batch"));
        }
        if targets.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
            return Err(usage("binary_cross_entropy targets must lie in [0, 1]"));
        }
        let m = targets.len();
        let total: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| math::bce_with_logit(z, y))
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Euclidean norm of each row, as an `m×1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|i| math::sqrt(t.row(i).iter().map(|v| v * v).sum()))
            .collect::<Vec<_>>();
        let out = Tensor::matrix(t.rows(), 1, data).expect("column");
        let rg = self.rg(a);
        self.push(out, Op::RowNorm(a), rg)
    }

    /// Sum of squares of each row, as an `m×1` column.
    pub fn row_sum_sq(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|i| t.row(i).iter().map(|v| v * v).sum())
            .collect::<Vec<_>>();
        let out = Tensor::matrix(t.rows(), 1, data).expect("column");
        let rg = self.rg(a);
        self.push(out, Op::RowSumSq(a), rg)
    }

    /// `Σ_i w_i a_i` over all elements.
    pub fn weighted_sum(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if t.len() != weights.len() {
            return Err(Error::Dimension {
                op: "weighted_sum",
                left: t.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let s = t.data().iter().zip(weights).map(|(x, w)| x * w).sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(a, weights.to_vec()), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(usage("mean of an empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Reverse sweep from a scalar `loss`. Parameters not reachable from the
    /// loss (or frozen on this tape) receive zero gradients.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(usage(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite {
                what: String::from("loss"),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut out = Gradients {
            grads: params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect(),
            reached: vec![false; params.len()],
        };
        for (&id, &v) in &self.params {
            if id.0 >= out.grads.len() {
                return Err(usage("tape parameter not in the given ParamSet"));
            }
            if let Some(g) = grads.get(v.0).and_then(|g| g.as_ref()) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: alloc::format!("gradient of {}", params.name(id)),
                    });
                }
                out.grads[id.0].data_mut().copy_from_slice(g);
                out.reached[id.0] = true;
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |s| matmul_nt(g, tb.data(), s, m, n, k));
                acc(*b, &mut |s| matmul_tn(ta.data(), g, s, m, k, n));
            }
            Op::AddBias(x, b) => {
                let n = nodes[x.0].value.cols();
                acc(*x, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    for row in g.chunks(n.max(1)) {
                        add_into(s, row);
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |s| reduce_into(s, g, 1.0));
                acc(*b, &mut |s| reduce_into(s, g, sign));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |s| mul_grad_into(s, g, tb));
                acc(*b, &mut |s| mul_grad_into(s, g, ta));
            }
            Op::Scale(a, k) => acc(*a, &mut |s| {
                for (d, &gv) in s.iter_mut().zip(g) {
                    *d += k * gv;
                }
            }),
            Op::Relu(a) => {
                let x = nodes[a.0].value.data();
                acc(*a, &mut |s| {
                    for ((d, &gv), &xv) in s.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for ((d, &gv), &yv) in s.iter_mut().zip(g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                })
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |s| {
                    for ((d, &gv), &yv) in s.iter_mut().zip(g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                })
            }
            Op::Clamp01(a) => {
                let x = nodes[a.0].value.data();
                acc(*a, &mut |s| {
                    for ((d, &gv), &xv) in s.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 && xv < 1.0 {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Concat(a, b) => {
                let (p, q) = (nodes[a.0].value.cols(), nodes[b.0].value.cols());
                let w = p + q;
                acc(*a, &mut |s| {
                    for (i, row) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut s[i * p..(i + 1) * p], &row[..p]);
                    }
                });
                acc(*b, &mut |s| {
                    for (i, row) in g.chunks(w.max(1)).enumerate() {
                        add_into(&mut s[i * q..(i + 1) * q], &row[p..]);
                    }
                });
            }
            Op::SoftmaxCe { logits, labels } => {
                let probs = node.aux.as_ref().expect("probs");
                let (m, c) = (probs.rows(), probs.cols());
                let k = g[0] / m as f64;
                acc(*logits, &mut |s| {
                    for (i, &y) in labels.iter().enumerate() {
                        for j in 0..c {
                            let t = if j == y { 1.0 } else { 0.0 };
                            s[i * c + j] += k * (probs.data()[i * c + j] - t);
                        }
                    }
                });
            }
            Op::UniformCe(logits) => {
                let probs = node.aux.as_ref().expect("probs");
                let (m, c) = (probs.rows(), probs.cols());
                let k = g[0] / m as f64;
                let u = 1.0 / c as f64;
                acc(*logits, &mut |s| {
                    for (d, &p) in s.iter_mut().zip(probs.data()) {
                        *d += k * (p - u);
                    }
                });
            }
            Op::Bce { logits, targets } => {
                let z = nodes[logits.0].value.data();
                let k = g[0] / targets.len() as f64;
                acc(*logits, &mut |s| {
                    for ((d, &zv), &y) in s.iter_mut().zip(z).zip(targets) {
                        *d += k * (math::sigmoid(zv) - y);
                    }
                });
            }
            Op::RowNorm(a) => {
                let x = &nodes[a.0].value;
                let n = x.cols();
                let norms = node.value.data();
                acc(*a, &mut |s| {
                    for i in 0..x.rows() {
                        if norms[i] == 0.0 {
                            continue;
                        }
                        let k = g[i] / norms[i];
                        for j in 0..n {
                            s[i * n + j] += k * x.data()[i * n + j];
                        }
                    }
                });
            }
            Op::RowSumSq(a) => {
                let x = &nodes[a.0].value;
                let n = x.cols();
                acc(*a, &mut |s| {
                    for i in 0..x.rows() {
                        for j in 0..n {
                            s[i * n + j] += 2.0 * g[i] * x.data()[i * n + j];
                        }
                    }
                });
            }
            Op::WeightedSum(a, w) => acc(*a, &mut |s| {
                for (d, &wv) in s.iter_mut().zip(w) {
                    *d += g[0] * wv;
                }
            }),
            Op::Mean(a) => {
                let k = g[0] / nodes[a.0].value.len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += k));
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Accumulates `sign * g` into `dst`, summing when `dst` is a broadcast scalar.
fn reduce_into(dst: &mut [f64], g: &[f64], sign: f64) {
    if dst.len() == g.len() {
        for (d, &gv) in dst.iter_mut().zip(g) {
            *d += sign * gv;
        }
    } else {
        dst[0] += sign * g.iter().sum::<f64>();
    }
}

/// Gradient of one factor of a (possibly broadcast) product.
fn mul_grad_into(dst: &mut [f64], g: &[f64], other: &Tensor) {
    let o = other.data();
    match (dst.len() == g.len(), o.len() == g.len()) {
        (true, true) => {
            for ((d, &gv), &ov) in dst.iter_mut().zip(g).zip(o) {
                *d += gv * ov;
            }
        }
        (true, false) => {
            for (d, &gv) in dst.iter_mut().zip(g) {
                *d += gv * o[0];
            }
        }
        (false, _) => {
            dst[0] += g.iter().zip(o).map(|(gv, ov)| gv * ov).sum::<f64>();
        }
    }
}
