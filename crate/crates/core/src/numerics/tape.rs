//! Define-by-run reverse-mode differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Each primitive appends a
//! node holding its value and the indices of its operands, so node order is a
//! topological order and the backward sweep simply walks the tape in reverse.
//!
//! ```
//! use fade_core::numerics::{ParamSet, Tape, Tensor2};
//!
//! let mut params = ParamSet::new();
//! params.insert("w", Tensor2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
//!
//! let mut tape = Tape::new();
//! let w = tape.param("w", params.get("w").unwrap().clone());
//! let loss = tape.sum(w);
//! let grads = tape.backward(loss, &params).unwrap();
//! assert_eq!(grads.get("w").unwrap().data(), &[1.0; 4]);
//! ```

use super::{ParamSet, Tensor2};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Silu(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    RowSqNorms(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SoftmaxCrossEntropy(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
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

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Constant)
    }

    /// A trainable leaf. Registering the same name twice accumulates both
    /// contributions into one gradient entry.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor2) -> Var {
        self.push(value, Op::Param(name.into()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row_bias(self.value(bias))?;
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(silu);
        self.push(value, Op::Silu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).scale(factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor2::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor2::scalar(self.value(x).mean());
        self.push(value, Op::Mean(x))
    }

    /// Squared L2 norm of every row, producing a `rows × 1` column.
    pub fn row_sq_norms(&mut self, x: Var) -> Var {
        let value = self.value(x).row_sq_norms();
        self.push(value, Op::RowSqNorms(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor2::concat_cols(&refs)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(table).gather_rows(indices)?;
        Ok(self.push(value, Op::GatherRows(table, indices.to_vec())))
    }

    /// Mean negative log-softmax probability of each row's label.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        if l.rows() != labels.len() || l.rows() == 0 {
            return Err(Error::contract(format!(
                "cross entropy over {} rows with {} labels",
                l.rows(),
                labels.len()
            )));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = l.row(r);
            if y >= row.len() {
                return Err(Error::contract(format!("label {y} out of range")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Tensor2::scalar(total / labels.len() as f64);
        Ok(self.push(value, Op::SoftmaxCrossEntropy(logits, labels.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`. Returns one gradient per entry of
    /// `params`; entries whose name never appears on the tape come back as
    /// zeros.
    pub fn backward(&self, loss: Var, params: &ParamSet) -> Result<ParamSet> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::contract("loss node is not on this tape"));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }

        let mut adjoints: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor2::scalar(1.0));
        let mut grads = params.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => {
                    if let Some(slot) = grads.get_mut(name) {
                        slot.add_assign(&g)?;
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut adjoints, *a, da)?;
                    accumulate(&mut adjoints, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, g.clone())?;
                    accumulate(&mut adjoints, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *b, g.scale(-1.0))?;
                    accumulate(&mut adjoints, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(*b))?;
                    let db = g.hadamard(self.value(*a))?;
                    accumulate(&mut adjoints, *a, da)?;
                    accumulate(&mut adjoints, *b, db)?;
                }
                Op::AddRowBias(x, bias) => {
                    let mut db = Tensor2::zeros(1, g.cols());
                    for row in g.iter_rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adjoints, *bias, db)?;
                    accumulate(&mut adjoints, *x, g)?;
                }
                Op::Silu(x) => {
                    let input = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(input.data()) {
                        let s = sigmoid(v);
                        *d *= s * (1.0 + v * (1.0 - s));
                    }
                    accumulate(&mut adjoints, *x, dx)?;
                }
                Op::Tanh(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= 1.0 - y * y;
                    }
                    accumulate(&mut adjoints, *x, dx)?;
                }
                Op::Relu(x) => {
                    let input = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.data_mut().iter_mut().zip(input.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adjoints, *x, dx)?;
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut adjoints, *x, g.scale(*factor))?;
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut adjoints, *x, Tensor2::filled(r, c, g.item()?))?;
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let n = (r * c).max(1) as f64;
                    accumulate(&mut adjoints, *x, Tensor2::filled(r, c, g.item()? / n))?;
                }
                Op::RowSqNorms(x) => {
                    let input = self.value(*x);
                    let mut dx = input.scale(2.0);
                    for r in 0..dx.rows() {
                        let gr = g.get(r, 0);
                        for v in dx.row_mut(r) {
                            *v *= gr;
                        }
                    }
                    accumulate(&mut adjoints, *x, dx)?;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut dp = Tensor2::zeros(rows, cols);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut adjoints, p, dp)?;
                    }
                }
                Op::GatherRows(table, indices) => {
                    let (rows, cols) = self.value(*table).shape();
                    let mut dt = Tensor2::zeros(rows, cols);
                    for (i, &src) in indices.iter().enumerate() {
                        for (d, v) in dt.row_mut(src).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut adjoints, *table, dt)?;
                }
                Op::SoftmaxCrossEntropy(logits, labels) => {
                    let l = self.value(*logits);
                    let scale = g.item()? / labels.len() as f64;
                    let mut dl = Tensor2::zeros(l.rows(), l.cols());
                    for (r, &y) in labels.iter().enumerate() {
                        let row = l.row(r);
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                        for (c, d) in dl.row_mut(r).iter_mut().enumerate() {
                            let p = (row[c] - max).exp() / z;
                            *d = scale * (p - if c == y { 1.0 } else { 0.0 });
                        }
                    }
                    accumulate(&mut adjoints, *logits, dl)?;
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adjoints: &mut [Option<Tensor2>], target: Var, grad: Tensor2) -> Result<()> {
    match &mut adjoints[target.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, rng_from_seed};

    fn params_with(name: &str, t: Tensor2) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, t);
        p
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let w = Tensor2::from_rows(&[[0.5, -1.0], [2.0, 3.0]]).unwrap();
        let params = params_with("w", w.clone());
        let mut tape = Tape::new();
        let wv = tape.param("w", w);
        let loss = tape.sum(wv);
        let g = tape.backward(loss, &params).unwrap();
        assert_eq!(g.get("w").unwrap(), &Tensor2::filled(2, 2, 1.0));
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut params = params_with("w", Tensor2::filled(2, 2, 1.0));
        params.insert("unused", Tensor2::filled(3, 1, 7.0));
        let mut tape = Tape::new();
        let wv = tape.param("w", params.get("w").unwrap().clone());
        let loss = tape.sum(wv);
        let g = tape.backward(loss, &params).unwrap();
        assert_eq!(g.get("unused").unwrap(), &Tensor2::zeros(3, 1));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let params = ParamSet::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor2::zeros(2, 2));
        assert!(matches!(tape.backward(x, &params), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_tape_is_rejected() {
        let tape = Tape::new();
        assert!(matches!(
            tape.backward(Var(0), &ParamSet::new()),
            Err(Error::Contract(_))
        ));
    }

    fn wx_sq(w: &Tensor2, x: &Tensor2) -> f64 {
        w.matmul(x).unwrap().row_sq_norms().sum()
    }

    #[test]
    fn squared_norm_of_wx_matches_finite_differences() {
        let mut rng = rng_from_seed(11);
        let w = Tensor2::from_vec(3, 4, normal_vec(&mut rng, 12)).unwrap();
        let x = Tensor2::from_vec(4, 2, normal_vec(&mut rng, 8)).unwrap();
        let params = params_with("w", w.clone());
        let mut tape = Tape::new();
        let wv = tape.param("w", w.clone());
        let xv = tape.constant(x.clone());
        let y = tape.matmul(wv, xv).unwrap();
        let n = tape.row_sq_norms(y);
        let loss = tape.sum(n);
        let g = tape.backward(loss, &params).unwrap();
        let analytic = g.get("w").unwrap();

        let h = 1e-5;
        for i in 0..w.len() {
            let mut plus = w.clone();
            plus.data_mut()[i] += h;
            let mut minus = w.clone();
            minus.data_mut()[i] -= h;
            let numeric = (wx_sq(&plus, &x) - wx_sq(&minus, &x)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            assert!(rel <= 1e-4, "entry {i}: analytic {a} numeric {numeric}");
        }
    }

    #[test]
    fn param_registered_twice_accumulates() {
        let w = Tensor2::filled(1, 2, 3.0);
        let params = params_with("w", w.clone());
        let mut tape = Tape::new();
        let a = tape.param("w", w.clone());
        let b = tape.param("w", w);
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss, &params).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[2.0, 2.0]);
    }
}
