//! Dense numeric kernel: matrices, probability vectors and the
//! information-theoretic quantities every loss is built from.
//!
//! All logarithms are natural. Every `log` applied to a probability carries
//! the additive guard [`LOG_GUARD`]; [`uniform_entropy`] is the one exception
//! and returns `ln C` exactly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Additive offset inside every `log(p + guard)`.
pub const LOG_GUARD: f64 = 1e-6;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != rhs.rows {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {}x{} · {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == S::zero() {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(rhs.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn t_matmul(&self, rhs: &Matrix<S>) -> Result<Matrix<S>> {
        if self.rows != rhs.rows {
            return Err(Error::invalid("t_matmul shape mismatch"));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for n in 0..self.rows {
            let a = self.row(n);
            let b = rhs.row(n);
            for (k, &ank) in a.iter().enumerate() {
                if ank == S::zero() {
                    continue;
                }
                for (o, &bnj) in out.row_mut(k).iter_mut().zip(b) {
                    *o += ank * bnj;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix<S>) -> Result<Matrix<S>> {
        if self.cols != rhs.cols {
            return Err(Error::invalid("matmul_t shape mismatch"));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for k in 0..rhs.rows {
                out.data[i * rhs.rows + k] = dot(a, rhs.row(k));
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// A probability vector over `C` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist<S>(Vec<S>);

impl<S: Scalar> ProbDist<S> {
    pub fn new(probs: Vec<S>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < S::zero()) {
            return Err(Error::invalid("probabilities must be finite and non-negative"));
        }
        let total: S = probs.iter().copied().sum();
        if (total - S::one()).abs() > S::prob_tolerance() {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("uniform over zero classes"));
        }
        Ok(Self(vec![S::one() / S::count(classes); classes]))
    }

    pub(crate) fn from_raw(probs: Vec<S>) -> Self {
        Self(probs)
    }

    #[inline]
    pub fn probs(&self) -> &[S] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn to_target(&self) -> TargetWeights<S> {
        TargetWeights(self.0.clone())
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

/// Lowest index of the maximum entry.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Soft training target. Entries may be negative and need not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetWeights<S>(Vec<S>);

impl<S: Scalar> TargetWeights<S> {
    pub fn new(weights: Vec<S>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("target weights must be finite"));
        }
        Ok(Self(weights))
    }

    pub(crate) fn from_raw(weights: Vec<S>) -> Self {
        Self(weights)
    }

    #[inline]
    pub fn weights(&self) -> &[S] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sum(&self) -> S {
        self.0.iter().copied().sum()
    }

    /// `self + scale · other`, element-wise.
    pub fn add_scaled(&self, other: &TargetWeights<S>, scale: S) -> Result<Self> {
        check_dims(self.len(), other.len())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(&a, &b)| a + scale * b).collect(),
        ))
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

impl<S: Scalar> From<ProbDist<S>> for TargetWeights<S> {
    fn from(p: ProbDist<S>) -> Self {
        TargetWeights(p.0)
    }
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Max-shifted softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Result<ProbDist<S>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("softmax input must be finite"));
    }
    Ok(ProbDist(softmax_unchecked(logits)))
}

pub(crate) fn softmax_unchecked<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Log-softmax without the guard; used by gradient oracles.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<S>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

#[inline]
pub(crate) fn guarded_cross_entropy<S: Scalar>(target: &[S], p: &[S]) -> S {
    let guard = S::lit(LOG_GUARD);
    target
        .iter()
        .zip(p)
        .fold(S::zero(), |acc, (&t, &pi)| acc - t * (pi + guard).ln())
}

/// Guarded Shannon entropy `Σ −p·log(p + 1e-6)` in nats, floored at zero.
///
/// Without the floor a one-hot vector would score `−log(1 + 1e-6) < 0`.
pub fn entropy<S: Scalar>(p: &ProbDist<S>) -> S {
    guarded_cross_entropy(&p.0, &p.0).max(S::zero())
}

/// `ln C`, the entropy of the uniform distribution, without the guard.
pub fn uniform_entropy<S: Scalar>(classes: usize) -> Result<S> {
    if classes < 2 {
        return Err(Error::invalid(format!("uniform entropy needs C >= 2, got {classes}")));
    }
    Ok(S::count(classes).ln())
}

/// Guarded cross-entropy `Σ −target·log(p + 1e-6)`.
pub fn cross_entropy<S: Scalar>(target: &TargetWeights<S>, p: &ProbDist<S>) -> Result<S> {
    check_dims(target.len(), p.len())?;
    Ok(guarded_cross_entropy(&target.0, &p.0))
}

/// `H(p_t, p) − H(p_t)`.
pub fn kl_divergence<S: Scalar>(p_t: &ProbDist<S>, p: &ProbDist<S>) -> Result<S> {
    check_dims(p_t.len(), p.len())?;
    Ok(guarded_cross_entropy(&p_t.0, &p.0) - entropy(p_t))
}
