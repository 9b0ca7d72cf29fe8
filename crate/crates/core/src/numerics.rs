//! Dense linear algebra and loss primitives.
//!
//! Everything here is a pure function over caller-owned buffers, in 64-bit
//! floats. Probabilities are clamped to [`PROB_FLOOR`] before any logarithm
//! so saturated softmax outputs cannot produce infinities.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::mathx;
use crate::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row-major data; the length must be
    /// `rows * cols` and every entry finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {} values for a {}x{} matrix, got {}",
                rows * cols,
                rows,
                cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Shape(format!(
                    "row {} has length {}, expected {}",
                    i,
                    row.len(),
                    cols
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects the given rows into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Index(format!(
                    "row {} out of range for {} rows",
                    i, self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }
}

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Validates and wraps raw values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        let mut sum = 0.0;
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "probability entry {v} is negative or non-finite"
                )));
            }
            sum += v;
        }
        if mathx::abs(sum - 1.0) > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

/// Numerically stabilized softmax (max-subtraction), shift-invariant.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logit".into()));
    }
    Ok(ProbVector {
        values: softmax_unchecked(logits),
    })
}

/// Softmax for pre-validated finite inputs.
pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut values: Vec<f64> = logits.iter().map(|&u| mathx::exp(u - max)).collect();
    let sum: f64 = values.iter().sum();
    for v in &mut values {
        *v /= sum;
    }
    values
}

/// Cross entropy `-sum_c target_c * ln(max(p_c, PROB_FLOOR))`.
///
/// Soft targets are allowed as long as they sum to one.
pub fn cross_entropy(p: &ProbVector, target: &[f64]) -> Result<f64> {
    if p.len() != target.len() {
        return Err(Error::Shape(format!(
            "probabilities have length {}, target {}",
            p.len(),
            target.len()
        )));
    }
    let tsum: f64 = target.iter().sum();
    if mathx::abs(tsum - 1.0) > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "target sums to {tsum}, expected 1"
        )));
    }
    Ok(cross_entropy_unchecked(p.values(), target))
}

pub(crate) fn cross_entropy_unchecked(p: &[f64], target: &[f64]) -> f64 {
    p.iter()
        .zip(target)
        .map(|(&pc, &tc)| -tc * mathx::ln(pc.max(PROB_FLOOR)))
        .sum()
}

/// Cross entropy of `softmax(logits)` against a soft target.
pub fn cross_entropy_logits(logits: &[f64], target: &[f64]) -> Result<f64> {
    let p = softmax(logits)?;
    cross_entropy(&p, target)
}

/// Cross entropy of `softmax(logits)` against the one-hot of `label`.
pub fn cross_entropy_label(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Index(format!(
            "label {} out of range for {} classes",
            label,
            logits.len()
        )));
    }
    let p = softmax(logits)?;
    Ok(-mathx::ln(p.values()[label].max(PROB_FLOOR)))
}

/// Gradient of `cross_entropy(softmax(logits), target)` with respect to the
/// logits: `softmax(logits) - target` (targets must sum to one).
pub fn grad_ce_wrt_logits(logits: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if logits.len() != target.len() {
        return Err(Error::Shape(format!(
            "logits have length {}, target {}",
            logits.len(),
            target.len()
        )));
    }
    let p = softmax(logits)?;
    Ok(p.values()
        .iter()
        .zip(target)
        .map(|(&pc, &tc)| pc - tc)
        .collect())
}

/// Hinge loss `max(0, 1 - label * score)` for labels in `{-1, +1}`.
pub fn hinge_loss(score: f64, label: i32) -> Result<f64> {
    if label != 1 && label != -1 {
        return Err(Error::InvalidInput(format!(
            "hinge label must be +1 or -1, got {label}"
        )));
    }
    if !score.is_finite() {
        return Err(Error::InvalidInput("non-finite hinge score".into()));
    }
    Ok((1.0 - f64::from(label) * score).max(0.0))
}

/// Central-difference gradient oracle: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// Kept independent of every analytic gradient in the crate so the two can
/// be checked against each other.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidInput(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut shifted = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let original = shifted[i];
        shifted[i] = original + step;
        let plus = f(&shifted);
        shifted[i] = original - step;
        let minus = f(&shifted);
        shifted[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "objective non-finite near coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// One-hot vector for `label` over `classes` classes.
pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Sum of absolute values.
pub fn l1_norm(values: &[f64]) -> f64 {
    values.iter().map(|&v| mathx::abs(v)).sum()
}

/// Largest absolute value.
pub fn linf_norm(values: &[f64]) -> f64 {
    values.iter().map(|&v| mathx::abs(v)).fold(0.0, f64::max)
}

/// Euclidean norm.
pub fn l2_norm(values: &[f64]) -> f64 {
    mathx::sqrt(values.iter().map(|&v| v * v).sum())
}

/// Index of the largest entry, first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest entry, first one on ties.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}
