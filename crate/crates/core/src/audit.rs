//! Audit utilities over a trained compensation state: samples with large
//! logit-compensation norms are the ones the loss had to fight, which makes
//! the l1-norm ranking a label-noise detector.

use alloc::vec;
use alloc::vec::Vec;

use crate::compensation::CompensationState;
use crate::mathx;
use crate::{Error, Result};

/// One ranked sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub sample_id: usize,
    pub l1_norm: f64,
}

/// Top-`k` samples among `indices` by descending l1 norm of their logit
/// compensation, ties broken by lower id. `k` larger than the population is
/// clamped.
pub fn audit_rank(
    state: &CompensationState,
    indices: &[usize],
    k: usize,
) -> Result<Vec<AuditEntry>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= state.samples) {
        return Err(Error::Index(alloc::format!(
            "sample {bad} out of range for {} state rows",
            state.samples
        )));
    }
    let mut entries: Vec<AuditEntry> = indices
        .iter()
        .map(|&i| AuditEntry {
            sample_id: i,
            l1_norm: state.logit_l1_norm(i),
        })
        .collect();
    entries.sort_by(|a, b| {
        b.l1_norm
            .partial_cmp(&a.l1_norm)
            .expect("finite norms")
            .then(a.sample_id.cmp(&b.sample_id))
    });
    entries.truncate(k.min(indices.len()));
    Ok(entries)
}

/// Equal-width histogram of l1 norms over `[0, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Half-open bin edges; `len() == bins + 1`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Histogram of the logit-compensation l1 norms of the given rows.
pub fn norm_histogram(
    state: &CompensationState,
    indices: &[usize],
    bins: usize,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= state.samples) {
        return Err(Error::Index(alloc::format!(
            "sample {bad} out of range for {} state rows",
            state.samples
        )));
    }
    let norms: Vec<f64> = indices.iter().map(|&i| state.logit_l1_norm(i)).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    let mut counts = vec![0usize; bins];
    for &v in &norms {
        let bin = if max == 0.0 {
            0
        } else {
            (mathx::floor(v / max * bins as f64) as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    let width = if max == 0.0 { 0.0 } else { max / bins as f64 };
    let edges = (0..=bins).map(|b| b as f64 * width).collect();
    Ok(Histogram { edges, counts })
}

/// Nearest-rank percentile (`q` in [0, 100]) of a non-empty sample.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of no values".into()));
    }
    assert!((0.0..=100.0).contains(&q), "percentile outside [0, 100]");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = mathx::ceil(q / 100.0 * sorted.len() as f64) as usize;
    Ok(sorted[rank.max(1) - 1])
}
