//! Compensated k-means: alternating minimization of an outlier-aware
//! objective where each point carries a feature-compensation vector `o_i`
//! shrunk by a block soft threshold.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{self, DenseMatrix};
use crate::{Error, Result};

/// Output of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    /// Cluster centers, K x d.
    pub centers: DenseMatrix,
    /// Hard assignment per point.
    pub assignments: Vec<usize>,
    /// Outlier compensation vectors o_i, N x d.
    pub outliers: DenseMatrix,
    /// Objective value after each iteration; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizer of `|o - r|^2 + lambda * |o|_2`: the block soft threshold
/// `o = max(0, 1 - lambda / (2 |r|)) * r`, zero once `|r| <= lambda / 2`.
pub fn shrink_outlier(residual: &[f64], lambda: f64) -> Vec<f64> {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    let norm = numerics::l2_norm(residual);
    if norm <= lambda / 2.0 {
        return vec![0.0; residual.len()];
    }
    let scale = 1.0 - lambda / (2.0 * norm);
    residual.iter().map(|&r| scale * r).collect()
}

/// Compensated k-means.
///
/// Alternates (a) assignment of each compensated point `x_i + o_i` to its
/// nearest center, (b) center update as the mean of assigned compensated
/// points, and (c) the shrink update of each `o_i` toward `m_{c(i)} - x_i`.
/// Each block is an exact minimizer, so the objective
/// `sum_i |x_i + o_i - m_{c(i)}|^2 + lambda |o_i|_2` never increases.
/// Stops when assignments reach a fixpoint or after `max_iters`. An
/// emptied cluster is re-seeded to the point with the largest current
/// residual. As `lambda -> inf` every `o_i` stays zero and the run is
/// vanilla k-means.
pub fn robust_kmeans(
    points: &DenseMatrix,
    k: usize,
    lambda: f64,
    max_iters: usize,
    seed: u64,
) -> Result<ClusteringResult> {
    let n = points.rows();
    let d = points.cols();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} must be in [1, {n}]")));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig("lambda must be non-negative".into()));
    }
    if max_iters < 1 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    if !points.is_finite() {
        return Err(Error::InvalidInput("non-finite point".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(points, k, &mut rng);
    let mut outliers = DenseMatrix::zeros(n, d);
    let mut assignments = vec![0usize; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;

        // (a) assign compensated points to nearest centers.
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist_compensated(points, &outliers, i, centers.row(c));
                if dist < best_dist {
                    best_dist = dist;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        // (b) centers are means of assigned compensated points.
        let mut counts = vec![0usize; k];
        let mut sums = DenseMatrix::zeros(k, d);
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for j in 0..d {
                sums.set(c, j, sums.get(c, j) + points.get(i, j) + outliers.get(i, j));
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed to the point with the largest current residual.
                let worst = (0..n)
                    .max_by(|&a, &b| {
                        let ra =
                            sq_dist_compensated(points, &outliers, a, centers.row(assignments[a]));
                        let rb =
                            sq_dist_compensated(points, &outliers, b, centers.row(assignments[b]));
                        ra.partial_cmp(&rb).expect("finite distances")
                    })
                    .expect("non-empty data");
                for j in 0..d {
                    centers.set(c, j, points.get(worst, j) + outliers.get(worst, j));
                }
                assignments[worst] = c;
                changed = true;
            } else {
                for j in 0..d {
                    centers.set(c, j, sums.get(c, j) / counts[c] as f64);
                }
            }
        }

        // (c) shrink each outlier vector toward its center residual.
        for i in 0..n {
            let center = centers.row(assignments[i]);
            let residual: Vec<f64> = (0..d).map(|j| center[j] - points.get(i, j)).collect();
            let o = shrink_outlier(&residual, lambda);
            outliers.row_mut(i).copy_from_slice(&o);
        }

        trace.push(objective(points, &outliers, &centers, &assignments, lambda));

        // Stable assignments alone are not a fixpoint here: the center and
        // shrink updates keep moving compensated points. Stop once the
        // assignments hold still and the objective has flattened.
        let flat = trace.len() >= 2 && {
            let prev = trace[trace.len() - 2];
            let last = trace[trace.len() - 1];
            prev - last <= 1e-10 * (1.0 + prev.abs())
        };
        if !changed && flat {
            converged = true;
            break;
        }
    }

    Ok(ClusteringResult {
        centers,
        assignments,
        outliers,
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// Vanilla k-means: the same alternation with outlier vectors pinned to
/// zero (an infinite shrink threshold).
pub fn kmeans(
    points: &DenseMatrix,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<ClusteringResult> {
    robust_kmeans(points, k, f64::INFINITY, max_iters, seed)
}

/// Runs several seeded attempts and keeps the one with the lowest final
/// objective. Distance-weighted seeding chases gross outliers, so a single
/// init can strand a center on them; restarts let each objective pick its
/// preferred solution. Restart `r` uses `seed + r`.
pub fn robust_kmeans_best_of(
    points: &DenseMatrix,
    k: usize,
    lambda: f64,
    max_iters: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusteringResult> {
    let mut best: Option<ClusteringResult> = None;
    for r in 0..restarts.max(1) as u64 {
        let candidate = robust_kmeans(points, k, lambda, max_iters, seed.wrapping_add(r))?;
        let objective = *candidate
            .objective_trace
            .last()
            .expect("at least one iteration");
        let better = match &best {
            None => true,
            Some(b) => objective < *b.objective_trace.last().expect("non-empty trace"),
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn sq_dist_compensated(
    points: &DenseMatrix,
    outliers: &DenseMatrix,
    i: usize,
    center: &[f64],
) -> f64 {
    let mut s = 0.0;
    for (j, &c) in center.iter().enumerate() {
        let diff = points.get(i, j) + outliers.get(i, j) - c;
        s += diff * diff;
    }
    s
}

fn objective(
    points: &DenseMatrix,
    outliers: &DenseMatrix,
    centers: &DenseMatrix,
    assignments: &[usize],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, &c) in assignments.iter().enumerate() {
        total += sq_dist_compensated(points, outliers, i, centers.row(c));
        if lambda.is_finite() {
            total += lambda * numerics::l2_norm(outliers.row(i));
        }
    }
    total
}

/// Distance-squared-weighted seeding over a screened candidate pool.
///
/// Gross outliers carry most of the distance-squared mass and would soak
/// up the seeds, so candidates farther from the coordinate-wise median
/// than five times the median point-to-median distance stay out of the
/// pool (never out of the clustering itself). The screening is the same
/// for every lambda, so the vanilla reduction is unaffected.
fn kmeans_plus_plus(points: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let d = points.cols();
    let pool = seeding_pool(points, k);
    let n = pool.len();
    let mut centers = DenseMatrix::zeros(k, d);
    let first = pool[rng.random_range(0..n)];
    centers.row_mut(0).copy_from_slice(points.row(first));

    let mut dist2 = vec![f64::INFINITY; n];
    for picked in 1..k {
        for (slot, &i) in pool.iter().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                let diff = points.get(i, j) - centers.get(picked - 1, j);
                s += diff * diff;
            }
            dist2[slot] = dist2[slot].min(s);
        }
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            pool[rng.random_range(0..n)]
        } else {
            let mut draw = rng.random_range(0.0..total);
            let mut chosen = pool[n - 1];
            for (slot, &w) in dist2.iter().enumerate() {
                if draw < w {
                    chosen = pool[slot];
                    break;
                }
                draw -= w;
            }
            chosen
        };
        centers.row_mut(picked).copy_from_slice(points.row(next));
    }
    centers
}

/// Candidate indices for seeding: points within five median distances of
/// the coordinate-wise median. Falls back to all points when the screen
/// would leave fewer than `k` candidates.
fn seeding_pool(points: &DenseMatrix, k: usize) -> Vec<usize> {
    let n = points.rows();
    let d = points.cols();
    let mut median = vec![0.0; d];
    let mut column = vec![0.0; n];
    for j in 0..d {
        for i in 0..n {
            column[i] = points.get(i, j);
        }
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
        median[j] = column[n / 2];
    }
    let distances: Vec<f64> = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..d {
                let diff = points.get(i, j) - median[j];
                s += diff * diff;
            }
            crate::mathx::sqrt(s)
        })
        .collect();
    let mut sorted = distances.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let cutoff = 5.0 * sorted[n / 2];
    let pool: Vec<usize> = (0..n).filter(|&i| distances[i] <= cutoff).collect();
    if pool.len() < k {
        (0..n).collect()
    } else {
        pool
    }
}
