//! Closed-form solutions checked against independent numeric oracles:
//! grid search for the SVM slack, dense 1-D minimization for the outlier
//! shrink, exhaustive search for adversarial label smoothing, and an
//! active-set quadratic solver for the label-delta projection.

use complearn_core::baselines::{adversarial_label_smoothing_delta, svm_slack_solution};
use complearn_core::clustering::shrink_outlier;
use complearn_core::compensation::project_label_delta;
use complearn_core::numerics::{cross_entropy_logits, l2_norm, one_hot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn svm_slack_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    for _ in 0..1000 {
        let l = rng.random_range(0.0..3.0);
        let lambda = rng.random_range(0.05..2.5);
        let (xi, value) = svm_slack_solution(l, lambda);

        // 1e-4-resolution grid over xi in [0, 2l].
        let steps = 20_000usize;
        let mut best_value = f64::INFINITY;
        for s in 0..=steps {
            let cand = 2.0 * l * s as f64 / steps as f64;
            let obj = (l - cand).max(0.0) + lambda * cand;
            if obj < best_value {
                best_value = obj;
            }
        }
        assert!(
            (value - best_value).abs() <= 1e-4 * (1.0 + best_value.abs()),
            "l={l}, lambda={lambda}: closed form {value} vs grid {best_value}"
        );
        // The reported minimizer must achieve the reported value.
        let at_xi = (l - xi).max(0.0) + lambda * xi;
        assert!((at_xi - value).abs() < 1e-12);
    }
}

#[test]
fn shrink_outlier_matches_numeric_minimization() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..1000 {
        let dim = rng.random_range(1..5);
        let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lambda = rng.random_range(0.0..4.0);
        let o = shrink_outlier(&r, lambda);

        let objective = |scale: f64| -> f64 {
            // o = scale * r along the residual direction.
            let dist2: f64 = r
                .iter()
                .map(|&ri| (scale * ri - ri) * (scale * ri - ri))
                .sum();
            dist2 + lambda * scale.abs() * l2_norm(&r)
        };
        // Dense 1-D scan along the residual direction.
        let steps = 4000usize;
        let mut best_scale = 0.0;
        let mut best_obj = f64::INFINITY;
        for s in 0..=steps {
            let scale = -0.5 + 2.0 * s as f64 / steps as f64;
            let obj = objective(scale);
            if obj < best_obj {
                best_obj = obj;
                best_scale = scale;
            }
        }
        for (oc, &rc) in o.iter().zip(&r) {
            assert!(
                (oc - best_scale * rc).abs() < 2e-3 * (1.0 + rc.abs()),
                "lambda={lambda}: shrink {oc} vs scan {}",
                best_scale * rc
            );
        }

        // Perpendicular directions only increase the objective.
        if dim >= 2 {
            let shrink_obj: f64 = {
                let dist2: f64 = o.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
                dist2 + lambda * l2_norm(&o)
            };
            let mut perp = vec![0.0; dim];
            perp[0] = -r[1];
            perp[1] = r[0];
            for eps in [0.01, -0.01] {
                let cand: Vec<f64> = o.iter().zip(&perp).map(|(a, p)| a + eps * p).collect();
                let dist2: f64 = cand.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
                let obj = dist2 + lambda * l2_norm(&cand);
                assert!(obj >= shrink_obj - 1e-9);
            }
        }
    }
}

#[test]
fn adversarial_label_smoothing_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(203);
    for _ in 0..1000 {
        let c = rng.random_range(2..7);
        let u: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = one_hot(rng.random_range(0..c), c);
        let lambda = rng.random_range(0.0..1.0);

        let delta = adversarial_label_smoothing_delta(&u, &y, lambda);
        let target: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let achieved = cross_entropy_logits(&u, &target).unwrap();

        let mut best = f64::NEG_INFINITY;
        for candidate in 0..c {
            let t: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(k, &yk)| yk + lambda * (if k == candidate { 1.0 } else { 0.0 } - yk))
                .collect();
            best = best.max(cross_entropy_logits(&u, &t).unwrap());
        }
        assert!(
            (achieved - best).abs() < 1e-12,
            "analytic {achieved} vs exhaustive {best}"
        );
    }
}

/// Exact equality-constrained quadratic solver over active sets: minimizes
/// |delta - d0|^2 subject to sum(delta) = 0 and base + delta >= 0, by
/// enumerating which non-negativity constraints bind.
fn projection_qp_oracle(d0: &[f64], base: &[f64]) -> Vec<f64> {
    let n = d0.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0..(1u32 << n) {
        // Bound coordinates are pinned at -base; free ones share a uniform
        // shift so the zero-sum constraint holds.
        let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
        if free.is_empty() {
            continue;
        }
        let pinned_sum: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| -base[i])
            .sum();
        let free_target: f64 = -pinned_sum;
        let free_d0_sum: f64 = free.iter().map(|&i| d0[i]).sum();
        let shift = (free_d0_sum - free_target) / free.len() as f64;

        let mut candidate = vec![0.0; n];
        let mut feasible = true;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                candidate[i] = -base[i];
            } else {
                candidate[i] = d0[i] - shift;
                if base[i] + candidate[i] < -1e-12 {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let cost: f64 = candidate
            .iter()
            .zip(d0)
            .map(|(c, d)| (c - d) * (c - d))
            .sum();
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, candidate));
        }
    }
    best.expect("the feasible set is non-empty").1
}

#[test]
fn label_delta_projection_matches_active_set_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(204);
    for _ in 0..200 {
        let c = rng.random_range(2..6);
        let base = {
            let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let delta: Vec<f64> = (0..c).map(|_| rng.random_range(-1.5..1.5)).collect();

        let fast = project_label_delta(&delta, &base);
        let exact = projection_qp_oracle(&delta, &base);
        for (f, e) in fast.iter().zip(&exact) {
            assert!((f - e).abs() < 1e-6, "projection {f} vs oracle {e}");
        }
    }
}
