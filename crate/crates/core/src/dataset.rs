//! In-memory datasets and the synthetic blob generator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::mathx;
use crate::numerics::DenseMatrix;
use crate::{Error, Result};

/// Split tag for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A labeled dataset with optional ground truth for audit scoring.
///
/// Row order is meaningful: prefix noise schemes and sample ids refer to the
/// stored order, before any training-time shuffling.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    /// Labels before noise injection, when known.
    pub true_labels: Option<Vec<usize>>,
    /// Marks samples whose label was actually changed by noise.
    pub noise_mask: Option<Vec<bool>>,
    pub splits: Vec<Split>,
    pub classes: usize,
}

impl Dataset {
    /// Wraps features and labels; every sample starts in the train split.
    pub fn new(features: DenseMatrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.rows() == 0 {
            return Err(Error::InvalidInput("empty dataset".into()));
        }
        if !features.is_finite() {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let n = labels.len();
        Ok(Self {
            features,
            labels,
            true_labels: None,
            noise_mask: None,
            splits: vec![Split::Train; n],
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Indices carrying the given split tag, in stored order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Gathers feature rows and labels for the given indices.
    pub fn gather(&self, indices: &[usize]) -> Result<(DenseMatrix, Vec<usize>)> {
        let feats = self.features.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((feats, labels))
    }

    /// Class proportions over the train split's observed labels.
    pub fn train_class_proportions(&self) -> Vec<f64> {
        let idx = self.indices(Split::Train);
        let mut counts = vec![0usize; self.classes];
        for &i in &idx {
            counts[self.labels[i]] += 1;
        }
        let total = idx.len().max(1) as f64;
        counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// Seeded random split by fractions (train, val, test). Fractions must
    /// be non-negative and sum to 1 within 1e-9.
    pub fn assign_splits(&mut self, fractions: (f64, f64, f64), seed: u64) -> Result<()> {
        let (ft, fv, fe) = fractions;
        if ft < 0.0 || fv < 0.0 || fe < 0.0 || mathx::abs(ft + fv + fe - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions ({ft}, {fv}, {fe}) must be non-negative and sum to 1"
            )));
        }
        let n = self.len();
        let n_train = mathx::floor(ft * n as f64) as usize;
        let n_val = mathx::floor(fv * n as f64) as usize;
        self.assign_split_counts(n_train, n_val, seed)
    }

    /// Seeded random split by explicit train/val counts; the remainder is
    /// the test split.
    pub fn assign_split_counts(&mut self, n_train: usize, n_val: usize, seed: u64) -> Result<()> {
        let n = self.len();
        if n_train + n_val > n {
            return Err(Error::InvalidConfig(format!(
                "split counts {n_train}+{n_val} exceed {n} samples"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        for (rank, &i) in order.iter().enumerate() {
            self.splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        Ok(())
    }
}

/// Seeded Gaussian blobs, one blob per class, with optional gross outliers.
///
/// Centers are drawn inside `[-center_spread, center_spread]^d`, rejecting
/// layouts with close pairs. Outliers are appended after the blob rows at
/// distance `10 * center_spread` from the origin and labeled uniformly at
/// random.
pub fn make_blobs(
    n_per_class: usize,
    classes: usize,
    dim: usize,
    center_spread: f64,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    let counts = vec![n_per_class; classes];
    make_blobs_with_counts(
        &counts,
        dim,
        center_spread,
        noise_sigma,
        outlier_fraction,
        seed,
    )
}

/// [`make_blobs`] with explicit per-class sample counts (imbalanced blobs).
pub fn make_blobs_with_counts(
    counts: &[usize],
    dim: usize,
    center_spread: f64,
    noise_sigma: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    let classes = counts.len();
    if classes == 0 || dim == 0 {
        return Err(Error::InvalidConfig(
            "blob generator needs at least one class and one dimension".into(),
        ));
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::InvalidConfig("empty class in blob counts".into()));
    }
    if center_spread <= 0.0 || noise_sigma < 0.0 {
        return Err(Error::InvalidConfig(
            "center_spread must be positive and noise_sigma non-negative".into(),
        ));
    }
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(Error::InvalidConfig(format!(
            "outlier_fraction {outlier_fraction} outside [0, 1)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = sample_centers(&mut rng, classes, dim, center_spread);

    let n_blob: usize = counts.iter().sum();
    let n_outliers = mathx::floor(outlier_fraction * n_blob as f64) as usize;
    let mut rows: Vec<f64> = Vec::with_capacity((n_blob + n_outliers) * dim);
    let mut labels = Vec::with_capacity(n_blob + n_outliers);

    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            for d in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                rows.push(centers[class][d] + noise_sigma * z);
            }
            labels.push(class);
        }
    }
    for _ in 0..n_outliers {
        let direction = random_unit(&mut rng, dim);
        for d in 0..dim {
            rows.push(10.0 * center_spread * direction[d]);
        }
        labels.push(rng.random_range(0..classes));
    }

    let features = DenseMatrix::from_vec(n_blob + n_outliers, dim, rows)?;
    Dataset::new(features, labels, classes)
}

/// Draws class centers, retrying to keep them at least one spread apart.
fn sample_centers(
    rng: &mut ChaCha8Rng,
    classes: usize,
    dim: usize,
    center_spread: f64,
) -> Vec<Vec<f64>> {
    let min_dist = center_spread;
    let mut best: Vec<Vec<f64>> = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..200 {
        let candidate: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(-center_spread..center_spread))
                    .collect()
            })
            .collect();
        let mut closest = f64::INFINITY;
        for a in 0..classes {
            for b in (a + 1)..classes {
                let dist: f64 = candidate[a]
                    .iter()
                    .zip(&candidate[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>();
                closest = closest.min(mathx::sqrt(dist));
            }
        }
        if closest > best_score {
            best_score = closest;
            best = candidate;
        }
        if best_score >= min_dist {
            break;
        }
    }
    best
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = mathx::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
