//! Seeded label-noise injection.
//!
//! Four schemes: `random` (uniform relabeling with probability p), `pair`
//! (cyclic next-class flip with probability p), and two deterministic
//! prefix schemes for binary tasks that flip the first ceil(p*N) samples in
//! stored order. Ground truth is retained by the caller via the returned
//! mask.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mathx;
use crate::{Error, Result};

/// Label corruption scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseScheme {
    /// Each label independently replaced by a uniform draw with
    /// probability p. The draw may return the original class unless
    /// `exclude_original` is set, so the effective flip rate is
    /// `p * (C-1) / C` by default.
    Random,
    /// With probability p, class c becomes (c+1) mod C; the class list is
    /// treated as cyclic so the last class wraps to class 0.
    Pair,
    /// Binary only: flips the labels of the first ceil(p*N) samples by
    /// stored index.
    SymmetricPrefix,
    /// Binary only: flips the first ceil(p*N_pos) positive (class 1)
    /// samples by stored index to negative.
    AsymmetricPrefix,
}

impl NoiseScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseScheme::Random => "random",
            NoiseScheme::Pair => "pair",
            NoiseScheme::SymmetricPrefix => "symmetric_prefix",
            NoiseScheme::AsymmetricPrefix => "asymmetric_prefix",
        }
    }
}

/// A fully specified, reproducible noise injection.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub scheme: NoiseScheme,
    pub rate: f64,
    pub seed: u64,
    /// For [`NoiseScheme::Random`]: draw the new label uniformly over the
    /// C-1 other classes instead of all C classes.
    pub exclude_original: bool,
}

impl NoiseSpec {
    pub fn new(scheme: NoiseScheme, rate: f64, seed: u64) -> Self {
        Self {
            scheme,
            rate,
            seed,
            exclude_original: false,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidConfig(format!(
                "noise rate {} outside [0, 1]",
                self.rate
            )));
        }
        match self.scheme {
            NoiseScheme::SymmetricPrefix | NoiseScheme::AsymmetricPrefix if classes != 2 => {
                Err(Error::SchemeMismatch(format!(
                    "{} noise requires exactly 2 classes, got {classes}",
                    self.scheme.as_str()
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Applies a noise scheme to labels, returning the noisy labels and a mask
/// of the samples whose label actually changed. Deterministic per seed.
pub fn inject_noise(
    labels: &[usize],
    classes: usize,
    spec: &NoiseSpec,
) -> Result<(Vec<usize>, Vec<bool>)> {
    spec.validate(classes)?;
    if classes == 0 {
        return Err(Error::InvalidInput("zero classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let n = labels.len();
    let mut noisy = labels.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    match spec.scheme {
        NoiseScheme::Random => {
            for (i, label) in noisy.iter_mut().enumerate() {
                let _ = i;
                if rng.random_range(0.0..1.0) < spec.rate {
                    *label = if spec.exclude_original {
                        let draw = rng.random_range(0..classes - 1);
                        if draw >= *label {
                            draw + 1
                        } else {
                            draw
                        }
                    } else {
                        rng.random_range(0..classes)
                    };
                }
            }
        }
        NoiseScheme::Pair => {
            for label in noisy.iter_mut() {
                if rng.random_range(0.0..1.0) < spec.rate {
                    *label = (*label + 1) % classes;
                }
            }
        }
        NoiseScheme::SymmetricPrefix => {
            let k = mathx::ceil(spec.rate * n as f64) as usize;
            for label in noisy.iter_mut().take(k) {
                *label = 1 - *label;
            }
        }
        NoiseScheme::AsymmetricPrefix => {
            let positives: Vec<usize> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == 1)
                .map(|(i, _)| i)
                .collect();
            let k = mathx::ceil(spec.rate * positives.len() as f64) as usize;
            for &i in positives.iter().take(k) {
                noisy[i] = 0;
            }
        }
    }

    let mask: Vec<bool> = noisy
        .iter()
        .zip(labels)
        .map(|(new, old)| new != old)
        .collect();
    Ok((noisy, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_changes_nothing() {
        let labels = vec![0, 1, 2, 3, 0, 1];
        let spec = NoiseSpec::new(NoiseScheme::Random, 0.0, 5);
        let (noisy, mask) = inject_noise(&labels, 4, &spec).unwrap();
        assert_eq!(noisy, labels);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn pair_noise_wraps_last_class() {
        // Rate 1 forces every flip; class 9 wraps to 0.
        let labels = vec![9, 0, 4];
        let spec = NoiseSpec::new(NoiseScheme::Pair, 1.0, 1);
        let (noisy, mask) = inject_noise(&labels, 10, &spec).unwrap();
        assert_eq!(noisy, vec![0, 1, 5]);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn random_noise_changed_fraction_matches_binomial_expectation() {
        let n = 10_000;
        let classes = 4;
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let spec = NoiseSpec::new(NoiseScheme::Random, 0.3, 99);
        let (_, mask) = inject_noise(&labels, classes, &spec).unwrap();
        let changed = mask.iter().filter(|&&m| m).count() as f64 / n as f64;
        let q = 0.3 * (classes as f64 - 1.0) / classes as f64;
        let sigma = (q * (1.0 - q) / n as f64).sqrt();
        assert!(
            (changed - q).abs() <= 3.0 * sigma,
            "changed {changed}, expected {q} +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn random_noise_exclude_original_always_changes() {
        let n = 5_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut spec = NoiseSpec::new(NoiseScheme::Random, 0.2, 7);
        spec.exclude_original = true;
        let (_, mask) = inject_noise(&labels, 3, &spec).unwrap();
        let changed = mask.iter().filter(|&&m| m).count() as f64 / n as f64;
        let sigma = (0.2f64 * 0.8 / n as f64).sqrt();
        assert!((changed - 0.2).abs() <= 3.0 * sigma, "changed {changed}");
    }

    #[test]
    fn symmetric_prefix_flips_exactly_the_prefix() {
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let spec = NoiseSpec::new(NoiseScheme::SymmetricPrefix, 0.25, 0);
        let (noisy, mask) = inject_noise(&labels, 2, &spec).unwrap();
        // ceil(0.25 * 10) = 3 flips.
        assert_eq!(noisy[..3], [1, 0, 1]);
        assert_eq!(noisy[3..], labels[3..]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3);
    }

    #[test]
    fn asymmetric_prefix_targets_positive_samples_only() {
        let labels = vec![1, 0, 1, 0, 1, 1];
        let spec = NoiseSpec::new(NoiseScheme::AsymmetricPrefix, 0.5, 0);
        let (noisy, mask) = inject_noise(&labels, 2, &spec).unwrap();
        // 4 positives -> ceil(0.5 * 4) = 2 flipped to negative, in order.
        assert_eq!(noisy, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(mask, vec![true, false, true, false, false, false]);
    }

    #[test]
    fn prefix_schemes_reject_multiclass() {
        let labels = vec![0, 1, 2];
        let spec = NoiseSpec::new(NoiseScheme::SymmetricPrefix, 0.1, 0);
        assert!(matches!(
            inject_noise(&labels, 3, &spec),
            Err(Error::SchemeMismatch(_))
        ));
    }

    #[test]
    fn determinism_and_mask_consistency() {
        let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
        let spec = NoiseSpec::new(NoiseScheme::Random, 0.4, 123);
        let (a, mask_a) = inject_noise(&labels, 5, &spec).unwrap();
        let (b, mask_b) = inject_noise(&labels, 5, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(mask_a, mask_b);
        for i in 0..labels.len() {
            assert_eq!(mask_a[i], a[i] != labels[i]);
        }
    }
}
