//! Compensation-based robust learning.
//!
//! A compensation term is an additive, often trainable perturbation applied
//! to a feature vector, a logit vector, a label, or a per-sample loss in
//! order to modulate that sample's influence on training. This crate
//! implements the full taxonomy (target x direction x granularity x
//! inference manner) as composable loss plugins over a small differentiable
//! classifier, together with:
//!
//! - `LogComp`: per-sample trainable logit compensation with l1
//!   regularization, optimized by proximal soft-thresholding;
//! - `MixComp`: positive logit compensation for high-loss samples and
//!   adversarial feature perturbation for low-loss samples;
//! - classical methods re-expressed as compensation (Bootstrapping, label
//!   smoothing and its adversarial variant, logit adjustment and its meta
//!   variant, knowledge distillation, ISDA's logit term, SVM slack,
//!   self-paced learning, mixBootstrapping);
//! - compensated k-means with block-soft-thresholded outlier vectors;
//! - seeded label-noise injection and audit utilities.
//!
//! The crate is `no_std`-compatible (requires `alloc`); IO, file formats,
//! and the CLI live in the companion `complearn-harness` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audit;
pub mod baselines;
pub mod clustering;
pub mod compensation;
pub mod dataset;
pub mod error;
mod mathx;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod plugins;

pub use error::Error;

/// Result alias used across the crate.
pub type Result<T> = core::result::Result<T, Error>;
