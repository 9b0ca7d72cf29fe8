//! Classical and related methods re-expressed as compensation:
//! Bootstrapping, label smoothing (plain and adversarial), logit adjustment
//! and its meta variant, knowledge distillation, the ISDA logit term, SVM
//! slack, self-paced learning, and mixBootstrapping.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, Split};
use crate::mathx;
use crate::model::{train, BatchCtx, BatchPlan, LossPlugin, Model, TrainConfig};
use crate::numerics::{self, DenseMatrix, ProbVector};
use crate::{Error, Result};

/// Class proportions pi_c; strictly positive, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPriors {
    pi: Vec<f64>,
}

impl CategoryPriors {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidPriors("no classes".into()));
        }
        if pi.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return Err(Error::InvalidPriors(
                "every prior must be strictly positive".into(),
            ));
        }
        let sum: f64 = pi.iter().sum();
        if mathx::abs(sum - 1.0) > 1e-9 {
            return Err(Error::InvalidPriors(format!(
                "priors sum to {sum}, expected 1"
            )));
        }
        Ok(Self { pi })
    }

    /// Empirical proportions of the given labels.
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; classes];
        for &l in labels {
            if l >= classes {
                return Err(Error::InvalidInput(format!("label {l} out of range")));
            }
            counts[l] += 1;
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidPriors(
                "a class has no samples; priors would be zero".into(),
            ));
        }
        let total = labels.len() as f64;
        Self::new(counts.into_iter().map(|c| c as f64 / total).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.pi
    }

    pub fn classes(&self) -> usize {
        self.pi.len()
    }
}

/// Bootstrapping variants: soft mixes in the previous prediction itself,
/// hard mixes in its one-hot argmax (ties to the lowest class index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMode {
    Soft,
    Hard,
}

/// The Bootstrapping-compensated target `y + lambda * (y' - y)`.
pub fn bootstrapping_target(
    y: &[f64],
    y_prev: &[f64],
    lambda: f64,
    mode: BootstrapMode,
) -> Vec<f64> {
    debug_assert_eq!(y.len(), y_prev.len());
    match mode {
        BootstrapMode::Soft => y
            .iter()
            .zip(y_prev)
            .map(|(&yc, &pc)| yc + lambda * (pc - yc))
            .collect(),
        BootstrapMode::Hard => {
            let hard = numerics::argmax(y_prev);
            y.iter()
                .enumerate()
                .map(|(c, &yc)| yc + lambda * (if c == hard { 1.0 } else { 0.0 } - yc))
                .collect()
        }
    }
}

/// Cross entropy against the Bootstrapping-compensated target, with `y'`
/// the previous-epoch prediction. The compensated target is a convex
/// combination of two distributions, so the label constraint holds by
/// construction.
pub fn bootstrapping_loss(
    p: &ProbVector,
    y: &[f64],
    y_prev: &ProbVector,
    lambda: f64,
    mode: BootstrapMode,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!(
            "bootstrapping lambda {lambda} outside [0, 1]"
        )));
    }
    let target = bootstrapping_target(y, y_prev.values(), lambda, mode);
    numerics::cross_entropy(p, &target)
}

/// Label-smoothing compensation `lambda * (1/C - y)`; sums to zero and
/// keeps `y + delta` non-negative for `lambda` in [0, 1].
pub fn label_smoothing_delta(y: &[f64], lambda: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&lambda), "lambda outside [0, 1]");
    let c = y.len() as f64;
    y.iter().map(|&yc| lambda * (1.0 / c - yc)).collect()
}

/// Adversarially smoothed label compensation `lambda * (p* - y)` where
/// `p*` is the one-hot at the class of minimum softmax value, i.e. the
/// minimum logit — the analytic maximizer of the smoothed loss over
/// one-hot candidates. Ties break to the lowest class index.
pub fn adversarial_label_smoothing_delta(logits: &[f64], y: &[f64], lambda: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&lambda), "lambda outside [0, 1]");
    assert_eq!(logits.len(), y.len(), "logits/label length mismatch");
    let worst = numerics::argmin(logits);
    y.iter()
        .enumerate()
        .map(|(c, &yc)| lambda * (if c == worst { 1.0 } else { 0.0 } - yc))
        .collect()
}

/// Corpus-level logit compensation `g_c = tau * ln(pi_c)`.
pub fn logit_adjustment_offsets(priors: &CategoryPriors, tau_la: f64) -> Result<Vec<f64>> {
    if tau_la < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tau must be non-negative, got {tau_la}"
        )));
    }
    Ok(priors
        .values()
        .iter()
        .map(|&p| tau_la * mathx::ln(p))
        .collect())
}

/// Cross entropy over `softmax(u + g)` with `g` from
/// [`logit_adjustment_offsets`]. Uniform priors shift every logit equally,
/// which leaves the loss unchanged.
pub fn logit_adjustment_loss(
    logits: &[f64],
    label: usize,
    priors: &CategoryPriors,
    tau_la: f64,
) -> Result<f64> {
    if logits.len() != priors.classes() {
        return Err(Error::Shape(format!(
            "{} logits but {} priors",
            logits.len(),
            priors.classes()
        )));
    }
    let g = logit_adjustment_offsets(priors, tau_la)?;
    let adjusted: Vec<f64> = logits.iter().zip(&g).map(|(u, gc)| u + gc).collect();
    numerics::cross_entropy_label(&adjusted, label)
}

/// Gradient of [`logit_adjustment_loss`] with respect to the logits:
/// `softmax(u + g) - one_hot(y)`.
pub fn logit_adjustment_grad_wrt_logits(
    logits: &[f64],
    label: usize,
    priors: &CategoryPriors,
    tau_la: f64,
) -> Result<Vec<f64>> {
    let g = logit_adjustment_offsets(priors, tau_la)?;
    let adjusted: Vec<f64> = logits.iter().zip(&g).map(|(u, gc)| u + gc).collect();
    numerics::grad_ce_wrt_logits(&adjusted, &numerics::one_hot(label, logits.len()))
}

/// Per-category mean relative loss increment under logit adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryIncrement {
    pub class: usize,
    /// Mean of `(l' - l) / l` over the class's samples with `l > 0`.
    pub mean_relative_increment: f64,
    /// Samples contributing to the mean.
    pub samples: usize,
    /// Samples skipped because their plain loss was zero.
    pub excluded: usize,
}

/// Measures, per category, how much logit adjustment moves each sample's
/// loss: negative for frequent (head) classes, positive for rare (tail)
/// ones.
pub fn category_loss_increments(
    model: &Model,
    data: &Dataset,
    priors: &CategoryPriors,
    tau_la: f64,
) -> Result<Vec<CategoryIncrement>> {
    let classes = data.classes;
    let mut present = vec![false; classes];
    for &l in &data.labels {
        present[l] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidSplit(format!(
            "class {missing} has no samples in the data"
        )));
    }
    let g = logit_adjustment_offsets(priors, tau_la)?;
    let logits = model.forward(&data.features)?;

    let mut sums = vec![0.0; classes];
    let mut counts = vec![0usize; classes];
    let mut excluded = vec![0usize; classes];
    for i in 0..data.len() {
        let y = data.labels[i];
        let plain = numerics::cross_entropy_label(logits.row(i), y)?;
        if plain == 0.0 {
            excluded[y] += 1;
            continue;
        }
        let adjusted: Vec<f64> = logits.row(i).iter().zip(&g).map(|(u, gc)| u + gc).collect();
        let shifted = numerics::cross_entropy_label(&adjusted, y)?;
        sums[y] += (shifted - plain) / plain;
        counts[y] += 1;
    }
    Ok((0..classes)
        .map(|c| CategoryIncrement {
            class: c,
            mean_relative_increment: if counts[c] > 0 {
                sums[c] / counts[c] as f64
            } else {
                0.0
            },
            samples: counts[c],
            excluded: excluded[c],
        })
        .collect())
}

/// Result of the alternating meta optimization of per-class adjustment
/// strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaLogitAdjustment {
    pub tau: Vec<f64>,
    /// Validation loss after each meta step (index 0 is the starting
    /// point); non-increasing by construction of the accepted steps.
    pub val_losses: Vec<f64>,
}

/// Per-class logit adjustment tuned on a clean validation split by
/// first-order alternation.
///
/// Each meta step (1) trains the model from the template for
/// `inner_epochs` with the current per-class tau fixed, (2) estimates the
/// outer gradient of the validation loss by differentiating through one
/// full-batch gradient step only, and (3) takes a backtracking step on tau,
/// rejecting candidates that raise the validation loss. Training always
/// restarts from the template, so the validation loss is a deterministic
/// function of tau and accepted steps never increase it.
pub fn meta_logit_adjust(
    data: &Dataset,
    model_template: &Model,
    init_tau: &[f64],
    meta_steps: usize,
    inner_epochs: usize,
    cfg: &TrainConfig,
) -> Result<MetaLogitAdjustment> {
    let classes = data.classes;
    if init_tau.len() != classes {
        return Err(Error::InvalidConfig(format!(
            "init_tau has {} entries for {} classes",
            init_tau.len(),
            classes
        )));
    }
    let val_idx = data.indices(Split::Val);
    if val_idx.is_empty() {
        return Err(Error::InvalidSplit(
            "meta adjustment needs a validation split".into(),
        ));
    }
    let mut present = vec![false; classes];
    for &i in &val_idx {
        present[data.labels[i]] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::InvalidSplit(format!(
            "class {missing} missing from the validation split"
        )));
    }
    let train_idx = data.indices(Split::Train);
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let priors = CategoryPriors::from_labels(&train_labels, classes)?;
    let log_pi: Vec<f64> = priors.values().iter().map(|&p| mathx::ln(p)).collect();

    let mut tau = init_tau.to_vec();
    if meta_steps == 0 {
        return Ok(MetaLogitAdjustment {
            tau,
            val_losses: Vec::new(),
        });
    }

    let inner_cfg = TrainConfig {
        epochs: inner_epochs.max(1),
        early_stop: false,
        ..cfg.clone()
    };
    let (val_features, val_labels) = data.gather(&val_idx)?;
    let (train_features, train_batch_labels) = data.gather(&train_idx)?;

    let inner_train = |tau: &[f64]| -> Result<(Model, f64)> {
        let mut plugin = PerClassAdjustPlugin::new(tau, &log_pi);
        let outcome = train(model_template.clone(), data, &inner_cfg, &mut plugin)?;
        let loss = mean_ce(&outcome.model, &val_features, &val_labels)?;
        Ok((outcome.model, loss))
    };

    let one_step_val = |base: &Model, tau: &[f64]| -> Result<f64> {
        let stepped = adjusted_full_batch_step(
            base,
            &train_features,
            &train_batch_labels,
            tau,
            &log_pi,
            inner_cfg.learning_rate,
        )?;
        mean_ce(&stepped, &val_features, &val_labels)
    };

    let (mut current_model, mut current_val) = inner_train(&tau)?;
    let mut val_losses = vec![current_val];

    const FD_STEP: f64 = 1e-3;
    const META_LR: f64 = 0.5;

    for _ in 0..meta_steps {
        // Outer gradient through the last inner step only.
        let mut grad = vec![0.0; classes];
        for c in 0..classes {
            let mut plus = tau.clone();
            plus[c] += FD_STEP;
            let mut minus = tau.clone();
            minus[c] -= FD_STEP;
            grad[c] = (one_step_val(&current_model, &plus)?
                - one_step_val(&current_model, &minus)?)
                / (2.0 * FD_STEP);
        }

        // Backtracking on the true objective; reject worsening steps.
        let mut accepted = false;
        let mut step = META_LR;
        for _ in 0..8 {
            let candidate: Vec<f64> = tau.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (model, val) = inner_train(&candidate)?;
            if val <= current_val + 1e-9 {
                tau = candidate;
                current_model = model;
                current_val = val;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            // Keep tau; the deterministic retrain reproduces the same loss.
        }
        val_losses.push(current_val);
    }

    Ok(MetaLogitAdjustment { tau, val_losses })
}

/// Plugin applying the per-class adjustment `u + tau_{y_i} * log(pi)`
/// used by the meta variant.
pub struct PerClassAdjustPlugin {
    /// Row y holds `tau_y * log(pi)`.
    offsets: DenseMatrix,
}

impl PerClassAdjustPlugin {
    pub fn new(tau: &[f64], log_pi: &[f64]) -> Self {
        let classes = log_pi.len();
        let mut offsets = DenseMatrix::zeros(classes, classes);
        for (y, &t) in tau.iter().enumerate() {
            for (c, &lp) in log_pi.iter().enumerate() {
                offsets.set(y, c, t * lp);
            }
        }
        Self { offsets }
    }
}

impl LossPlugin for PerClassAdjustPlugin {
    fn name(&self) -> &'static str {
        "per_class_logit_adjustment"
    }

    fn prepare_batch(&mut self, ctx: &BatchCtx<'_>) -> Result<BatchPlan> {
        let mut plan = BatchPlan::one_hot(ctx.labels, ctx.model.classes());
        let mut offset = DenseMatrix::zeros(ctx.labels.len(), ctx.model.classes());
        for (i, &y) in ctx.labels.iter().enumerate() {
            offset.row_mut(i).copy_from_slice(self.offsets.row(y));
        }
        plan.logit_offset = Some(offset);
        Ok(plan)
    }
}

fn mean_ce(model: &Model, features: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    let logits = model.forward(features)?;
    let mut total = 0.0;
    for i in 0..labels.len() {
        total += numerics::cross_entropy_label(logits.row(i), labels[i])?;
    }
    Ok(total / labels.len() as f64)
}

/// One full-batch gradient step on the tau-adjusted training loss.
fn adjusted_full_batch_step(
    model: &Model,
    features: &DenseMatrix,
    labels: &[usize],
    tau: &[f64],
    log_pi: &[f64],
    lr: f64,
) -> Result<Model> {
    let (logits, trace) = model.forward_trace(features)?;
    let n = labels.len();
    let classes = log_pi.len();
    let mut grad = DenseMatrix::zeros(n, classes);
    for i in 0..n {
        let y = labels[i];
        let adjusted: Vec<f64> = logits
            .row(i)
            .iter()
            .zip(log_pi)
            .map(|(u, lp)| u + tau[y] * lp)
            .collect();
        let g = numerics::grad_ce_wrt_logits(&adjusted, &numerics::one_hot(y, classes))?;
        for (c, gc) in g.iter().enumerate() {
            grad.set(i, c, gc / n as f64);
        }
    }
    let grads = model.backward(&trace, &grad);
    let mut stepped = model.clone();
    stepped.apply_gradients(&grads, lr);
    Ok(stepped)
}

/// Knowledge-distillation label compensation target
/// `y + lambda * (softmax(z/T) - softmax(u/T))`; sums to one.
pub fn kd_target(
    student_logits: &[f64],
    teacher_logits: &[f64],
    y: &[f64],
    temperature: f64,
    lambda: f64,
) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    assert!((0.0..=1.0).contains(&lambda), "lambda outside [0, 1]");
    let q = numerics::softmax_unchecked(
        &teacher_logits
            .iter()
            .map(|z| z / temperature)
            .collect::<Vec<_>>(),
    );
    let p_prime = numerics::softmax_unchecked(
        &student_logits
            .iter()
            .map(|u| u / temperature)
            .collect::<Vec<_>>(),
    );
    y.iter()
        .zip(q.iter().zip(&p_prime))
        .map(|(&yc, (&qc, &pc))| yc + lambda * (qc - pc))
        .collect()
}

/// Cross entropy of the student prediction against the KD-compensated
/// target.
pub fn kd_label_compensation_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    y: &[f64],
    temperature: f64,
    lambda: f64,
) -> Result<f64> {
    if student_logits.len() != teacher_logits.len() || student_logits.len() != y.len() {
        return Err(Error::Shape("student/teacher/label length mismatch".into()));
    }
    let target = kd_target(student_logits, teacher_logits, y, temperature, lambda);
    let p = numerics::softmax(student_logits)?;
    Ok(numerics::cross_entropy_unchecked(p.values(), &target))
}

/// Gradient of [`kd_label_compensation_loss`] with respect to the student
/// logits. The target depends on the student logits through
/// `softmax(u/T)`, so the derivative carries an extra term beyond
/// `p - target`.
pub fn kd_grad_wrt_logits(
    student_logits: &[f64],
    teacher_logits: &[f64],
    y: &[f64],
    temperature: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if student_logits.len() != teacher_logits.len() || student_logits.len() != y.len() {
        return Err(Error::Shape("student/teacher/label length mismatch".into()));
    }
    let target = kd_target(student_logits, teacher_logits, y, temperature, lambda);
    let p = numerics::softmax_unchecked(student_logits);
    let p_prime = numerics::softmax_unchecked(
        &student_logits
            .iter()
            .map(|u| u / temperature)
            .collect::<Vec<_>>(),
    );
    let log_p: Vec<f64> = p
        .iter()
        .map(|&pc| mathx::ln(pc.max(numerics::PROB_FLOOR)))
        .collect();
    let mean_log_p_under_pp: f64 = p_prime.iter().zip(&log_p).map(|(&w, &l)| w * l).sum();
    Ok((0..y.len())
        .map(|k| {
            let target_term = p[k] - target[k];
            let self_term = (lambda / temperature) * p_prime[k] * (log_p[k] - mean_log_p_under_pp);
            target_term + self_term
        })
        .collect())
}

/// ISDA's category-level logit term
/// `delta_c = (lambda/2) (w_c - w_y)^T Sigma_y (w_c - w_y)`; zero at the
/// true class, non-negative elsewhere for PSD covariances, and adding it
/// never decreases the sample's loss.
pub fn isda_logit_term(
    class_weights: &DenseMatrix,
    covariances: &[DenseMatrix],
    label: usize,
    lambda: f64,
) -> Result<Vec<f64>> {
    let classes = class_weights.rows();
    let h = class_weights.cols();
    if covariances.len() != classes {
        return Err(Error::Shape(format!(
            "{} covariance matrices for {classes} classes",
            covariances.len()
        )));
    }
    if label >= classes {
        return Err(Error::Index(format!("label {label} out of range")));
    }
    let sigma = &covariances[label];
    if sigma.rows() != h || sigma.cols() != h {
        return Err(Error::Shape(format!(
            "covariance is {}x{}, expected {h}x{h}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    for i in 0..h {
        for j in (i + 1)..h {
            if mathx::abs(sigma.get(i, j) - sigma.get(j, i)) > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "covariance asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    let wy = class_weights.row(label);
    let mut delta = Vec::with_capacity(classes);
    for c in 0..classes {
        if c == label {
            delta.push(0.0);
            continue;
        }
        let diff: Vec<f64> = class_weights
            .row(c)
            .iter()
            .zip(wy)
            .map(|(a, b)| a - b)
            .collect();
        let mut quad = 0.0;
        for i in 0..h {
            for j in 0..h {
                quad += diff[i] * sigma.get(i, j) * diff[j];
            }
        }
        delta.push(lambda / 2.0 * quad);
    }
    Ok(delta)
}

/// Accumulates per-class covariance estimates of the model's last hidden
/// features, one snapshot per epoch, equally weighted.
#[derive(Debug, Clone)]
pub struct CovarianceTracker {
    sums: Vec<DenseMatrix>,
    snapshots: usize,
}

impl CovarianceTracker {
    pub fn new(classes: usize, hidden_dim: usize) -> Self {
        Self {
            sums: vec![DenseMatrix::zeros(hidden_dim, hidden_dim); classes],
            snapshots: 0,
        }
    }

    /// Adds the current epoch's estimate.
    pub fn update(&mut self, model: &Model, data: &Dataset) -> Result<()> {
        let estimate = class_covariances(model, data)?;
        for (sum, est) in self.sums.iter_mut().zip(&estimate) {
            for (s, e) in sum.data_mut().iter_mut().zip(est.data()) {
                *s += e;
            }
        }
        self.snapshots += 1;
        Ok(())
    }

    /// Equally weighted average of the snapshots so far.
    pub fn mean(&self) -> Vec<DenseMatrix> {
        if self.snapshots == 0 {
            return self.sums.clone();
        }
        self.sums
            .iter()
            .map(|s| {
                let mut m = s.clone();
                for v in m.data_mut() {
                    *v /= self.snapshots as f64;
                }
                m
            })
            .collect()
    }
}

/// Per-class covariance of the model's last hidden-layer features.
pub fn class_covariances(model: &Model, data: &Dataset) -> Result<Vec<DenseMatrix>> {
    let hidden = model.hidden_features(&data.features)?;
    let h = hidden.cols();
    let classes = data.classes;
    let mut means = DenseMatrix::zeros(classes, h);
    let mut counts = vec![0usize; classes];
    for i in 0..data.len() {
        let y = data.labels[i];
        counts[y] += 1;
        for j in 0..h {
            means.set(y, j, means.get(y, j) + hidden.get(i, j));
        }
    }
    for c in 0..classes {
        if counts[c] > 0 {
            for j in 0..h {
                means.set(c, j, means.get(c, j) / counts[c] as f64);
            }
        }
    }
    let mut covs = vec![DenseMatrix::zeros(h, h); classes];
    for i in 0..data.len() {
        let y = data.labels[i];
        let centered: Vec<f64> = (0..h).map(|j| hidden.get(i, j) - means.get(y, j)).collect();
        for a in 0..h {
            for b in 0..h {
                let updated = covs[y].get(a, b) + centered[a] * centered[b];
                covs[y].set(a, b, updated);
            }
        }
    }
    for c in 0..classes {
        if counts[c] > 0 {
            for v in covs[c].data_mut() {
                *v /= counts[c] as f64;
            }
        }
    }
    Ok(covs)
}

/// Minimizes `max(0, l - xi) + lambda * xi` over `xi >= 0` in closed form.
///
/// For `lambda < 1` all slack is taken (`xi = l`, value `lambda * l`); for
/// `lambda > 1` none is (`xi = 0`, value `l`); at `lambda = 1` the
/// objective is flat on `[0, l]` and the convention is full slack.
pub fn svm_slack_solution(hinge_value: f64, lambda: f64) -> (f64, f64) {
    assert!(hinge_value >= 0.0, "hinge value must be non-negative");
    assert!(lambda > 0.0, "lambda must be positive");
    if lambda <= 1.0 {
        (hinge_value, lambda * hinge_value)
    } else {
        (0.0, hinge_value)
    }
}

/// Self-paced learning weight: keep the sample iff its loss is at most
/// `lambda` (boundary inclusive).
pub fn spl_weight(loss: f64, lambda: f64) -> f64 {
    assert!(lambda >= 0.0, "lambda must be non-negative");
    if loss <= lambda {
        1.0
    } else {
        0.0
    }
}

/// Growing loss thresholds for self-paced logit compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct SplSchedule {
    thresholds: Vec<f64>,
    /// Enforce the large-bound condition `eta > 2 max |u|` at use sites.
    pub require_large_eta: bool,
}

impl SplSchedule {
    /// Thresholds must be strictly increasing.
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidConfig("empty schedule".into()));
        }
        if thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "self-paced thresholds must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            thresholds,
            require_large_eta: true,
        })
    }

    /// Threshold for an epoch; the last one persists past the schedule.
    pub fn threshold(&self, epoch: usize) -> f64 {
        self.thresholds[epoch.min(self.thresholds.len() - 1)]
    }
}

/// One batch of self-paced logit compensation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfPacedBatch {
    /// Sum of kept plain losses and compensated losses.
    pub total: f64,
    /// Compensated-to-original loss ratio per sample (1 for kept samples).
    pub ratios: Vec<f64>,
    /// Whether each sample kept its plain loss.
    pub kept: Vec<bool>,
}

/// Samples with loss at most the epoch threshold keep their loss; the rest
/// receive the loss-minimizing logit compensation inside the `eta_bound`
/// box (`+eta` at the label, `-eta` elsewhere), which drives their loss —
/// and gradient — toward zero, mirroring a zero self-paced weight.
pub fn self_paced_logcomp_loss(
    logits: &DenseMatrix,
    labels: &[usize],
    schedule: &SplSchedule,
    epoch: usize,
    eta_bound: f64,
) -> Result<SelfPacedBatch> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape("one label per logit row required".into()));
    }
    if schedule.require_large_eta {
        let max_norm = (0..logits.rows())
            .map(|i| numerics::linf_norm(logits.row(i)))
            .fold(0.0, f64::max);
        if eta_bound <= 2.0 * max_norm {
            return Err(Error::InvalidConfig(format!(
                "eta_bound {eta_bound} must exceed 2 * max |u| = {}",
                2.0 * max_norm
            )));
        }
    }
    let tau = schedule.threshold(epoch);
    let mut total = 0.0;
    let mut ratios = Vec::with_capacity(labels.len());
    let mut kept = Vec::with_capacity(labels.len());
    for i in 0..logits.rows() {
        let loss = numerics::cross_entropy_label(logits.row(i), labels[i])?;
        if loss <= tau {
            total += loss;
            ratios.push(1.0);
            kept.push(true);
        } else {
            let compensated: Vec<f64> = logits
                .row(i)
                .iter()
                .enumerate()
                .map(|(c, &u)| {
                    u + if c == labels[i] {
                        eta_bound
                    } else {
                        -eta_bound
                    }
                })
                .collect();
            let new_loss = numerics::cross_entropy_label(&compensated, labels[i])?;
            total += new_loss;
            ratios.push(if loss > 0.0 { new_loss / loss } else { 1.0 });
            kept.push(false);
        }
    }
    Ok(SelfPacedBatch {
        total,
        ratios,
        kept,
    })
}

/// Confidence weighting for category-average predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceMode {
    /// Every prediction counts equally.
    Uniform,
    /// Only argmax-correct predictions count.
    CorrectOnly,
}

/// Per-category average predictions; rows can be absent when a class has
/// no (confident) predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAverages {
    pub rows: Vec<Option<Vec<f64>>>,
}

impl CategoryAverages {
    /// The class's average, or the one-hot fallback when absent.
    pub fn row_or_one_hot(&self, class: usize) -> Vec<f64> {
        match &self.rows[class] {
            Some(row) => row.clone(),
            None => numerics::one_hot(class, self.rows.len()),
        }
    }
}

/// Confidence-weighted per-category average predictions
/// `p~_c = (1/Z_c) sum_{j: y_j = c} conf_j p_j`, renormalized to sum one.
/// Classes with no members or zero total confidence get an absent row.
pub fn category_avg_predictions(
    preds: &DenseMatrix,
    labels: &[usize],
    classes: usize,
    mode: ConfidenceMode,
) -> Result<CategoryAverages> {
    if preds.rows() != labels.len() {
        return Err(Error::Shape("one label per prediction row required".into()));
    }
    let c_dim = preds.cols();
    let mut sums = DenseMatrix::zeros(classes, c_dim);
    let mut z = vec![0.0; classes];
    for i in 0..preds.rows() {
        let y = labels[i];
        if y >= classes {
            return Err(Error::InvalidInput(format!("label {y} out of range")));
        }
        let conf = match mode {
            ConfidenceMode::Uniform => 1.0,
            ConfidenceMode::CorrectOnly => {
                if numerics::argmax(preds.row(i)) == y {
                    1.0
                } else {
                    0.0
                }
            }
        };
        if conf > 0.0 {
            z[y] += conf;
            for (c, &p) in preds.row(i).iter().enumerate() {
                sums.set(y, c, sums.get(y, c) + conf * p);
            }
        }
    }
    let rows = (0..classes)
        .map(|y| {
            if z[y] <= 0.0 {
                None
            } else {
                let raw: Vec<f64> = sums.row(y).iter().map(|&s| s / z[y]).collect();
                let total: f64 = raw.iter().sum();
                Some(raw.into_iter().map(|v| v / total).collect())
            }
        })
        .collect();
    Ok(CategoryAverages { rows })
}

/// mixBootstrapping target `y + alpha (beta p~_y + (1 - beta) p - y)`;
/// a convex combination of distributions, so it sums to one.
pub fn mixbootstrapping_target(
    p: &[f64],
    y: &[f64],
    p_tilde_row: &[f64],
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&alpha), "alpha outside [0, 1]");
    assert!((0.0..=1.0).contains(&beta), "beta outside [0, 1]");
    y.iter()
        .zip(p.iter().zip(p_tilde_row))
        .map(|(&yc, (&pc, &tc))| yc + alpha * (beta * tc + (1.0 - beta) * pc - yc))
        .collect()
}

/// Cross entropy against the mixBootstrapping target. With `beta = 0` this
/// is the soft Bootstrapping loss with `lambda = alpha`; `alpha = 0` is
/// plain cross entropy.
pub fn mixbootstrapping_loss(
    p: &ProbVector,
    y: &[f64],
    p_tilde_row: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if p.len() != y.len() || p.len() != p_tilde_row.len() {
        return Err(Error::Shape("probability/label length mismatch".into()));
    }
    let target = mixbootstrapping_target(p.values(), y, p_tilde_row, alpha, beta);
    Ok(numerics::cross_entropy_unchecked(p.values(), &target))
}

/// Gradient of the mixBootstrapping loss with respect to the logits when
/// `p = softmax(u)` also appears inside the target.
pub fn mixbootstrapping_grad_wrt_logits(
    logits: &[f64],
    y: &[f64],
    p_tilde_row: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    if logits.len() != y.len() || logits.len() != p_tilde_row.len() {
        return Err(Error::Shape("logit/label length mismatch".into()));
    }
    let p = numerics::softmax_unchecked(logits);
    let target = mixbootstrapping_target(&p, y, p_tilde_row, alpha, beta);
    let log_p: Vec<f64> = p
        .iter()
        .map(|&pc| mathx::ln(pc.max(numerics::PROB_FLOOR)))
        .collect();
    let entropy_like: f64 = p.iter().zip(&log_p).map(|(&pc, &l)| pc * l).sum();
    Ok((0..logits.len())
        .map(|k| {
            let target_term = p[k] - target[k];
            let self_term = -alpha * (1.0 - beta) * p[k] * (log_p[k] - entropy_like);
            target_term + self_term
        })
        .collect())
}

/// Rolling per-sample predictions plus the derived category averages from
/// the previous epoch.
#[derive(Debug, Clone)]
pub struct PredictionMemory {
    classes: usize,
    conf_mode: ConfidenceMode,
    previous: DenseMatrix,
    previous_seen: Vec<bool>,
    averages: Option<CategoryAverages>,
    pending: DenseMatrix,
    pending_seen: Vec<bool>,
}

impl PredictionMemory {
    pub fn new(samples: usize, classes: usize, conf_mode: ConfidenceMode) -> Self {
        Self {
            classes,
            conf_mode,
            previous: DenseMatrix::zeros(samples, classes),
            previous_seen: vec![false; samples],
            averages: None,
            pending: DenseMatrix::zeros(samples, classes),
            pending_seen: vec![false; samples],
        }
    }

    /// Stores this epoch's prediction for a sample.
    pub fn record(&mut self, sample_id: usize, probs: &[f64]) {
        self.pending.row_mut(sample_id).copy_from_slice(probs);
        self.pending_seen[sample_id] = true;
    }

    /// Previous-epoch prediction, if the sample was seen then.
    pub fn previous_prediction(&self, sample_id: usize) -> Option<&[f64]> {
        if self.previous_seen[sample_id] {
            Some(self.previous.row(sample_id))
        } else {
            None
        }
    }

    /// Previous-epoch category average with one-hot fallback.
    pub fn category_average_or_one_hot(&self, class: usize) -> Vec<f64> {
        match &self.averages {
            Some(avg) => avg.row_or_one_hot(class),
            None => numerics::one_hot(class, self.classes),
        }
    }

    /// Finishes an epoch: pending predictions become the previous epoch and
    /// the category averages are recomputed over the samples seen.
    pub fn roll_epoch(&mut self, labels: &[usize]) -> Result<()> {
        let seen: Vec<usize> = self
            .pending_seen
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(i, _)| i)
            .collect();
        if !seen.is_empty() {
            let preds = self.pending.gather_rows(&seen)?;
            let seen_labels: Vec<usize> = seen.iter().map(|&i| labels[i]).collect();
            self.averages = Some(category_avg_predictions(
                &preds,
                &seen_labels,
                self.classes,
                self.conf_mode,
            )?);
        }
        core::mem::swap(&mut self.previous, &mut self.pending);
        core::mem::swap(&mut self.previous_seen, &mut self.pending_seen);
        self.pending_seen.fill(false);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_blobs_with_counts;
    use crate::model::Activation;
    use crate::numerics::{finite_diff_grad, one_hot, softmax};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bootstrapping_reduces_to_ce_at_zero_lambda() {
        let p = softmax(&[0.5, -1.0, 2.0]).unwrap();
        let prev = softmax(&[0.1, 0.1, 0.4]).unwrap();
        let y = one_hot(2, 3);
        let plain = numerics::cross_entropy(&p, &y).unwrap();
        let boot = bootstrapping_loss(&p, &y, &prev, 0.0, BootstrapMode::Soft).unwrap();
        assert_eq!(boot, plain);
    }

    #[test]
    fn bootstrapping_full_lambda_with_own_prediction_is_entropy() {
        let p = softmax(&[0.5, -1.0, 2.0]).unwrap();
        let y = one_hot(0, 3);
        let loss = bootstrapping_loss(&p, &y, &p, 1.0, BootstrapMode::Soft).unwrap();
        let entropy = numerics::cross_entropy(&p, p.values()).unwrap();
        assert_abs_diff_eq!(loss, entropy, epsilon = 1e-12);
    }

    #[test]
    fn bootstrapping_targets_stay_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let prev = numerics::softmax_unchecked(&u);
            let y = one_hot(rng.random_range(0..4), 4);
            let lambda = rng.random_range(0.0..1.0);
            for mode in [BootstrapMode::Soft, BootstrapMode::Hard] {
                let t = bootstrapping_target(&y, &prev, lambda, mode);
                let sum: f64 = t.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(t.iter().all(|&v| v >= -1e-12));
            }
        }
    }

    #[test]
    fn bootstrapping_rejects_bad_lambda() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        let y = one_hot(0, 2);
        assert!(bootstrapping_loss(&p, &y, &p, 1.5, BootstrapMode::Soft).is_err());
    }

    #[test]
    fn label_smoothing_delta_examples() {
        let delta = label_smoothing_delta(&one_hot(1, 3), 0.1);
        assert_abs_diff_eq!(delta[0], 1.0 / 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(delta[1], -1.0 / 15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(delta[2], 1.0 / 30.0, epsilon = 1e-12);
        let sum: f64 = delta.iter().sum();
        assert!(sum.abs() < 1e-12);
        assert!(label_smoothing_delta(&one_hot(1, 3), 0.0)
            .iter()
            .all(|&d| d == 0.0));
    }

    #[test]
    fn adversarial_smoothing_picks_min_logit() {
        let delta = adversarial_label_smoothing_delta(&[3.0, 0.8, 0.2], &one_hot(0, 3), 0.4);
        // Class 2 has the minimum logit.
        assert_abs_diff_eq!(delta[2], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(delta[0], -0.4, epsilon = 1e-12);
        assert!(
            adversarial_label_smoothing_delta(&[1.0, 2.0], &one_hot(0, 2), 0.0)
                .iter()
                .all(|&d| d == 0.0)
        );
    }

    #[test]
    fn adversarial_smoothing_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let c = rng.random_range(2..6);
            let u: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = one_hot(rng.random_range(0..c), c);
            let lambda = rng.random_range(0.01..1.0);
            let delta = adversarial_label_smoothing_delta(&u, &y, lambda);
            let target: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let achieved = numerics::cross_entropy_logits(&u, &target).unwrap();

            let mut best = f64::NEG_INFINITY;
            for cand in 0..c {
                let t: Vec<f64> = y
                    .iter()
                    .enumerate()
                    .map(|(k, &yk)| yk + lambda * (if k == cand { 1.0 } else { 0.0 } - yk))
                    .collect();
                best = best.max(numerics::cross_entropy_logits(&u, &t).unwrap());
            }
            assert_abs_diff_eq!(achieved, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_priors_leave_loss_unchanged() {
        let priors = CategoryPriors::new(vec![0.25; 4]).unwrap();
        let u = [1.4, -0.3, 0.0, 2.2];
        let adjusted = logit_adjustment_loss(&u, 2, &priors, 1.0).unwrap();
        let plain = numerics::cross_entropy_label(&u, 2).unwrap();
        assert!((adjusted - plain).abs() <= 1e-12);
    }

    #[test]
    fn adjustment_offsets_are_log_priors() {
        let priors = CategoryPriors::new(vec![0.7, 0.2, 0.1]).unwrap();
        let g = logit_adjustment_offsets(&priors, 1.0).unwrap();
        assert_abs_diff_eq!(g[0], 0.7f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 0.2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g[2], 0.1f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn priors_must_be_positive() {
        assert!(CategoryPriors::new(vec![1.0, 0.0]).is_err());
        assert!(CategoryPriors::new(vec![0.4, 0.4]).is_err());
        assert!(CategoryPriors::from_labels(&[0, 0, 0], 2).is_err());
    }

    #[test]
    fn kd_reduces_to_ce() {
        let u = [0.4, -0.2, 1.1];
        let y = one_hot(2, 3);
        let plain = numerics::cross_entropy_logits(&u, &y).unwrap();
        // lambda = 0.
        assert_eq!(
            kd_label_compensation_loss(&u, &[5.0, 1.0, -2.0], &y, 2.0, 0.0).unwrap(),
            plain
        );
        // teacher = student.
        let same = kd_label_compensation_loss(&u, &u, &y, 3.0, 0.7).unwrap();
        assert_abs_diff_eq!(same, plain, epsilon = 1e-12);
    }

    #[test]
    fn kd_target_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let u: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = one_hot(rng.random_range(0..5), 5);
            let t = kd_target(
                &u,
                &z,
                &y,
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..1.0),
            );
            let sum: f64 = t.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kd_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = one_hot(rng.random_range(0..4), 4);
            let temp = rng.random_range(0.5..4.0);
            let lambda = rng.random_range(0.0..1.0);
            let grad = kd_grad_wrt_logits(&u, &z, &y, temp, lambda).unwrap();
            let fd = finite_diff_grad(
                |uu| kd_label_compensation_loss(uu, &z, &y, temp, lambda).unwrap(),
                &u,
                1e-5,
            )
            .unwrap();
            for (a, f) in grad.iter().zip(&fd) {
                let rel = (a - f).abs() / a.abs().max(1e-7);
                assert!(rel < 1e-5 || (a - f).abs() < 1e-7, "{a} vs {f}");
            }
        }
    }

    #[test]
    fn isda_term_zero_cases() {
        let w = DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let sigma = vec![identity(2), identity(2), identity(2)];
        assert!(isda_logit_term(&w, &sigma, 0, 0.0)
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));
        let w_same = DenseMatrix::from_vec(3, 2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(isda_logit_term(&w_same, &sigma, 1, 2.0)
            .unwrap()
            .iter()
            .all(|&d| d == 0.0));
    }

    fn identity(h: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(h, h);
        for i in 0..h {
            m.set(i, i, 1.0);
        }
        m
    }

    #[test]
    fn isda_term_is_nonnegative_and_never_decreases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let h = 3;
            let classes = 4;
            let w = DenseMatrix::from_vec(
                classes,
                h,
                (0..classes * h)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            // Random PSD covariance A A^T for each class.
            let covs: Vec<DenseMatrix> = (0..classes)
                .map(|_| {
                    let a: Vec<f64> = (0..h * h).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let mut psd = DenseMatrix::zeros(h, h);
                    for i in 0..h {
                        for j in 0..h {
                            let mut s = 0.0;
                            for k in 0..h {
                                s += a[i * h + k] * a[j * h + k];
                            }
                            psd.set(i, j, s);
                        }
                    }
                    psd
                })
                .collect();
            let label = rng.random_range(0..classes);
            let delta = isda_logit_term(&w, &covs, label, rng.random_range(0.0..2.0)).unwrap();
            assert_eq!(delta[label], 0.0);
            assert!(delta.iter().all(|&d| d >= 0.0));

            let u: Vec<f64> = (0..classes).map(|_| rng.random_range(-2.0..2.0)).collect();
            let shifted: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let before = numerics::cross_entropy_label(&u, label).unwrap();
            let after = numerics::cross_entropy_label(&shifted, label).unwrap();
            assert!(after >= before - 1e-12);
        }
    }

    #[test]
    fn isda_rejects_asymmetric_covariance() {
        let w = DenseMatrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut bad = identity(2);
        bad.set(0, 1, 0.5);
        assert!(matches!(
            isda_logit_term(&w, &[bad, identity(2)], 0, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn svm_slack_closed_form() {
        let (xi, value) = svm_slack_solution(0.8, 0.5);
        assert_abs_diff_eq!(xi, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(value, 0.4, epsilon = 1e-12);
        assert_eq!(svm_slack_solution(0.0, 0.5), (0.0, 0.0));
        assert_eq!(svm_slack_solution(1.0, 2.0), (0.0, 1.0));
        // Flat objective at lambda = 1: convention takes the slack.
        assert_eq!(svm_slack_solution(0.6, 1.0), (0.6, 0.6));
    }

    #[test]
    fn spl_weight_boundary_inclusive() {
        assert_eq!(spl_weight(0.5, 1.0), 1.0);
        assert_eq!(spl_weight(1.5, 1.0), 0.0);
        assert_eq!(spl_weight(1.0, 1.0), 1.0);
    }

    #[test]
    fn schedule_must_increase() {
        assert!(SplSchedule::new(vec![0.5, 0.5]).is_err());
        assert!(SplSchedule::new(vec![]).is_err());
        let s = SplSchedule::new(vec![0.1, 0.5, 1.0]).unwrap();
        assert_eq!(s.threshold(0), 0.1);
        assert_eq!(s.threshold(10), 1.0);
    }

    #[test]
    fn self_paced_ratios_split_by_threshold() {
        let logits = DenseMatrix::from_vec(2, 3, vec![4.0, -1.0, -1.0, -2.0, 4.0, 1.0]).unwrap();
        // Sample 0 has a tiny loss for label 0, sample 1 a large one for
        // label 2.
        let schedule = SplSchedule::new(vec![0.5, 0.9]).unwrap();
        let eta = 2.0 * 4.0 + 1.0;
        let out = self_paced_logcomp_loss(&logits, &[0, 2], &schedule, 0, eta).unwrap();
        assert_eq!(out.kept, vec![true, false]);
        assert_eq!(out.ratios[0], 1.0);
        assert!(out.ratios[1] <= 0.05, "ratio {}", out.ratios[1]);
    }

    #[test]
    fn self_paced_keeps_everything_below_threshold() {
        let logits = DenseMatrix::from_vec(2, 2, vec![1.0, -1.0, -0.5, 0.5]).unwrap();
        let schedule = SplSchedule::new(vec![100.0, 101.0]).unwrap();
        let out = self_paced_logcomp_loss(&logits, &[0, 1], &schedule, 1, 10.0).unwrap();
        let plain: f64 = (0..2)
            .map(|i| numerics::cross_entropy_label(logits.row(i), [0, 1][i]).unwrap())
            .sum();
        assert_eq!(out.total, plain);
        assert!(out.kept.iter().all(|&k| k));
    }

    #[test]
    fn self_paced_enforces_large_eta() {
        let logits = DenseMatrix::from_vec(1, 2, vec![3.0, -3.0]).unwrap();
        let schedule = SplSchedule::new(vec![0.1]).unwrap();
        assert!(matches!(
            self_paced_logcomp_loss(&logits, &[0], &schedule, 0, 1.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn category_averages_single_member() {
        let preds = DenseMatrix::from_vec(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let avg = category_avg_predictions(&preds, &[0, 1], 2, ConfidenceMode::Uniform).unwrap();
        assert_eq!(avg.rows[0].as_ref().unwrap(), &vec![0.9, 0.1]);
        assert_eq!(avg.rows[1].as_ref().unwrap(), &vec![0.2, 0.8]);
    }

    #[test]
    fn category_averages_absent_when_all_wrong() {
        let preds = DenseMatrix::from_vec(2, 2, vec![0.2, 0.8, 0.3, 0.7]).unwrap();
        let avg =
            category_avg_predictions(&preds, &[0, 0], 2, ConfidenceMode::CorrectOnly).unwrap();
        assert!(avg.rows[0].is_none());
        assert_eq!(avg.row_or_one_hot(0), vec![1.0, 0.0]);
    }

    #[test]
    fn category_averages_mean_of_two() {
        let preds = DenseMatrix::from_vec(2, 2, vec![0.9, 0.1, 0.7, 0.3]).unwrap();
        let avg = category_avg_predictions(&preds, &[0, 0], 2, ConfidenceMode::Uniform).unwrap();
        let row = avg.rows[0].as_ref().unwrap();
        assert_abs_diff_eq!(row[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn mixbootstrapping_reductions() {
        let p = softmax(&[0.3, -0.5, 1.7]).unwrap();
        let y = one_hot(1, 3);
        let tilde = [0.5, 0.25, 0.25];
        // alpha = 0 is plain CE.
        assert_eq!(
            mixbootstrapping_loss(&p, &y, &tilde, 0.0, 0.6).unwrap(),
            numerics::cross_entropy(&p, &y).unwrap()
        );
        // beta = 0 matches soft Bootstrapping with y_prev = p, bit for bit.
        let alpha = 0.35;
        let mixed = mixbootstrapping_loss(&p, &y, &tilde, alpha, 0.0).unwrap();
        let boot = bootstrapping_loss(&p, &y, &p, alpha, BootstrapMode::Soft).unwrap();
        assert_eq!(mixed, boot);
    }

    #[test]
    fn mixbootstrapping_targets_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..300 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = numerics::softmax_unchecked(&u);
            let tilde = numerics::softmax_unchecked(
                &(0..4)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect::<Vec<_>>(),
            );
            let y = one_hot(rng.random_range(0..4), 4);
            let t = mixbootstrapping_target(
                &p,
                &y,
                &tilde,
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            );
            let sum: f64 = t.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(t.iter().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn mixbootstrapping_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y = one_hot(rng.random_range(0..4), 4);
            let tilde = numerics::softmax_unchecked(
                &(0..4)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect::<Vec<_>>(),
            );
            let alpha = rng.random_range(0.0..1.0);
            let beta = rng.random_range(0.0..1.0);
            let grad = mixbootstrapping_grad_wrt_logits(&u, &y, &tilde, alpha, beta).unwrap();
            let fd = finite_diff_grad(
                |uu| {
                    let p = softmax(uu).unwrap();
                    mixbootstrapping_loss(&p, &y, &tilde, alpha, beta).unwrap()
                },
                &u,
                1e-5,
            )
            .unwrap();
            for (a, f) in grad.iter().zip(&fd) {
                let rel = (a - f).abs() / a.abs().max(1e-7);
                assert!(rel < 1e-5 || (a - f).abs() < 1e-7, "{a} vs {f}");
            }
        }
    }

    #[test]
    fn increments_vanish_for_uniform_priors_and_zero_tau() {
        let mut data = make_blobs_with_counts(&[30, 30, 30], 2, 5.0, 1.0, 0.0, 8).unwrap();
        data.assign_splits((1.0, 0.0, 0.0), 9).unwrap();
        let model = Model::new(2, &[4], 3, Activation::Tanh, 10).unwrap();

        let uniform = CategoryPriors::new(vec![1.0 / 3.0; 3]).unwrap();
        for inc in category_loss_increments(&model, &data, &uniform, 1.0).unwrap() {
            assert!(inc.mean_relative_increment.abs() < 1e-12);
        }
        let skewed = CategoryPriors::new(vec![0.7, 0.2, 0.1]).unwrap();
        for inc in category_loss_increments(&model, &data, &skewed, 0.0).unwrap() {
            assert!(inc.mean_relative_increment.abs() < 1e-12);
        }
    }

    #[test]
    fn increments_exclude_zero_loss_samples() {
        // One sample with a saturated correct logit has exactly zero loss.
        let features = DenseMatrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap();
        let mut data = crate::dataset::Dataset::new(features, vec![0, 1], 2).unwrap();
        data.splits = vec![crate::dataset::Split::Train; 2];
        let layer = crate::model::Layer {
            weights: DenseMatrix::from_vec(2, 1, vec![500.0, -500.0]).unwrap(),
            bias: vec![0.0, 0.0],
        };
        let model = Model::from_layers(vec![layer], Activation::Tanh).unwrap();
        let priors = CategoryPriors::new(vec![0.8, 0.2]).unwrap();
        let incs = category_loss_increments(&model, &data, &priors, 1.0).unwrap();
        // Both samples saturate to zero loss and are excluded.
        assert_eq!(incs[0].excluded, 1);
        assert_eq!(incs[1].excluded, 1);
        assert_eq!(incs[0].samples, 0);
    }

    #[test]
    fn covariance_tracker_averages_snapshots() {
        let mut data = make_blobs_with_counts(&[20, 20], 2, 5.0, 1.0, 0.0, 11).unwrap();
        data.assign_splits((1.0, 0.0, 0.0), 12).unwrap();
        let model = Model::new(2, &[3], 2, Activation::Tanh, 13).unwrap();
        let mut tracker = CovarianceTracker::new(2, 3);
        tracker.update(&model, &data).unwrap();
        tracker.update(&model, &data).unwrap();
        let mean = tracker.mean();
        let single = class_covariances(&model, &data).unwrap();
        for (m, s) in mean.iter().zip(&single) {
            for (a, b) in m.data().iter().zip(s.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn meta_adjustment_zero_steps_returns_init() {
        let mut data = make_blobs_with_counts(&[60, 30, 10], 2, 5.0, 1.0, 0.0, 3).unwrap();
        data.assign_splits((0.6, 0.2, 0.2), 5).unwrap();
        let model = Model::new(2, &[4], 3, Activation::Tanh, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = meta_logit_adjust(&data, &model, &[1.0, 1.0, 1.0], 0, 3, &cfg).unwrap();
        assert_eq!(out.tau, vec![1.0, 1.0, 1.0]);
        assert!(out.val_losses.is_empty());
    }

    #[test]
    fn meta_adjustment_is_inert_under_uniform_priors() {
        // Exactly uniform train priors make the adjustment a per-sample
        // constant logit shift, so the validation loss is flat in tau and
        // the outer gradient vanishes (up to rounding noise).
        let mut data = make_blobs_with_counts(&[40, 40, 40], 2, 5.0, 1.0, 0.0, 14).unwrap();
        // Stratified split: 24 train + 16 val per class, exact counts.
        for class in 0..3 {
            for k in 0..40 {
                let i = class * 40 + k;
                data.splits[i] = if k < 24 { Split::Train } else { Split::Val };
            }
        }
        let model = Model::new(2, &[4], 3, Activation::Tanh, 16).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 17,
            ..TrainConfig::default()
        };
        let init = [1.0, 1.0, 1.0];
        let out = meta_logit_adjust(&data, &model, &init, 2, 2, &cfg).unwrap();
        for (t, i) in out.tau.iter().zip(&init) {
            assert!((t - i).abs() < 1e-6, "tau moved to {t}");
        }
    }

    #[test]
    fn meta_adjustment_requires_all_classes_in_val() {
        let mut data = make_blobs_with_counts(&[50, 50], 2, 5.0, 1.0, 0.0, 3).unwrap();
        // Force every class-1 sample out of the validation split.
        for (i, split) in data.splits.iter_mut().enumerate() {
            *split = if i < 50 {
                if i < 40 {
                    Split::Train
                } else {
                    Split::Val
                }
            } else {
                Split::Train
            };
        }
        let model = Model::new(2, &[4], 2, Activation::Tanh, 1).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            meta_logit_adjust(&data, &model, &[1.0, 1.0], 1, 2, &cfg),
            Err(Error::InvalidSplit(_))
        ));
    }
}
