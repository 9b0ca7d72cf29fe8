//! Compensation terms: taxonomy types, label-constraint projection, the
//! LogComp and MixComp losses with their update rules, and adversarial
//! feature perturbations at sample/category/corpus/mixed granularity.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::mathx;
use crate::model::Model;
use crate::numerics::{self, DenseMatrix};
use crate::{Error, Result};

/// What a compensation term is added to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Feature,
    Logit,
    Label,
    Loss,
    /// Several targets compensated simultaneously.
    Mixed(Vec<Target>),
}

/// Whether the compensation decreases the loss (positive), increases it
/// (negative), or does both across samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Positive,
    Negative,
    Mixed,
}

/// Sharing level of a compensation term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Granularity {
    Sample,
    Category,
    Corpus,
    /// A sum of terms at several levels.
    Mixed(Vec<Granularity>),
}

/// How the term is obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inference {
    Prior,
    HyperParameter,
    Regularization,
    Meta,
    Adversarial,
    Mixed(Vec<Inference>),
}

/// A point in the taxonomy: target x direction x granularity x inference.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationSpec {
    pub target: Target,
    pub direction: Direction,
    pub granularity: Granularity,
    pub inference: Inference,
}

impl CompensationSpec {
    /// Mixed variants must carry at least two non-mixed constituents.
    pub fn validate(&self) -> Result<()> {
        fn check_targets(t: &Target) -> Result<()> {
            if let Target::Mixed(parts) = t {
                if parts.len() < 2 || parts.iter().any(|p| matches!(p, Target::Mixed(_))) {
                    return Err(Error::InvalidConfig(
                        "mixed target needs >= 2 non-mixed constituents".into(),
                    ));
                }
            }
            Ok(())
        }
        fn check_granularity(g: &Granularity) -> Result<()> {
            if let Granularity::Mixed(parts) = g {
                if parts.len() < 2 || parts.iter().any(|p| matches!(p, Granularity::Mixed(_))) {
                    return Err(Error::InvalidConfig(
                        "mixed granularity needs >= 2 non-mixed constituents".into(),
                    ));
                }
            }
            Ok(())
        }
        fn check_inference(i: &Inference) -> Result<()> {
            if let Inference::Mixed(parts) = i {
                if parts.len() < 2 || parts.iter().any(|p| matches!(p, Inference::Mixed(_))) {
                    return Err(Error::InvalidConfig(
                        "mixed inference needs >= 2 non-mixed constituents".into(),
                    ));
                }
            }
            Ok(())
        }
        check_targets(&self.target)?;
        check_granularity(&self.granularity)?;
        check_inference(&self.inference)
    }
}

/// Which branch of a mixed-direction method handled a sample last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchTag {
    /// Not visited by a branching method.
    None,
    /// Positive (loss-decreasing) compensation.
    Positive,
    /// Negative (loss-increasing) compensation.
    Negative,
}

impl BranchTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchTag::None => "none",
            BranchTag::Positive => "pos",
            BranchTag::Negative => "neg",
        }
    }
}

/// All compensation terms a training run can accumulate.
///
/// Rows are indexed by dataset-global sample id; plugins only populate the
/// tables their method uses, the rest stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationState {
    pub samples: usize,
    pub classes: usize,
    pub dim: usize,
    /// Per-sample logit terms v_i, N x C.
    pub sample_logit: DenseMatrix,
    /// Per-sample label terms, N x C.
    pub sample_label: DenseMatrix,
    /// Per-category logit terms, C x C (row = the sample's category).
    pub category_logit: DenseMatrix,
    /// Per-category label terms, C x C.
    pub category_label: DenseMatrix,
    /// Per-sample loss terms, length N.
    pub sample_loss: Vec<f64>,
    /// Corpus-wide feature perturbation, length d.
    pub corpus_feature: Vec<f64>,
    /// Per-category feature perturbations, C x d.
    pub category_feature: DenseMatrix,
    /// Per-sample feature perturbations, N x d.
    pub sample_feature: DenseMatrix,
    /// Last branch each sample took in a mixed-direction method.
    pub branch_tags: Vec<BranchTag>,
}

impl CompensationState {
    pub fn new(samples: usize, classes: usize, dim: usize) -> Self {
        Self {
            samples,
            classes,
            dim,
            sample_logit: DenseMatrix::zeros(samples, classes),
            sample_label: DenseMatrix::zeros(samples, classes),
            category_logit: DenseMatrix::zeros(classes, classes),
            category_label: DenseMatrix::zeros(classes, classes),
            sample_loss: vec![0.0; samples],
            corpus_feature: vec![0.0; dim],
            category_feature: DenseMatrix::zeros(classes, dim),
            sample_feature: DenseMatrix::zeros(samples, dim),
            branch_tags: vec![BranchTag::None; samples],
        }
    }

    /// Zero-sized placeholder for stateless plugins.
    pub fn empty() -> Self {
        Self::new(0, 0, 0)
    }

    /// l1 norm of the per-sample logit term of one row.
    pub fn logit_l1_norm(&self, sample: usize) -> f64 {
        numerics::l1_norm(self.sample_logit.row(sample))
    }
}

/// Euclidean projection of a label compensation onto the feasible set
/// `{ delta : sum_c delta_c = 0, base_c + delta_c >= 0 }` for a base on the
/// probability simplex. Feasible inputs are fixed points.
pub fn project_label_delta(delta: &[f64], base: &[f64]) -> Vec<f64> {
    assert_eq!(delta.len(), base.len(), "delta/base length mismatch");
    let target_sum: f64 = base.iter().sum();
    let point: Vec<f64> = delta.iter().zip(base).map(|(d, b)| d + b).collect();
    let projected = project_onto_simplex(&point, target_sum);
    projected.iter().zip(base).map(|(z, b)| z - b).collect()
}

/// Projection of `point` onto `{ z : z >= 0, sum z = target_sum }` by the
/// sort-and-threshold rule.
fn project_onto_simplex(point: &[f64], target_sum: f64) -> Vec<f64> {
    let mut sorted = point.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &value) in sorted.iter().enumerate() {
        cumulative += value;
        let candidate = (cumulative - target_sum) / (j + 1) as f64;
        if value - candidate > 0.0 {
            theta = candidate;
        }
    }
    point.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Resolves the effective compensation term for one sample under a spec's
/// target and granularity. Mixed granularity sums its constituent levels;
/// mixed targets have no single term and are rejected.
pub fn apply_granularity(
    state: &CompensationState,
    spec: &CompensationSpec,
    sample_index: usize,
    class_label: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if sample_index >= state.samples {
        return Err(Error::Index(format!(
            "sample {} out of range for {} samples",
            sample_index, state.samples
        )));
    }
    if class_label >= state.classes {
        return Err(Error::Index(format!(
            "class {} out of range for {} classes",
            class_label, state.classes
        )));
    }
    term_for(
        state,
        &spec.target,
        &spec.granularity,
        sample_index,
        class_label,
    )
}

fn term_for(
    state: &CompensationState,
    target: &Target,
    granularity: &Granularity,
    i: usize,
    y: usize,
) -> Result<Vec<f64>> {
    if let Granularity::Mixed(parts) = granularity {
        let mut acc: Option<Vec<f64>> = None;
        for part in parts {
            let term = term_for(state, target, part, i, y)?;
            acc = Some(match acc {
                None => term,
                Some(mut a) => {
                    for (av, tv) in a.iter_mut().zip(&term) {
                        *av += tv;
                    }
                    a
                }
            });
        }
        return Ok(acc.unwrap_or_default());
    }

    let unsupported = |what: &str| -> Error { Error::UnsupportedCombination(String::from(what)) };
    match (target, granularity) {
        (Target::Logit, Granularity::Sample) => Ok(state.sample_logit.row(i).to_vec()),
        (Target::Logit, Granularity::Category) => Ok(state.category_logit.row(y).to_vec()),
        (Target::Logit, Granularity::Corpus) => Err(unsupported(
            "corpus-level logit terms are derived from priors, not stored",
        )),
        (Target::Label, Granularity::Sample) => Ok(state.sample_label.row(i).to_vec()),
        (Target::Label, Granularity::Category) => Ok(state.category_label.row(y).to_vec()),
        (Target::Label, Granularity::Corpus) => {
            Err(unsupported("no corpus-level label term exists"))
        }
        (Target::Loss, Granularity::Sample) => Ok(vec![state.sample_loss[i]]),
        (Target::Loss, _) => Err(unsupported("loss terms are sample-level only")),
        (Target::Feature, Granularity::Sample) => Ok(state.sample_feature.row(i).to_vec()),
        (Target::Feature, Granularity::Category) => Ok(state.category_feature.row(y).to_vec()),
        (Target::Feature, Granularity::Corpus) => Ok(state.corpus_feature.clone()),
        (Target::Mixed(_), _) => Err(unsupported(
            "mixed targets carry one term per constituent target",
        )),
        (_, Granularity::Mixed(_)) => unreachable!("handled above"),
    }
}

/// Label compensation applied on the prediction side: the loss of the
/// compensated prediction `p + delta` against the observed label.
///
/// This is the second placement of a label term (the first adds the term
/// to the label itself, which is what the training plugins use). The
/// compensated prediction must remain a distribution, so `delta` is
/// projected onto the label-constraint set before use.
pub fn label_compensated_prediction_loss(
    p: &crate::numerics::ProbVector,
    delta: &[f64],
    label: usize,
) -> Result<f64> {
    if delta.len() != p.len() {
        return Err(Error::Shape("delta length differs from prediction".into()));
    }
    if label >= p.len() {
        return Err(Error::Index(format!("label {label} out of range")));
    }
    let feasible = project_label_delta(delta, p.values());
    let compensated: Vec<f64> = p
        .values()
        .iter()
        .zip(&feasible)
        .map(|(a, b)| (a + b).max(0.0))
        .collect();
    Ok(numerics::cross_entropy_unchecked(
        &compensated,
        &numerics::one_hot(label, p.len()),
    ))
}

/// Total loss of an additive per-sample loss compensation.
///
/// The gradient of `sum_i l_i + kappa_i` with respect to the model equals
/// the gradient of `sum_i l_i`, so this inference route cannot by itself
/// change what is learned; it is kept for loss accounting.
pub fn loss_compensated_total(losses: &[f64], kappa: &[f64]) -> Result<f64> {
    if losses.len() != kappa.len() {
        return Err(Error::Shape(format!(
            "{} losses but {} compensation terms",
            losses.len(),
            kappa.len()
        )));
    }
    Ok(losses.iter().zip(kappa).map(|(l, k)| l + k).sum())
}

/// Value and gradients of the l1-regularized logit-compensation loss
/// `sum_i CE(softmax(u_i + v_i), y_i) + lambda * sum_i |v_i|_1`.
pub struct LogCompLoss {
    pub total: f64,
    /// Gradient of the cross-entropy part w.r.t. the logits, N x C.
    pub grad_logits: DenseMatrix,
    /// Gradient of the cross-entropy part w.r.t. v, N x C (identical to
    /// `grad_logits`; the l1 part is handled by the proximal update).
    pub grad_v: DenseMatrix,
}

pub fn logcomp_loss(
    logits: &DenseMatrix,
    v: &DenseMatrix,
    labels: &[usize],
    lambda: f64,
) -> Result<LogCompLoss> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if v.rows() != logits.rows() || v.cols() != logits.cols() {
        return Err(Error::Shape("v shape differs from logits".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::Shape("one label per logit row required".into()));
    }
    let (n, c) = (logits.rows(), logits.cols());
    let mut total = 0.0;
    let mut grad = DenseMatrix::zeros(n, c);
    for i in 0..n {
        if labels[i] >= c {
            return Err(Error::Index(format!("label {} out of range", labels[i])));
        }
        let compensated: Vec<f64> = logits
            .row(i)
            .iter()
            .zip(v.row(i))
            .map(|(u, vi)| u + vi)
            .collect();
        let p = numerics::softmax_unchecked(&compensated);
        total += -mathx::ln(p[labels[i]].max(numerics::PROB_FLOOR));
        total += lambda * numerics::l1_norm(v.row(i));
        for (j, &pj) in p.iter().enumerate() {
            grad.set(i, j, pj - if j == labels[i] { 1.0 } else { 0.0 });
        }
    }
    Ok(LogCompLoss {
        total,
        grad_logits: grad.clone(),
        grad_v: grad,
    })
}

/// Proximal step for the l1 part of the logit-compensation loss:
/// `v' = soft_threshold(v - lr * grad, lr * lambda)`. With `lambda = 0`
/// this is plain SGD on v.
pub fn logcomp_prox_update(v: &[f64], grad: &[f64], lr: f64, lambda: f64) -> Vec<f64> {
    assert!(lr > 0.0, "learning rate must be positive");
    assert!(lambda >= 0.0, "lambda must be non-negative");
    assert_eq!(v.len(), grad.len(), "v/grad length mismatch");
    let threshold = lr * lambda;
    v.iter()
        .zip(grad)
        .map(|(&vc, &gc)| soft_threshold(vc - lr * gc, threshold))
        .collect()
}

/// Componentwise shrink toward zero by `threshold`.
pub fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

/// Single positive-compensation step `v = eta * (one_hot(y) - softmax(u))`.
/// The infinity norm of the result is bounded by `eta`.
pub fn mixcomp_v_step(logits: &[f64], label: usize, eta: f64) -> Vec<f64> {
    assert!(eta >= 0.0, "eta must be non-negative");
    assert!(label < logits.len(), "label out of range");
    let p = numerics::softmax_unchecked(logits);
    p.iter()
        .enumerate()
        .map(|(c, &pc)| eta * (if c == label { 1.0 } else { 0.0 } - pc))
        .collect()
}

/// Loss threshold at the boundary of the top-`pro` percent of
/// descending-sorted losses.
///
/// `pro = 0` returns a value strictly above the maximum (no sample
/// satisfies `l >= tau`); `pro = 100` returns the minimum (every sample
/// does). Otherwise tau is the k-th largest loss with
/// `k = ceil(n * pro / 100)`.
pub fn select_tau(losses: &[f64], pro: f64) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::InvalidInput("select_tau over no losses".into()));
    }
    assert!((0.0..=100.0).contains(&pro), "pro outside [0, 100]");
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite losses"));
    let k = mathx::ceil(sorted.len() as f64 * pro / 100.0) as usize;
    if k == 0 {
        let max = sorted[0];
        Ok(max + mathx::abs(max) * 1e-12 + f64::MIN_POSITIVE)
    } else {
        Ok(sorted[k.min(sorted.len()) - 1])
    }
}

/// Hyper-parameters of the mixed-direction loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MixCompParams {
    /// Loss threshold separating the two branches.
    pub tau: f64,
    /// Positive-compensation bound (epsilon_1).
    pub eta: f64,
    /// Adversarial feature bound (epsilon_2).
    pub eps2: f64,
    pub pgd_steps: usize,
    pub pgd_step_size: f64,
}

impl MixCompParams {
    pub fn validate(&self) -> Result<()> {
        if self.eta < 0.0 || self.eps2 < 0.0 {
            return Err(Error::InvalidConfig(
                "eta and eps2 must be non-negative".into(),
            ));
        }
        if self.eps2 > 0.0 && self.pgd_steps < 1 {
            return Err(Error::InvalidConfig(
                "pgd_steps must be at least 1 when eps2 > 0".into(),
            ));
        }
        Ok(())
    }

    /// Effective ascent step size (`2.5 * eps2 / steps` when unset).
    pub fn step_size(&self) -> f64 {
        if self.pgd_step_size > 0.0 {
            self.pgd_step_size
        } else if self.pgd_steps > 0 {
            2.5 * self.eps2 / self.pgd_steps as f64
        } else {
            0.0
        }
    }
}

/// One evaluated batch of the mixed-direction loss.
pub struct MixCompBatch {
    /// Sum of per-sample branch losses over the batch.
    pub total_loss: f64,
    /// Per-sample gradient w.r.t. the effective logits (sum convention).
    pub grad_logits: DenseMatrix,
    /// Features actually used (perturbed rows for the negative branch).
    pub features_used: DenseMatrix,
    /// Per-sample logit offsets (v rows for the positive branch).
    pub logit_offsets: DenseMatrix,
    /// Which branch each sample took.
    pub tags: Vec<BranchTag>,
    /// Unperturbed per-sample losses used for the branch decision.
    pub base_losses: Vec<f64>,
}

/// The branch decisions of the mixed-direction loss for one batch:
/// perturbed features for the negative branch, logit offsets for the
/// positive branch, and the per-sample tags and base losses that produced
/// them. Shared by [`mixcomp_batch_loss`] and the training plugin.
pub struct MixCompPlanParts {
    pub features_used: DenseMatrix,
    pub logit_offsets: DenseMatrix,
    pub tags: Vec<BranchTag>,
    pub base_losses: Vec<f64>,
}

/// Splits a batch by the loss threshold and builds both compensations:
/// one positive logit step for `l_i >= tau`, a PGD feature perturbation
/// (when `eps2 > 0`) for `l_i < tau`.
pub fn mixcomp_branch_plan(
    model: &Model,
    features: &DenseMatrix,
    labels: &[usize],
    params: &MixCompParams,
) -> Result<MixCompPlanParts> {
    params.validate()?;
    if features.rows() != labels.len() {
        return Err(Error::Shape("one label per feature row required".into()));
    }
    let n = features.rows();
    let classes = model.classes();
    let logits = model.forward(features)?;

    let mut base_losses = Vec::with_capacity(n);
    for i in 0..n {
        base_losses.push(numerics::cross_entropy_label(logits.row(i), labels[i])?);
    }

    let mut tags = vec![BranchTag::None; n];
    let mut negative_rows = Vec::new();
    let mut logit_offsets = DenseMatrix::zeros(n, classes);
    for (i, &l) in base_losses.iter().enumerate() {
        if l >= params.tau {
            tags[i] = BranchTag::Positive;
            let v = mixcomp_v_step(logits.row(i), labels[i], params.eta);
            logit_offsets.row_mut(i).copy_from_slice(&v);
        } else {
            tags[i] = BranchTag::Negative;
            negative_rows.push(i);
        }
    }

    let mut features_used = features.clone();
    if params.eps2 > 0.0 && !negative_rows.is_empty() {
        let sub = features.gather_rows(&negative_rows)?;
        let sub_labels: Vec<usize> = negative_rows.iter().map(|&i| labels[i]).collect();
        let perturbation = pgd_perturb(
            model,
            &sub,
            &sub_labels,
            params.eps2,
            params.pgd_steps,
            params.step_size(),
            &Granularity::Sample,
        )?;
        if let Perturbation::Sample(delta) = perturbation {
            for (k, &i) in negative_rows.iter().enumerate() {
                for d in 0..features.cols() {
                    features_used.set(i, d, features.get(i, d) + delta.get(k, d));
                }
            }
        }
    }

    Ok(MixCompPlanParts {
        features_used,
        logit_offsets,
        tags,
        base_losses,
    })
}

/// Evaluates the mixed-direction loss on one batch: samples with
/// `l_i >= tau` receive one positive logit-compensation step, samples with
/// `l_i < tau` receive an adversarial feature perturbation bounded by
/// `eps2` (`eps2 = 0` leaves their loss unchanged).
pub fn mixcomp_batch_loss(
    model: &Model,
    features: &DenseMatrix,
    labels: &[usize],
    params: &MixCompParams,
) -> Result<MixCompBatch> {
    let plan = mixcomp_branch_plan(model, features, labels, params)?;
    let n = features.rows();
    let classes = model.classes();

    let eff_logits = {
        let mut l = model.forward(&plan.features_used)?;
        for (lv, ov) in l.data_mut().iter_mut().zip(plan.logit_offsets.data()) {
            *lv += ov;
        }
        l
    };

    let mut total_loss = 0.0;
    let mut grad = DenseMatrix::zeros(n, classes);
    for i in 0..n {
        let p = numerics::softmax_unchecked(eff_logits.row(i));
        total_loss += -mathx::ln(p[labels[i]].max(numerics::PROB_FLOOR));
        for (c, &pc) in p.iter().enumerate() {
            grad.set(i, c, pc - if c == labels[i] { 1.0 } else { 0.0 });
        }
    }

    Ok(MixCompBatch {
        total_loss,
        grad_logits: grad,
        features_used: plan.features_used,
        logit_offsets: plan.logit_offsets,
        tags: plan.tags,
        base_losses: plan.base_losses,
    })
}

/// An adversarial feature perturbation at some granularity.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// One row per sample, N x d.
    Sample(DenseMatrix),
    /// One row per class, C x d (zero for absent classes).
    Category(DenseMatrix),
    /// A single shared vector, length d.
    Corpus(Vec<f64>),
    /// Corpus term solved first, then per-sample terms around `x + corpus`.
    Mixed {
        corpus: Vec<f64>,
        samples: DenseMatrix,
    },
}

/// Projected-gradient ascent on the summed cross-entropy loss inside an
/// infinity-norm ball of radius `eps`.
///
/// The ascent starts at zero and keeps the best iterate, so the returned
/// perturbation never does worse than no perturbation. `Mixed` granularity
/// means corpus-then-sample: the corpus term is solved first, then
/// per-sample terms are optimized around the corpus-shifted features.
pub fn pgd_perturb(
    model: &Model,
    features: &DenseMatrix,
    labels: &[usize],
    eps: f64,
    steps: usize,
    step_size: f64,
    granularity: &Granularity,
) -> Result<Perturbation> {
    if eps < 0.0 {
        return Err(Error::InvalidConfig("eps must be non-negative".into()));
    }
    if steps < 1 {
        return Err(Error::InvalidConfig("pgd needs at least one step".into()));
    }
    if features.rows() != labels.len() {
        return Err(Error::Shape("one label per feature row required".into()));
    }
    let dim = features.cols();
    match granularity {
        Granularity::Sample => {
            let delta = pgd_shared(model, features, labels, eps, steps, step_size, false)?;
            Ok(Perturbation::Sample(delta))
        }
        Granularity::Corpus => {
            let delta = pgd_shared(model, features, labels, eps, steps, step_size, true)?;
            Ok(Perturbation::Corpus(delta.row(0).to_vec()))
        }
        Granularity::Category => {
            let classes = model.classes();
            let mut rows = DenseMatrix::zeros(classes, dim);
            for class in 0..classes {
                let idx: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &y)| y == class)
                    .map(|(i, _)| i)
                    .collect();
                if idx.is_empty() {
                    continue;
                }
                let sub = features.gather_rows(&idx)?;
                let sub_labels = vec![class; idx.len()];
                let delta = pgd_shared(model, &sub, &sub_labels, eps, steps, step_size, true)?;
                rows.row_mut(class).copy_from_slice(delta.row(0));
            }
            Ok(Perturbation::Category(rows))
        }
        Granularity::Mixed(parts) => {
            if parts.as_slice() != [Granularity::Corpus, Granularity::Sample] {
                return Err(Error::UnsupportedCombination(
                    "mixed perturbations are corpus-then-sample".into(),
                ));
            }
            let corpus = pgd_shared(model, features, labels, eps, steps, step_size, true)?;
            let mut shifted = features.clone();
            for i in 0..shifted.rows() {
                for d in 0..dim {
                    shifted.set(i, d, shifted.get(i, d) + corpus.get(0, d));
                }
            }
            let samples = pgd_shared(model, &shifted, labels, eps, steps, step_size, false)?;
            Ok(Perturbation::Mixed {
                corpus: corpus.row(0).to_vec(),
                samples,
            })
        }
    }
}

/// Inner PGD loop. With `shared = true` a single perturbation row is
/// ascended on the summed loss; otherwise each sample gets its own row.
fn pgd_shared(
    model: &Model,
    features: &DenseMatrix,
    labels: &[usize],
    eps: f64,
    steps: usize,
    step_size: f64,
    shared: bool,
) -> Result<DenseMatrix> {
    let n = features.rows();
    let dim = features.cols();
    let delta_rows = if shared { 1 } else { n };
    if eps == 0.0 || n == 0 {
        return Ok(DenseMatrix::zeros(delta_rows, dim));
    }
    let alpha = if step_size > 0.0 {
        step_size
    } else {
        2.5 * eps / steps as f64
    };

    // Objective and per-sample losses at a given delta.
    let eval = |delta: &DenseMatrix| -> Result<(f64, Vec<f64>)> {
        let mut perturbed = features.clone();
        for i in 0..n {
            let drow = delta.row(if shared { 0 } else { i });
            for d in 0..dim {
                perturbed.set(i, d, perturbed.get(i, d) + drow[d]);
            }
        }
        let logits = model.forward(&perturbed)?;
        let mut losses = Vec::with_capacity(n);
        for i in 0..n {
            losses.push(numerics::cross_entropy_label(logits.row(i), labels[i])?);
        }
        Ok((losses.iter().sum(), losses))
    };

    let mut delta = DenseMatrix::zeros(delta_rows, dim);
    let mut best = delta.clone();
    let (mut best_objective, mut best_losses) = eval(&delta)?;
    let mut best_per_sample = best_losses.clone();

    for _ in 0..steps {
        let mut perturbed = features.clone();
        for i in 0..n {
            let drow = delta.row(if shared { 0 } else { i });
            for d in 0..dim {
                perturbed.set(i, d, perturbed.get(i, d) + drow[d]);
            }
        }
        let logits = model.forward(&perturbed)?;
        let mut grad_logits = DenseMatrix::zeros(n, model.classes());
        for i in 0..n {
            let p = numerics::softmax_unchecked(logits.row(i));
            for (c, &pc) in p.iter().enumerate() {
                grad_logits.set(i, c, pc - if c == labels[i] { 1.0 } else { 0.0 });
            }
        }
        let input_grads = model.input_gradients(&perturbed, &grad_logits)?;
        if !input_grads.is_finite() {
            return Err(Error::AttackFailure("non-finite input gradient".into()));
        }

        if shared {
            for d in 0..dim {
                let g: f64 = (0..n).map(|i| input_grads.get(i, d)).sum();
                let updated = delta.get(0, d) + alpha * mathx::sign(g);
                delta.set(0, d, updated.clamp(-eps, eps));
            }
        } else {
            for i in 0..n {
                for d in 0..dim {
                    let updated = delta.get(i, d) + alpha * mathx::sign(input_grads.get(i, d));
                    delta.set(i, d, updated.clamp(-eps, eps));
                }
            }
        }

        let (objective, losses) = eval(&delta)?;
        if shared {
            if objective > best_objective {
                best_objective = objective;
                best = delta.clone();
                best_losses = losses;
            }
        } else {
            // Per-sample rows are independent; keep each row's best.
            for i in 0..n {
                if losses[i] > best_per_sample[i] {
                    best_per_sample[i] = losses[i];
                    best.row_mut(i).copy_from_slice(delta.row(i));
                }
            }
        }
    }
    let _ = best_losses;
    Ok(best)
}
