//! Small classifier family and the mini-batch SGD training loop.
//!
//! Models are linear or 1-2 hidden-layer MLPs over `f64`. The training loop
//! delegates per-batch loss construction to a [`LossPlugin`]: the plugin may
//! substitute perturbed features, add per-sample logit offsets, and supply
//! soft targets, but it never touches model parameters directly — only
//! gradients flow back.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compensation::CompensationState;
use crate::dataset::{Dataset, Split};
use crate::numerics::{self, DenseMatrix};
use crate::{mathx, Error, Result};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => mathx::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One dense layer: `z = W a + b` with `W` stored out-by-in.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

/// A feed-forward classifier producing one logit per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    activation: Activation,
    input_dim: usize,
    classes: usize,
}

impl Model {
    /// Builds a model with the given hidden widths (empty = linear) and
    /// Glorot-uniform initial weights drawn from `seed`.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || classes == 0 {
            return Err(Error::InvalidConfig(
                "model needs at least one input feature and one class".into(),
            ));
        }
        if hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("zero-width hidden layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = mathx::sqrt(6.0 / (fan_in + fan_out) as f64);
            let mut weights = DenseMatrix::zeros(fan_out, fan_in);
            for v in weights.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self {
            layers,
            activation,
            input_dim,
            classes,
        })
    }

    /// Builds a model from explicit layers, validating shape chaining.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "model needs at least one layer".into(),
            ));
        }
        for layer in &layers {
            if layer.weights.rows() != layer.bias.len() {
                return Err(Error::Shape(format!(
                    "layer has {} weight rows but {} biases",
                    layer.weights.rows(),
                    layer.bias.len()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].weights.rows() != pair[1].weights.cols() {
                return Err(Error::Shape(format!(
                    "layer output width {} feeds layer input width {}",
                    pair[0].weights.rows(),
                    pair[1].weights.cols()
                )));
            }
        }
        let input_dim = layers[0].weights.cols();
        let classes = layers.last().expect("non-empty").weights.rows();
        Ok(Self {
            layers,
            activation,
            input_dim,
            classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Logits for a batch of feature rows, shape `N x classes`.
    pub fn forward(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_trace(features)?.0)
    }

    /// Forward pass that keeps per-layer activations for backprop.
    /// The trace holds `a_0 = input` through `a_L = logits`.
    pub(crate) fn forward_trace(&self, features: &DenseMatrix) -> Result<(DenseMatrix, Trace)> {
        if features.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.input_dim,
                features.cols()
            )));
        }
        let mut acts: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(features.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let last = k + 1 == self.layers.len();
            let input = acts.last().expect("non-empty trace");
            let mut out = DenseMatrix::zeros(input.rows(), layer.bias.len());
            for i in 0..input.rows() {
                let row = input.row(i);
                for j in 0..layer.bias.len() {
                    let mut z = layer.bias[j];
                    let w = layer.weights.row(j);
                    for (wd, xd) in w.iter().zip(row) {
                        z += wd * xd;
                    }
                    out.set(i, j, if last { z } else { self.activation.apply(z) });
                }
            }
            acts.push(out);
        }
        let logits = acts.last().expect("non-empty trace").clone();
        Ok((logits, Trace { acts }))
    }

    /// Activations of the last hidden layer (the input itself for a linear
    /// model); used to estimate per-class feature covariances.
    pub fn hidden_features(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        let (_, trace) = self.forward_trace(features)?;
        let idx = trace.acts.len() - 2;
        Ok(trace.acts[idx].clone())
    }

    /// The final layer's weight rows, one per class.
    pub fn output_weights(&self) -> &DenseMatrix {
        &self.layers.last().expect("at least one layer").weights
    }

    /// Parameter gradients given `d loss / d logits` for a traced batch.
    pub(crate) fn backward(&self, trace: &Trace, grad_logits: &DenseMatrix) -> ParamGrads {
        let n = grad_logits.rows();
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                bias: vec![0.0; l.bias.len()],
            })
            .collect();

        // delta = d loss / d pre-activation of the current layer.
        let mut delta = grad_logits.clone();
        for k in (0..self.layers.len()).rev() {
            let input = &trace.acts[k];
            let grad = &mut grads[k];
            for i in 0..n {
                let d = delta.row(i);
                let x = input.row(i);
                for j in 0..d.len() {
                    grad.bias[j] += d[j];
                    let wrow = grad.weights.row_mut(j);
                    for (wd, xd) in wrow.iter_mut().zip(x) {
                        *wd += d[j] * xd;
                    }
                }
            }
            if k > 0 {
                let layer = &self.layers[k];
                let mut prev = DenseMatrix::zeros(n, layer.weights.cols());
                for i in 0..n {
                    let d = delta.row(i);
                    let a = trace.acts[k].row(i);
                    for c in 0..layer.weights.cols() {
                        let mut s = 0.0;
                        for (j, dj) in d.iter().enumerate() {
                            s += dj * layer.weights.get(j, c);
                        }
                        prev.set(i, c, s * self.activation.derivative_from_output(a[c]));
                    }
                }
                delta = prev;
            }
        }
        ParamGrads { layers: grads }
    }

    /// Gradient of the batch loss with respect to the input features,
    /// given `d loss / d logits`. Used by adversarial perturbations.
    pub fn input_gradients(
        &self,
        features: &DenseMatrix,
        grad_logits: &DenseMatrix,
    ) -> Result<DenseMatrix> {
        let (_, trace) = self.forward_trace(features)?;
        if grad_logits.rows() != features.rows() || grad_logits.cols() != self.classes {
            return Err(Error::Shape(format!(
                "logit gradient is {}x{}, expected {}x{}",
                grad_logits.rows(),
                grad_logits.cols(),
                features.rows(),
                self.classes
            )));
        }
        let n = features.rows();
        let mut delta = grad_logits.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let mut prev = DenseMatrix::zeros(n, layer.weights.cols());
            for i in 0..n {
                let d = delta.row(i);
                for c in 0..layer.weights.cols() {
                    let mut s = 0.0;
                    for (j, dj) in d.iter().enumerate() {
                        s += dj * layer.weights.get(j, c);
                    }
                    if k > 0 {
                        let a = trace.acts[k].get(i, c);
                        s *= self.activation.derivative_from_output(a);
                    }
                    prev.set(i, c, s);
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// One plain gradient step `w -= lr * g`, without momentum.
    pub(crate) fn apply_gradients(&mut self, grads: &ParamGrads, lr: f64) {
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, g) in layer.weights.data_mut().iter_mut().zip(grad.weights.data()) {
                *w -= lr * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                *b -= lr * g;
            }
        }
    }

    fn sgd_step(&mut self, grads: &ParamGrads, velocity: &mut ParamGrads, lr: f64, momentum: f64) {
        for ((layer, grad), vel) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut velocity.layers)
        {
            for ((w, g), v) in layer
                .weights
                .data_mut()
                .iter_mut()
                .zip(grad.weights.data())
                .zip(vel.weights.data_mut())
            {
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
            for ((b, g), v) in layer
                .bias
                .iter_mut()
                .zip(&grad.bias)
                .zip(vel.bias.iter_mut())
            {
                *v = momentum * *v + g;
                *b -= lr * *v;
            }
        }
    }
}

pub(crate) struct Trace {
    acts: Vec<DenseMatrix>,
}

/// Per-layer parameter gradients (same shapes as the model).
#[derive(Debug, Clone)]
pub struct ParamGrads {
    layers: Vec<Layer>,
}

impl ParamGrads {
    fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DenseMatrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }
}

/// Training hyper-parameters.
///
/// The compensation-related fields (`lambda`, `compensation_lr`, `eta`,
/// `eps2`, `pro`) are read by the plugins that need them and echoed into
/// reports; plain cross entropy ignores them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop once validation accuracy has not improved by more than
    /// [`EARLY_STOP_MIN_DELTA`] for [`EARLY_STOP_PATIENCE`] consecutive
    /// epochs. Requires a non-empty validation split.
    pub early_stop: bool,
    /// l1 weight for LogComp.
    pub lambda: f64,
    /// Learning rate for the trainable compensation terms.
    pub compensation_lr: f64,
    /// Positive-compensation bound (epsilon_1) for MixComp.
    pub eta: f64,
    /// Adversarial feature bound (epsilon_2) for MixComp / PGD training.
    pub eps2: f64,
    /// Percent of highest losses routed to the positive branch of MixComp.
    pub pro: f64,
    /// Inner ascent steps for adversarial perturbations.
    pub pgd_steps: usize,
    /// Inner ascent step size; 0 picks `2.5 * eps / steps`.
    pub pgd_step_size: f64,
}

/// Accuracy improvement below this margin counts as "stable".
pub const EARLY_STOP_MIN_DELTA: f64 = 0.001;
/// Number of stable epochs tolerated before stopping.
pub const EARLY_STOP_PATIENCE: usize = 5;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            shuffle: true,
            early_stop: false,
            lambda: 0.25,
            compensation_lr: 3.0,
            eta: 2.0,
            eps2: 0.0,
            pro: 15.0,
            pgd_steps: 5,
            pgd_step_size: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=100.0).contains(&self.pro) {
            return Err(Error::InvalidConfig(format!(
                "pro {} outside [0, 100]",
                self.pro
            )));
        }
        if self.eps2 < 0.0 || self.eta < 0.0 || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(
                "eta, eps2 and lambda must be non-negative".into(),
            ));
        }
        if self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// One epoch of training metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-sample mean of the plugin loss over the epoch.
    pub train_loss: f64,
    /// Accuracy on the validation split, NaN when there is none.
    pub val_accuracy: f64,
    /// Mean l1 norm of the per-sample logit compensation over train rows.
    pub mean_comp_norm: f64,
    /// Max l1 norm of the per-sample logit compensation over train rows.
    pub max_comp_norm: f64,
}

/// Per-epoch training records, one per completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

/// Final model, history, and the compensation state left by the plugin.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
    pub state: CompensationState,
}

/// What a plugin sees for one mini-batch.
pub struct BatchCtx<'a> {
    pub model: &'a Model,
    /// Feature rows of this batch, in batch order.
    pub features: &'a DenseMatrix,
    /// Observed labels, in batch order.
    pub labels: &'a [usize],
    /// Dataset-global sample ids, in batch order.
    pub sample_ids: &'a [usize],
    pub epoch: usize,
}

/// Loss construction for one mini-batch.
///
/// The trainer forwards `features` (or the batch features when `None`),
/// adds `logit_offset` to the logits, and applies cross entropy against
/// `targets`. Target rows must each sum to one.
pub struct BatchPlan {
    pub features: Option<DenseMatrix>,
    pub logit_offset: Option<DenseMatrix>,
    pub targets: DenseMatrix,
    /// Loss bookkeeping with no gradient (e.g. a regularizer handled by a
    /// proximal step), already scaled per sample.
    pub extra_loss: f64,
}

impl BatchPlan {
    /// Plain cross entropy against one-hot labels.
    pub fn one_hot(labels: &[usize], classes: usize) -> Self {
        let mut targets = DenseMatrix::zeros(labels.len(), classes);
        for (i, &y) in labels.iter().enumerate() {
            targets.set(i, y, 1.0);
        }
        Self {
            features: None,
            logit_offset: None,
            targets,
            extra_loss: 0.0,
        }
    }
}

/// Batch results handed back to the plugin after the forward pass.
pub struct AfterBatch<'a> {
    /// Logits including any plugin offset.
    pub effective_logits: &'a DenseMatrix,
    /// Softmax rows of the effective logits.
    pub probs: &'a DenseMatrix,
    pub labels: &'a [usize],
    pub sample_ids: &'a [usize],
    pub epoch: usize,
}

/// A named loss with hooks into the training loop.
///
/// Plugins own their compensation state; they receive the model read-only.
pub trait LossPlugin {
    fn name(&self) -> &'static str;

    fn on_train_start(&mut self, model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<()> {
        let (_, _, _) = (model, data, cfg);
        Ok(())
    }

    fn on_epoch_start(&mut self, epoch: usize, model: &Model, data: &Dataset) -> Result<()> {
        let (_, _, _) = (epoch, model, data);
        Ok(())
    }

    /// Builds the loss for one batch; called before the trainer's forward
    /// pass. Inner optimizations (PGD, one-step compensation) happen here.
    fn prepare_batch(&mut self, ctx: &BatchCtx<'_>) -> Result<BatchPlan>;

    /// Observes the forward results; trainable compensation state updates
    /// (e.g. the proximal step on per-sample logit terms) happen here.
    fn after_batch(&mut self, result: &AfterBatch<'_>) -> Result<()> {
        let _ = result;
        Ok(())
    }

    fn on_epoch_end(&mut self, epoch: usize, model: &Model, data: &Dataset) -> Result<()> {
        let (_, _, _) = (epoch, model, data);
        Ok(())
    }

    /// Mean and max l1 norm of per-sample logit compensation over the given
    /// rows; (0, 0) for stateless plugins.
    fn compensation_norms(&self, indices: &[usize]) -> (f64, f64) {
        let _ = indices;
        (0.0, 0.0)
    }

    /// Hands the accumulated compensation state to the caller.
    fn take_state(&mut self) -> CompensationState {
        CompensationState::empty()
    }
}

/// Mini-batch SGD with momentum, seeded shuffling, and pluggable losses.
///
/// Batches are drawn from the train split (all rows when the dataset has no
/// split tags beyond the default); the final short batch is kept. Returns a
/// [`Error::TrainingDiverged`] naming the epoch and batch if the loss or a
/// parameter stops being finite.
pub fn train(
    model: Model,
    data: &Dataset,
    cfg: &TrainConfig,
    plugin: &mut dyn LossPlugin,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if data.labels.iter().any(|&l| l >= data.classes) {
        return Err(Error::InvalidInput("label out of class range".into()));
    }
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::InvalidSplit("train split is empty".into()));
    }
    let val_idx = data.indices(Split::Val);

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = ParamGrads::zeros_like(&model);
    let mut history = TrainHistory::default();

    plugin.on_train_start(&model, data, cfg)?;

    let mut best_val = f64::NEG_INFINITY;
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.epochs {
        plugin.on_epoch_start(epoch, &model, data)?;

        let mut order = train_idx.clone();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        for (batch_no, batch_ids) in order.chunks(cfg.batch_size).enumerate() {
            let (features, labels) = data.gather(batch_ids)?;
            let ctx = BatchCtx {
                model: &model,
                features: &features,
                labels: &labels,
                sample_ids: batch_ids,
                epoch,
            };
            let plan = plugin.prepare_batch(&ctx)?;
            let fwd_features = plan.features.as_ref().unwrap_or(&features);
            let (mut logits, trace) = model.forward_trace(fwd_features)?;
            if let Some(offset) = &plan.logit_offset {
                if offset.rows() != logits.rows() || offset.cols() != logits.cols() {
                    return Err(Error::Shape("logit offset shape mismatch".into()));
                }
                for (l, o) in logits.data_mut().iter_mut().zip(offset.data()) {
                    *l += o;
                }
            }
            if plan.targets.rows() != logits.rows() || plan.targets.cols() != logits.cols() {
                return Err(Error::Shape("target shape mismatch".into()));
            }

            let b = logits.rows();
            let mut probs = DenseMatrix::zeros(b, logits.cols());
            let mut batch_loss = plan.extra_loss;
            let mut grad = DenseMatrix::zeros(b, logits.cols());
            for i in 0..b {
                let p = numerics::softmax_unchecked(logits.row(i));
                batch_loss += numerics::cross_entropy_unchecked(&p, plan.targets.row(i)) / b as f64;
                for (c, &pc) in p.iter().enumerate() {
                    probs.set(i, c, pc);
                    grad.set(i, c, (pc - plan.targets.get(i, c)) / b as f64);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_no,
                    message: String::from("non-finite batch loss"),
                });
            }

            let grads = model.backward(&trace, &grad);
            model.sgd_step(&grads, &mut velocity, cfg.learning_rate, cfg.momentum);
            if !model.params_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_no,
                    message: String::from("non-finite parameter after update"),
                });
            }

            plugin.after_batch(&AfterBatch {
                effective_logits: &logits,
                probs: &probs,
                labels: &labels,
                sample_ids: batch_ids,
                epoch,
            })?;

            loss_sum += batch_loss * b as f64;
        }

        let val_accuracy = if val_idx.is_empty() {
            f64::NAN
        } else {
            evaluate_indices(&model, data, &val_idx)?
        };
        let (mean_comp_norm, max_comp_norm) = plugin.compensation_norms(&train_idx);
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_accuracy,
            mean_comp_norm,
            max_comp_norm,
        });
        plugin.on_epoch_end(epoch, &model, data)?;

        if cfg.early_stop && val_accuracy.is_finite() {
            if val_accuracy > best_val + EARLY_STOP_MIN_DELTA {
                best_val = val_accuracy;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= EARLY_STOP_PATIENCE {
                    break;
                }
            }
        }
    }

    Ok(TrainOutcome {
        model,
        history,
        state: plugin.take_state(),
    })
}

/// Fraction of argmax-correct predictions over the whole dataset.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    evaluate_indices(model, data, &all)
}

/// Fraction of argmax-correct predictions over one split.
pub fn evaluate_split(model: &Model, data: &Dataset, split: Split) -> Result<f64> {
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::InvalidSplit(format!("split {split:?} is empty")));
    }
    evaluate_indices(model, data, &idx)
}

fn evaluate_indices(model: &Model, data: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("evaluate on empty data".into()));
    }
    let (features, labels) = data.gather(indices)?;
    let logits = model.forward(&features)?;
    let correct = (0..logits.rows())
        .filter(|&i| numerics::argmax(logits.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / indices.len() as f64)
}
