//! The TOML experiment schema and the method registry.

use std::path::Path;

use complearn_core::baselines::{BootstrapMode, ConfidenceMode, SplSchedule};
use complearn_core::model::{Activation, LossPlugin, TrainConfig};
use complearn_core::noise::{NoiseScheme, NoiseSpec};
use complearn_core::plugins::{
    AdversarialLabelSmoothingPlugin, BootstrappingPlugin, CePlugin, LabelSmoothingPlugin,
    LogCompPlugin, LogitAdjustmentPlugin, MixBootstrappingPlugin, MixCompPlugin, PgdAtPlugin,
    SelfPacedLogCompPlugin,
};
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

/// Every method name the runner accepts.
pub const METHOD_NAMES: &[&str] = &[
    "ce_base",
    "logcomp",
    "mixcomp",
    "bootstrapping_soft",
    "bootstrapping_hard",
    "label_smoothing",
    "adversarial_label_smoothing",
    "online_label_smoothing",
    "mixbootstrapping",
    "pgd_at",
    "logit_adjustment",
    "meta_logit_adjustment",
    "self_paced_logcomp",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub method: MethodConfig,
    #[serde(default)]
    pub run: RunConfig,
}

/// Multi-method variant used by `compare`: one shared setup, several
/// `[[methods]]` tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// "synthetic" or "csv".
    pub source: String,
    /// CSV path (csv source).
    pub path: Option<String>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default = "default_spread")]
    pub center_spread: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub outlier_fraction: f64,
    /// Per-class counts for imbalanced blobs; overrides `n_per_class`.
    pub class_counts: Option<Vec<usize>>,
    /// Train/val/test fractions.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Exact train/val counts; overrides `split` when set.
    pub split_counts: Option<[usize; 2]>,
}

fn default_label_column() -> String {
    "label".into()
}
fn default_n_per_class() -> usize {
    500
}
fn default_classes() -> usize {
    4
}
fn default_dims() -> usize {
    2
}
fn default_spread() -> f64 {
    6.0
}
fn default_sigma() -> f64 {
    1.0
}
fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// "none", "random", "pair", "symmetric_prefix", "asymmetric_prefix".
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub rate: f64,
    /// Random scheme only: draw the new label from the other C-1 classes.
    #[serde(default)]
    pub exclude_original: bool,
}

fn default_scheme() -> String {
    "none".into()
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            rate: 0.0,
            exclude_original: false,
        }
    }
}

impl NoiseConfig {
    /// Noise spec for one run seed; `None` when no noise is configured.
    pub fn spec(&self, seed: u64) -> Result<Option<NoiseSpec>> {
        let scheme = match self.scheme.as_str() {
            "none" => return Ok(None),
            "random" => NoiseScheme::Random,
            "pair" => NoiseScheme::Pair,
            "symmetric_prefix" => NoiseScheme::SymmetricPrefix,
            "asymmetric_prefix" => NoiseScheme::AsymmetricPrefix,
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown noise scheme '{other}'"
                )))
            }
        };
        Ok(Some(NoiseSpec {
            scheme,
            rate: self.rate,
            seed,
            exclude_original: self.exclude_original,
        }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}
fn default_activation() -> String {
    "tanh".into()
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

impl ModelConfig {
    pub fn activation(&self) -> Result<Activation> {
        match self.activation.as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(HarnessError::Config(format!(
                "unknown activation '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    #[serde(default)]
    pub early_stop: bool,
}

fn default_epochs() -> usize {
    60
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            momentum: default_momentum(),
            shuffle: true,
            early_stop: false,
        }
    }
}

/// A method name with its hyper-parameters. Defaults follow the search
/// grids the trend experiments were tuned on; methods read only the
/// fields they use.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    /// l1 weight (LogComp) or target mix (Bootstrapping/smoothing).
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_comp_lr")]
    pub compensation_lr: f64,
    /// Positive-compensation bound (epsilon_1).
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Adversarial feature bound (epsilon_2).
    #[serde(default)]
    pub eps2: f64,
    /// Percent of highest losses in the positive branch.
    #[serde(default = "default_pro")]
    pub pro: f64,
    #[serde(default = "default_pgd_steps")]
    pub pgd_steps: usize,
    #[serde(default)]
    pub pgd_step_size: f64,
    /// mixBootstrapping mix weights.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Logit-adjustment strength.
    #[serde(default = "default_tau_la")]
    pub tau_la: f64,
    /// Meta variant: outer steps and inner epochs per step.
    #[serde(default = "default_meta_steps")]
    pub meta_steps: usize,
    #[serde(default = "default_inner_epochs")]
    pub inner_epochs: usize,
    /// Self-paced schedule: threshold at epoch 0 and per-epoch growth.
    #[serde(default = "default_spl_start")]
    pub spl_tau_start: f64,
    #[serde(default = "default_spl_growth")]
    pub spl_tau_growth: f64,
    #[serde(default = "default_spl_margin")]
    pub spl_eta_margin: f64,
}

fn default_lambda() -> f64 {
    0.25
}
fn default_comp_lr() -> f64 {
    6.0
}
fn default_eta() -> f64 {
    3.0
}
fn default_pro() -> f64 {
    35.0
}
fn default_pgd_steps() -> usize {
    5
}
fn default_alpha() -> f64 {
    0.35
}
fn default_beta() -> f64 {
    0.5
}
fn default_tau_la() -> f64 {
    1.0
}
fn default_meta_steps() -> usize {
    10
}
fn default_inner_epochs() -> usize {
    5
}
fn default_spl_start() -> f64 {
    0.25
}
fn default_spl_growth() -> f64 {
    0.25
}
fn default_spl_margin() -> f64 {
    10.0
}

impl MethodConfig {
    pub fn named(name: &str) -> Self {
        let toml = format!("name = \"{name}\"");
        toml::from_str(&toml).expect("defaults are valid")
    }

    /// Builds the plugin for this method. `meta_logit_adjustment` is
    /// orchestrated by the runner instead and has no standalone plugin.
    pub fn build_plugin(&self, epochs: usize) -> Result<Box<dyn LossPlugin>> {
        let plugin: Box<dyn LossPlugin> = match self.name.as_str() {
            "ce_base" => Box::new(CePlugin),
            "logcomp" => Box::new(LogCompPlugin::new(self.lambda, self.compensation_lr)),
            "mixcomp" => Box::new(MixCompPlugin::new(
                self.eta,
                self.eps2,
                self.pro,
                self.pgd_steps,
                self.pgd_step_size,
            )),
            "bootstrapping_soft" => {
                Box::new(BootstrappingPlugin::new(self.lambda, BootstrapMode::Soft))
            }
            "bootstrapping_hard" => {
                Box::new(BootstrappingPlugin::new(self.lambda, BootstrapMode::Hard))
            }
            "label_smoothing" => Box::new(LabelSmoothingPlugin::new(self.lambda)),
            "adversarial_label_smoothing" => {
                Box::new(AdversarialLabelSmoothingPlugin::new(self.lambda))
            }
            "online_label_smoothing" => {
                Box::new(MixBootstrappingPlugin::online_label_smoothing(self.alpha))
            }
            "mixbootstrapping" => Box::new(MixBootstrappingPlugin::new(
                self.alpha,
                self.beta,
                ConfidenceMode::Uniform,
            )),
            "pgd_at" => Box::new(PgdAtPlugin::new(
                self.eps2,
                self.pgd_steps,
                self.pgd_step_size,
            )),
            "logit_adjustment" => Box::new(LogitAdjustmentPlugin::new(self.tau_la)),
            "self_paced_logcomp" => {
                let thresholds: Vec<f64> = (0..epochs.max(1))
                    .map(|e| self.spl_tau_start + e as f64 * self.spl_tau_growth)
                    .collect();
                let schedule = SplSchedule::new(thresholds).map_err(HarnessError::Core)?;
                Box::new(SelfPacedLogCompPlugin::new(schedule, self.spl_eta_margin))
            }
            "meta_logit_adjustment" => {
                return Err(HarnessError::Config(
                    "meta_logit_adjustment is run by the experiment runner, not as a plugin".into(),
                ))
            }
            other => return Err(HarnessError::UnknownMethod(other.into())),
        };
        Ok(plugin)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: Option<String>,
}

fn default_repeats() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            repeats: default_repeats(),
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(&self.dataset, &self.noise, &self.run)?;
        validate_method(&self.method)?;
        Ok(())
    }

    /// Core training config for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        train_config_from(&self.train, &self.method, seed)
    }
}

impl CompareConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        validate_common(&cfg.dataset, &cfg.noise, &cfg.run)?;
        if cfg.methods.is_empty() {
            return Err(HarnessError::Config("no methods to compare".into()));
        }
        for m in &cfg.methods {
            validate_method(m)?;
        }
        Ok(cfg)
    }

    /// The single-method view of one entry.
    pub fn experiment_for(&self, method: &MethodConfig) -> ExperimentConfig {
        ExperimentConfig {
            dataset: self.dataset.clone(),
            noise: self.noise.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            method: method.clone(),
            run: self.run.clone(),
        }
    }
}

pub(crate) fn train_config_from(
    train: &TrainSection,
    method: &MethodConfig,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        epochs: train.epochs,
        batch_size: train.batch_size,
        learning_rate: train.learning_rate,
        momentum: train.momentum,
        seed,
        shuffle: train.shuffle,
        early_stop: train.early_stop,
        lambda: method.lambda,
        compensation_lr: method.compensation_lr,
        eta: method.eta,
        eps2: method.eps2,
        pro: method.pro,
        pgd_steps: method.pgd_steps,
        pgd_step_size: method.pgd_step_size,
    }
}

fn validate_common(dataset: &DatasetConfig, noise: &NoiseConfig, run: &RunConfig) -> Result<()> {
    match dataset.source.as_str() {
        "synthetic" => {}
        "csv" => {
            if dataset.path.is_none() {
                return Err(HarnessError::Config(
                    "csv datasets need dataset.path".into(),
                ));
            }
        }
        other => {
            return Err(HarnessError::Config(format!(
                "unknown dataset source '{other}' (expected synthetic or csv)"
            )))
        }
    }
    let [t, v, e] = dataset.split;
    if t < 0.0 || v < 0.0 || e < 0.0 || (t + v + e - 1.0).abs() > 1e-9 {
        return Err(HarnessError::Config(
            "dataset.split fractions must be non-negative and sum to 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&noise.rate) {
        return Err(HarnessError::Config("noise.rate outside [0, 1]".into()));
    }
    if run.repeats < 1 {
        return Err(HarnessError::Config(
            "run.repeats must be at least 1".into(),
        ));
    }
    Ok(())
}

fn validate_method(method: &MethodConfig) -> Result<()> {
    if !METHOD_NAMES.contains(&method.name.as_str()) {
        return Err(HarnessError::UnknownMethod(method.name.clone()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [dataset]
            source = "synthetic"

            [method]
            name = "logcomp"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset.classes, 4);
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.method.lambda, 0.25);
        assert_eq!(cfg.run.repeats, 1);
    }

    #[test]
    fn unknown_method_is_rejected() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            [dataset]
            source = "synthetic"

            [method]
            name = "made_up"
            "#,
        )
        .unwrap();
        assert!(matches!(
            cfg.validate(),
            Err(HarnessError::UnknownMethod(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let parsed: std::result::Result<ExperimentConfig, _> = toml::from_str(
            r#"
            [dataset]
            source = "synthetic"
            typo_field = 3

            [method]
            name = "ce_base"
            "#,
        );
        assert!(parsed.is_err());
    }

    #[test]
    fn every_registry_method_builds() {
        for name in METHOD_NAMES {
            let method = MethodConfig::named(name);
            let built = method.build_plugin(10);
            if *name == "meta_logit_adjustment" {
                assert!(built.is_err());
            } else {
                assert!(!built.unwrap().name().is_empty());
            }
        }
    }
}
