//! Seeded experiment orchestration: data generation or loading, noise
//! injection on the train split, training with the selected method, clean
//! test evaluation, and report/artifact emission.

use std::path::{Path, PathBuf};

use complearn_core::baselines::{meta_logit_adjust, CategoryPriors, PerClassAdjustPlugin};
use complearn_core::dataset::{make_blobs_with_counts, Dataset, Split};
use complearn_core::model::{evaluate_split, train, Model, TrainOutcome};
use complearn_core::noise::inject_noise;
use serde::Serialize;

use crate::config::{CompareConfig, ExperimentConfig, MethodConfig};
use crate::io;
use crate::{HarnessError, Result};

/// Outcome of one seeded run.
#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub test_accuracy: f64,
    pub final_train_loss: f64,
    pub epochs_run: usize,
}

/// Top-ranked samples by compensation norm for one seed.
#[derive(Debug, Clone, Serialize)]
pub struct SeedAudit {
    pub seed: u64,
    /// `(sample_id, l1_norm)` pairs, largest first.
    pub top_by_l1_norm: Vec<(usize, f64)>,
    /// Equal-width histogram of train-row l1 norms: bin edges and counts.
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<usize>,
}

/// Aggregated experiment results; serialized as the JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub method: String,
    pub repeats: usize,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Present for methods with per-sample compensation state.
    pub audit: Vec<SeedAudit>,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Deterministic sub-seeds for one repeat.
#[derive(Debug, Clone, Copy)]
pub struct SeedPlan {
    pub data: u64,
    pub split: u64,
    pub noise: u64,
    pub model: u64,
    pub train: u64,
}

impl SeedPlan {
    pub fn for_run(base: u64, repeat: u64) -> Self {
        let s = base.wrapping_add(repeat).wrapping_mul(10);
        Self {
            data: s.wrapping_add(1),
            split: s.wrapping_add(2),
            noise: s.wrapping_add(3),
            model: s.wrapping_add(4),
            train: s.wrapping_add(5),
        }
    }
}

/// Builds the dataset for one repeat: generate or load, split, and inject
/// noise into the train split only (validation and test stay clean).
pub fn prepare_dataset(cfg: &ExperimentConfig, seeds: SeedPlan) -> Result<Dataset> {
    let ds = &cfg.dataset;
    let mut data = match ds.source.as_str() {
        "synthetic" => {
            let counts = match &ds.class_counts {
                Some(counts) => counts.clone(),
                None => vec![ds.n_per_class; ds.classes],
            };
            make_blobs_with_counts(
                &counts,
                ds.dims,
                ds.center_spread,
                ds.noise_sigma,
                ds.outlier_fraction,
                seeds.data,
            )?
        }
        "csv" => {
            let path = ds.path.as_ref().expect("validated");
            let (data, warnings) = io::load_dataset_csv(Path::new(path), &ds.label_column)?;
            for w in warnings {
                eprintln!("warning: {path}: {w}");
            }
            data
        }
        _ => unreachable!("validated"),
    };

    match ds.split_counts {
        Some([n_train, n_val]) => data.assign_split_counts(n_train, n_val, seeds.split)?,
        None => data.assign_splits((ds.split[0], ds.split[1], ds.split[2]), seeds.split)?,
    }

    if let Some(spec) = cfg.noise.spec(seeds.noise)? {
        let train_idx = data.indices(Split::Train);
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
        let (noisy, mask) = inject_noise(&train_labels, data.classes, &spec)?;
        data.true_labels = Some(data.labels.clone());
        let mut full_mask = vec![false; data.len()];
        for (slot, &i) in train_idx.iter().enumerate() {
            data.labels[i] = noisy[slot];
            full_mask[i] = mask[slot];
        }
        data.noise_mask = Some(full_mask);
    }
    Ok(data)
}

/// Trains one method on one prepared dataset.
pub fn train_once(cfg: &ExperimentConfig, data: &Dataset, seeds: SeedPlan) -> Result<TrainOutcome> {
    let model = Model::new(
        data.dim(),
        &cfg.model.hidden,
        data.classes,
        cfg.model.activation()?,
        seeds.model,
    )?;
    let train_cfg = cfg.train_config(seeds.train);

    if cfg.method.name == "meta_logit_adjustment" {
        return run_meta(cfg, data, model, &train_cfg);
    }

    let mut plugin = cfg.method.build_plugin(cfg.train.epochs)?;
    Ok(train(model, data, &train_cfg, plugin.as_mut())?)
}

/// Meta logit adjustment: tunes per-class adjustment strengths on the
/// validation split, then trains the final model with those strengths.
fn run_meta(
    cfg: &ExperimentConfig,
    data: &Dataset,
    model: Model,
    train_cfg: &complearn_core::model::TrainConfig,
) -> Result<TrainOutcome> {
    let classes = data.classes;
    let init_tau = vec![cfg.method.tau_la; classes];
    let meta = meta_logit_adjust(
        data,
        &model,
        &init_tau,
        cfg.method.meta_steps,
        cfg.method.inner_epochs,
        train_cfg,
    )?;

    let train_idx = data.indices(Split::Train);
    let labels: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    let priors = CategoryPriors::from_labels(&labels, classes)?;
    let log_pi: Vec<f64> = priors.values().iter().map(|p| p.ln()).collect();
    let mut plugin = PerClassAdjustPlugin::new(&meta.tau, &log_pi);
    Ok(train(model, data, train_cfg, &mut plugin)?)
}

/// Runs every repeat of one experiment and writes per-seed artifacts plus
/// the JSON report into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let method = cfg.method.name.clone();
    let mut per_seed = Vec::new();
    let mut audit = Vec::new();
    let mut artifacts = Vec::new();

    for repeat in 0..cfg.run.repeats as u64 {
        let logical_seed = cfg.run.seed.wrapping_add(repeat);
        let seeds = SeedPlan::for_run(cfg.run.seed, repeat);
        let data = prepare_dataset(cfg, seeds)?;
        if data.indices(Split::Test).is_empty() {
            return Err(HarnessError::Data(
                "test split is empty; adjust dataset.split".into(),
            ));
        }
        let outcome = train_once(cfg, &data, seeds)?;
        let test_accuracy = evaluate_split(&outcome.model, &data, Split::Test)?;

        let history_name = format!("history_{method}_seed{logical_seed}.csv");
        io::write_history_csv(&out_dir.join(&history_name), &outcome.history)?;
        artifacts.push(history_name);

        if outcome.state.samples > 0 {
            let state_name = format!("state_{method}_seed{logical_seed}.csv");
            let train_idx = data.indices(Split::Train);
            io::write_state_csv(&out_dir.join(&state_name), &outcome.state, &train_idx)?;
            artifacts.push(state_name);

            let ranked = complearn_core::audit::audit_rank(&outcome.state, &train_idx, 10)?;
            let histogram = complearn_core::audit::norm_histogram(&outcome.state, &train_idx, 20)?;
            audit.push(SeedAudit {
                seed: logical_seed,
                top_by_l1_norm: ranked.iter().map(|e| (e.sample_id, e.l1_norm)).collect(),
                histogram_edges: histogram.edges,
                histogram_counts: histogram.counts,
            });
        }

        // Logit adjustment also reports how it shifted each category's
        // loss relative to plain cross entropy.
        if method == "logit_adjustment" {
            let train_idx = data.indices(Split::Train);
            let labels: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
            let priors = CategoryPriors::from_labels(&labels, data.classes)?;
            let increments = complearn_core::baselines::category_loss_increments(
                &outcome.model,
                &data,
                &priors,
                cfg.method.tau_la,
            )?;
            let name = format!("increments_{method}_seed{logical_seed}.csv");
            io::write_increments_csv(&out_dir.join(&name), &increments)?;
            artifacts.push(name);
        }

        per_seed.push(SeedOutcome {
            seed: logical_seed,
            test_accuracy,
            final_train_loss: outcome
                .history
                .records
                .last()
                .map_or(f64::NAN, |r| r.train_loss),
            epochs_run: outcome.history.records.len(),
        });
    }

    let accs: Vec<f64> = per_seed.iter().map(|s| s.test_accuracy).collect();
    let (mean_accuracy, std_accuracy) = mean_std(&accs);
    artifacts.sort();
    let report = ExperimentReport {
        method: method.clone(),
        repeats: cfg.run.repeats,
        per_seed,
        mean_accuracy,
        std_accuracy,
        audit,
        artifacts,
        config: cfg.clone(),
    };

    let report_path = out_dir.join(format!("report_{method}.json"));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| HarnessError::Config(format!("report serialization: {e}")))?;
    write_text(&report_path, &format!("{json}\n"))?;
    Ok(report)
}

/// One row of a method comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub per_seed: Vec<f64>,
}

/// Runs each method on identical data/seeds and writes `compare.csv`.
pub fn run_compare(cfg: &CompareConfig, out_dir: &Path) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for method in &cfg.methods {
        let experiment = cfg.experiment_for(method);
        let report = run_experiment(&experiment, out_dir)?;
        rows.push(CompareRow {
            method: method.name.clone(),
            mean_accuracy: report.mean_accuracy,
            std_accuracy: report.std_accuracy,
            per_seed: report.per_seed.iter().map(|s| s.test_accuracy).collect(),
        });
    }

    let mut text = String::from("method,mean_accuracy,std_accuracy,per_seed\n");
    for row in &rows {
        let per_seed = row
            .per_seed
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.method, row.mean_accuracy, row.std_accuracy, per_seed
        ));
    }
    write_text(&out_dir.join("compare.csv"), &text)?;
    Ok(rows)
}

/// Default hyper-parameter search sets; candidates are selected on the
/// clean validation split.
pub mod grids {
    pub const LAMBDA: &[f64] = &[0.25, 0.35];
    pub const COMPENSATION_LR: &[f64] = &[1.5, 3.0, 4.5, 6.0];
    pub const ETA: &[f64] = &[0.5, 1.5, 2.0, 3.0, 4.0, 5.0];
    pub const PRO: &[f64] = &[0.0, 5.0, 7.5, 15.0, 25.0, 35.0, 45.0, 50.0];
}

/// The default candidate grid for a method (empty when a method has no
/// searched hyper-parameters).
pub fn default_grid(base: &MethodConfig) -> Vec<MethodConfig> {
    let mut out = Vec::new();
    match base.name.as_str() {
        "logcomp" => {
            for &lambda in grids::LAMBDA {
                for &lr in grids::COMPENSATION_LR {
                    let mut m = base.clone();
                    m.lambda = lambda;
                    m.compensation_lr = lr;
                    out.push(m);
                }
            }
        }
        "mixcomp" => {
            for &eta in grids::ETA {
                for &pro in grids::PRO {
                    let mut m = base.clone();
                    m.eta = eta;
                    m.pro = pro;
                    out.push(m);
                }
            }
        }
        _ => {}
    }
    out
}

/// Trains every candidate on each repeat and scores it by mean accuracy on
/// the clean validation split; returns the winning index (ties to the
/// first candidate) with all scores.
pub fn select_on_validation(
    base: &ExperimentConfig,
    candidates: &[MethodConfig],
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(HarnessError::Config("no candidates to select from".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let mut cfg = base.clone();
        cfg.method = candidate.clone();
        cfg.validate()?;
        let mut accs = Vec::new();
        for repeat in 0..cfg.run.repeats as u64 {
            let seeds = SeedPlan::for_run(cfg.run.seed, repeat);
            let data = prepare_dataset(&cfg, seeds)?;
            if data.indices(Split::Val).is_empty() {
                return Err(HarnessError::Data(
                    "validation split is empty; selection needs one".into(),
                ));
            }
            let outcome = train_once(&cfg, &data, seeds)?;
            accs.push(evaluate_split(&outcome.model, &data, Split::Val)?);
        }
        scores.push(mean_std(&accs).0);
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Resolves the output directory: explicit flag, then the config value,
/// then the `COMPLEARN_OUT_DIR` environment variable, then the current
/// directory.
pub fn resolve_out_dir(flag: Option<&str>, config_value: Option<&str>) -> PathBuf {
    if let Some(dir) = flag {
        return PathBuf::from(dir);
    }
    if let Some(dir) = config_value {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var(crate::OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(".")
}
