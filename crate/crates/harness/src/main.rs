//! The `complearn` command line: synthetic data generation, label-noise
//! injection, training/comparison runs, compensation audits, and robust
//! clustering. Errors print as `error: <category>: <message>` on stderr
//! with a nonzero exit code.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use complearn_core::audit::{norm_histogram, AuditEntry, Histogram};
use complearn_core::clustering::robust_kmeans_best_of;
use complearn_core::dataset::make_blobs_with_counts;
use complearn_core::noise::{NoiseScheme, NoiseSpec};
use complearn_harness::config::{CompareConfig, ExperimentConfig};
use complearn_harness::runner::{resolve_out_dir, run_compare, run_experiment};
use complearn_harness::{io, HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "complearn",
    about = "Compensation-based robust learning toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blob dataset as CSV.
    GenData(GenDataArgs),
    /// Inject label noise into a dataset CSV, keeping ground truth.
    Inject(InjectArgs),
    /// Run one training experiment from a TOML config.
    Train(TrainArgs),
    /// Run several methods on identical data and tabulate accuracies.
    Compare(TrainArgs),
    /// Rank samples of a compensation-state file by l1 norm.
    Audit(AuditArgs),
    /// Histogram of compensation l1 norms from a state file.
    Hist(HistArgs),
    /// Robust (compensated) k-means over a dataset CSV.
    Cluster(ClusterArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    n_per_class: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 6.0)]
    center_spread: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Explicit per-class counts, e.g. 600,300,100 (overrides n-per-class).
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
}

#[derive(Args)]
struct InjectArgs {
    /// Input dataset CSV.
    #[arg(long)]
    input: PathBuf,
    /// Output CSV with noisy labels, true_label, and is_noisy columns.
    #[arg(long)]
    out: PathBuf,
    /// random | pair | symmetric_prefix | asymmetric_prefix
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random scheme: draw replacements from the other C-1 classes only.
    #[arg(long, default_value_t = false)]
    exclude_original: bool,
    #[arg(long, default_value = "label")]
    label_column: String,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides config and COMPLEARN_OUT_DIR).
    #[arg(long)]
    out_dir: Option<String>,
}

#[derive(Args)]
struct AuditArgs {
    /// Compensation-state CSV produced by `train`.
    #[arg(long)]
    state: PathBuf,
    /// How many samples to keep.
    #[arg(long, default_value_t = 50)]
    top: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HistArgs {
    /// Compensation-state CSV produced by `train`.
    #[arg(long)]
    state: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    /// Input dataset CSV (labels ignored).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    /// Outlier-compensation penalty; large values approach vanilla k-means.
    #[arg(long, default_value_t = 6.0)]
    lambda: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seeded attempts; the lowest-objective run is kept.
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    /// Assignments go to <prefix>_assignments.csv, centers to
    /// <prefix>_centers.csv.
    #[arg(long)]
    out_prefix: String,
    #[arg(long, default_value = "label")]
    label_column: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {err}", err.category());
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(args) => gen_data(args),
        Command::Inject(args) => inject(args),
        Command::Train(args) => train_cmd(args),
        Command::Compare(args) => compare_cmd(args),
        Command::Audit(args) => audit_cmd(args),
        Command::Hist(args) => hist_cmd(args),
        Command::Cluster(args) => cluster_cmd(args),
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let counts = args
        .counts
        .unwrap_or_else(|| vec![args.n_per_class; args.classes]);
    let data = make_blobs_with_counts(
        &counts,
        args.dims,
        args.center_spread,
        args.noise_sigma,
        args.outlier_fraction,
        args.seed,
    )?;
    io::write_dataset_csv(&args.out, &data)?;
    println!(
        "wrote {} samples ({} classes, {} dims) to {}",
        data.len(),
        data.classes,
        data.dim(),
        args.out.display()
    );
    Ok(())
}

fn inject(args: InjectArgs) -> Result<()> {
    let scheme = match args.scheme.as_str() {
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
    let (mut data, warnings) = io::load_dataset_csv(&args.input, &args.label_column)?;
    for w in warnings {
        eprintln!("warning: {}: {w}", args.input.display());
    }
    let spec = NoiseSpec {
        scheme,
        rate: args.rate,
        seed: args.seed,
        exclude_original: args.exclude_original,
    };
    let (noisy, mask) = complearn_core::noise::inject_noise(&data.labels, data.classes, &spec)?;
    let changed = mask.iter().filter(|&&m| m).count();
    data.true_labels = Some(data.labels.clone());
    data.labels = noisy;
    data.noise_mask = Some(mask);
    io::write_dataset_csv(&args.out, &data)?;
    println!(
        "flipped {changed} of {} labels ({}, rate {}) into {}",
        data.len(),
        args.scheme,
        args.rate,
        args.out.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_toml_file(&args.config)?;
    let out_dir = resolve_out_dir(args.out_dir.as_deref(), cfg.run.output_dir.as_deref());
    let report = run_experiment(&cfg, &out_dir)?;
    println!(
        "{}: accuracy {:.4} +- {:.4} over {} seed(s); report in {}",
        report.method,
        report.mean_accuracy,
        report.std_accuracy,
        report.repeats,
        out_dir
            .join(format!("report_{}.json", report.method))
            .display()
    );
    Ok(())
}

fn compare_cmd(args: TrainArgs) -> Result<()> {
    let cfg = CompareConfig::from_toml_file(&args.config)?;
    let out_dir = resolve_out_dir(args.out_dir.as_deref(), cfg.run.output_dir.as_deref());
    let rows = run_compare(&cfg, &out_dir)?;
    println!("{:<28} {:>10} {:>10}", "method", "mean", "std");
    for row in &rows {
        println!(
            "{:<28} {:>10.4} {:>10.4}",
            row.method, row.mean_accuracy, row.std_accuracy
        );
    }
    println!("table written to {}", out_dir.join("compare.csv").display());
    Ok(())
}

fn audit_cmd(args: AuditArgs) -> Result<()> {
    let rows = io::read_state_csv(&args.state)?;
    let mut entries: Vec<AuditEntry> = rows
        .iter()
        .map(|r| AuditEntry {
            sample_id: r.sample_id,
            l1_norm: r.l1_norm,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.l1_norm
            .partial_cmp(&a.l1_norm)
            .expect("finite norms")
            .then(a.sample_id.cmp(&b.sample_id))
    });
    if args.top > entries.len() {
        eprintln!(
            "warning: top {} clamped to {} samples",
            args.top,
            entries.len()
        );
    }
    entries.truncate(args.top.min(rows.len()));
    io::write_audit_csv(&args.out, &entries)?;
    println!(
        "ranked {} samples into {}",
        entries.len(),
        args.out.display()
    );
    Ok(())
}

fn hist_cmd(args: HistArgs) -> Result<()> {
    let rows = io::read_state_csv(&args.state)?;
    // Rebuild a minimal state so the histogram shares the library path.
    let mut state = complearn_core::compensation::CompensationState::new(
        rows.len(),
        rows.first().map_or(1, |r| r.v.len().max(1)),
        1,
    );
    for (slot, row) in rows.iter().enumerate() {
        for (c, &v) in row.v.iter().enumerate() {
            state.sample_logit.set(slot, c, v);
        }
    }
    let indices: Vec<usize> = (0..rows.len()).collect();
    let histogram: Histogram = norm_histogram(&state, &indices, args.bins)?;
    io::write_histogram_csv(&args.out, &histogram)?;
    println!(
        "histogram with {} bins written to {}",
        args.bins,
        args.out.display()
    );
    Ok(())
}

fn cluster_cmd(args: ClusterArgs) -> Result<()> {
    let (data, warnings) = io::load_dataset_csv(&args.input, &args.label_column)?;
    for w in warnings {
        eprintln!("warning: {}: {w}", args.input.display());
    }
    let result = robust_kmeans_best_of(
        &data.features,
        args.k,
        args.lambda,
        args.max_iters,
        args.seed,
        args.restarts,
    )?;
    let assignments = PathBuf::from(format!("{}_assignments.csv", args.out_prefix));
    let centers = PathBuf::from(format!("{}_centers.csv", args.out_prefix));
    io::write_cluster_csvs(&assignments, &centers, &result)?;
    let compensated = result
        .outliers
        .data()
        .chunks(data.dim())
        .filter(|row| complearn_core::numerics::l2_norm(row) > 1e-9)
        .count();
    println!(
        "k={} lambda={}: {} points compensated, objective {:.4}, {} iterations; wrote {} and {}",
        args.k,
        args.lambda,
        compensated,
        result.objective_trace.last().copied().unwrap_or(f64::NAN),
        result.iterations,
        assignments.display(),
        centers.display()
    );
    Ok(())
}
