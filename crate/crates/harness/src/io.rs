//! CSV formats: datasets, training histories, compensation states, audit
//! rankings, histograms, and clustering results.
//!
//! All files carry a header row. Floats are written with Rust's shortest
//! round-trip formatting, so identical runs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use complearn_core::audit::{AuditEntry, Histogram};
use complearn_core::clustering::ClusteringResult;
use complearn_core::compensation::{BranchTag, CompensationState};
use complearn_core::dataset::Dataset;
use complearn_core::model::TrainHistory;
use complearn_core::numerics::DenseMatrix;

use crate::{HarnessError, Result};

/// Writes a dataset: feature columns `f0..`, the observed `label`, plus
/// `true_label` and `is_noisy` columns when ground truth is attached.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = writer(path)?;
    let d = data.dim();
    let with_truth = data.true_labels.is_some();
    let with_mask = data.noise_mask.is_some();

    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    if with_truth {
        header.push("true_label".into());
    }
    if with_mask {
        header.push("is_noisy".into());
    }
    writeln!(out, "{}", header.join(",")).map_err(|e| HarnessError::io(path, e))?;

    for i in 0..data.len() {
        let mut fields: Vec<String> = data.features.row(i).iter().map(f64::to_string).collect();
        fields.push(data.labels[i].to_string());
        if let Some(truth) = &data.true_labels {
            fields.push(truth[i].to_string());
        }
        if let Some(mask) = &data.noise_mask {
            fields.push(usize::from(mask[i]).to_string());
        }
        writeln!(out, "{}", fields.join(",")).map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// Loads a dataset written by [`write_dataset_csv`] or any numeric CSV
/// with a header. Columns named `true_label` and `is_noisy` are picked up
/// when present; every other non-label column is a feature, in header
/// order. The class count is the largest label plus one; gaps produce a
/// warning.
pub fn load_dataset_csv(path: &Path, label_column: &str) -> Result<(Dataset, Vec<String>)> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(line))) => line,
        Some((_, Err(e))) => return Err(HarnessError::io(path, e)),
        None => {
            return Err(HarnessError::Parse {
                path: path.into(),
                line: 1,
                message: "empty file, expected a header row".into(),
            })
        }
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| HarnessError::Parse {
            path: path.into(),
            line: 1,
            message: format!("no column named '{label_column}' in header"),
        })?;
    let truth_idx = columns.iter().position(|c| *c == "true_label");
    let mask_idx = columns.iter().position(|c| *c == "is_noisy");
    let feature_idx: Vec<usize> = (0..columns.len())
        .filter(|&j| j != label_idx && Some(j) != truth_idx && Some(j) != mask_idx)
        .collect();
    if feature_idx.is_empty() {
        return Err(HarnessError::Parse {
            path: path.into(),
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut truths: Vec<usize> = Vec::new();
    let mut mask: Vec<bool> = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(HarnessError::Parse {
                path: path.into(),
                line: line_no,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let parse_f64 = |j: usize| -> Result<f64> {
            fields[j].parse::<f64>().map_err(|_| HarnessError::Parse {
                path: path.into(),
                line: line_no,
                message: format!("'{}' is not a number (column {})", fields[j], columns[j]),
            })
        };
        let parse_label = |j: usize| -> Result<usize> {
            let raw = parse_f64(j)?;
            if raw.fract() != 0.0 || raw < 0.0 {
                return Err(HarnessError::Parse {
                    path: path.into(),
                    line: line_no,
                    message: format!("label '{}' is not a non-negative integer", fields[j]),
                });
            }
            Ok(raw as usize)
        };

        for &j in &feature_idx {
            rows.push(parse_f64(j)?);
        }
        labels.push(parse_label(label_idx)?);
        if let Some(j) = truth_idx {
            truths.push(parse_label(j)?);
        }
        if let Some(j) = mask_idx {
            mask.push(parse_f64(j)? != 0.0);
        }
    }
    if labels.is_empty() {
        return Err(HarnessError::Parse {
            path: path.into(),
            line: 2,
            message: "no data rows".into(),
        });
    }

    let classes = labels
        .iter()
        .chain(truths.iter())
        .max()
        .map_or(0, |&m| m + 1);
    let mut warnings = Vec::new();
    let mut seen = vec![false; classes];
    for &l in &labels {
        seen[l] = true;
    }
    for (c, &present) in seen.iter().enumerate() {
        if !present {
            warnings.push(format!("class {c} has no samples"));
        }
    }

    let features =
        DenseMatrix::from_vec(labels.len(), feature_idx.len(), rows).map_err(HarnessError::Core)?;
    let mut data = Dataset::new(features, labels, classes).map_err(HarnessError::Core)?;
    if !truths.is_empty() {
        data.true_labels = Some(truths);
    }
    if !mask.is_empty() {
        data.noise_mask = Some(mask);
    }
    Ok((data, warnings))
}

/// `epoch,loss,val_acc,mean_v_norm,max_v_norm`, one row per epoch.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "epoch,loss,val_acc,mean_v_norm,max_v_norm")
        .map_err(|e| HarnessError::io(path, e))?;
    for r in &history.records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.val_accuracy, r.mean_comp_norm, r.max_comp_norm
        )
        .map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// `sample_id,l1_norm_v,branch_tag,v_0..v_{C-1}` for the given rows.
pub fn write_state_csv(path: &Path, state: &CompensationState, indices: &[usize]) -> Result<()> {
    let mut out = writer(path)?;
    let mut header = vec![
        "sample_id".to_string(),
        "l1_norm_v".into(),
        "branch_tag".into(),
    ];
    header.extend((0..state.classes).map(|c| format!("v_{c}")));
    writeln!(out, "{}", header.join(",")).map_err(|e| HarnessError::io(path, e))?;
    for &i in indices {
        let mut fields = vec![
            i.to_string(),
            state.logit_l1_norm(i).to_string(),
            state.branch_tags[i].as_str().to_string(),
        ];
        fields.extend(state.sample_logit.row(i).iter().map(f64::to_string));
        writeln!(out, "{}", fields.join(",")).map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// One row of a compensation-state file.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRow {
    pub sample_id: usize,
    pub l1_norm: f64,
    pub branch_tag: String,
    pub v: Vec<f64>,
}

/// Reads a file written by [`write_state_csv`].
pub fn read_state_csv(path: &Path) -> Result<Vec<StateRow>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(HarnessError::Parse {
                path: path.into(),
                line: line_no,
                message: "expected sample_id,l1_norm_v,branch_tag,v_*".into(),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| HarnessError::Parse {
                path: path.into(),
                line: line_no,
                message: format!("'{s}' is not a valid {what}"),
            })
        };
        rows.push(StateRow {
            sample_id: parse(fields[0], "sample id")? as usize,
            l1_norm: parse(fields[1], "norm")?,
            branch_tag: fields[2].to_string(),
            v: fields[3..]
                .iter()
                .map(|f| parse(f, "compensation entry"))
                .collect::<Result<Vec<f64>>>()?,
        });
    }
    Ok(rows)
}

/// `class_id,mean_relative_increment,n_samples` for per-category loss
/// shifts under logit adjustment.
pub fn write_increments_csv(
    path: &Path,
    increments: &[complearn_core::baselines::CategoryIncrement],
) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "class_id,mean_relative_increment,n_samples")
        .map_err(|e| HarnessError::io(path, e))?;
    for inc in increments {
        writeln!(
            out,
            "{},{},{}",
            inc.class, inc.mean_relative_increment, inc.samples
        )
        .map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// `rank,sample_id,l1_norm_v`, best first.
pub fn write_audit_csv(path: &Path, entries: &[AuditEntry]) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "rank,sample_id,l1_norm_v").map_err(|e| HarnessError::io(path, e))?;
    for (rank, e) in entries.iter().enumerate() {
        writeln!(out, "{},{},{}", rank + 1, e.sample_id, e.l1_norm)
            .map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// `bin_lo,bin_hi,count` per bin.
pub fn write_histogram_csv(path: &Path, histogram: &Histogram) -> Result<()> {
    let mut out = writer(path)?;
    writeln!(out, "bin_lo,bin_hi,count").map_err(|e| HarnessError::io(path, e))?;
    for (b, &count) in histogram.counts.iter().enumerate() {
        writeln!(
            out,
            "{},{},{}",
            histogram.edges[b],
            histogram.edges[b + 1],
            count
        )
        .map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}

/// `point_id,cluster,outlier_norm` plus a separate centers file
/// (`cluster,c_0..c_{d-1}`).
pub fn write_cluster_csvs(
    assignments_path: &Path,
    centers_path: &Path,
    result: &ClusteringResult,
) -> Result<()> {
    let mut out = writer(assignments_path)?;
    writeln!(out, "point_id,cluster,outlier_norm")
        .map_err(|e| HarnessError::io(assignments_path, e))?;
    for (i, &cluster) in result.assignments.iter().enumerate() {
        let norm = complearn_core::numerics::l2_norm(result.outliers.row(i));
        writeln!(out, "{i},{cluster},{norm}").map_err(|e| HarnessError::io(assignments_path, e))?;
    }
    out.flush()
        .map_err(|e| HarnessError::io(assignments_path, e))?;

    let mut out = writer(centers_path)?;
    let mut header = vec!["cluster".to_string()];
    header.extend((0..result.centers.cols()).map(|j| format!("c_{j}")));
    writeln!(out, "{}", header.join(",")).map_err(|e| HarnessError::io(centers_path, e))?;
    for c in 0..result.centers.rows() {
        let mut fields = vec![c.to_string()];
        fields.extend(result.centers.row(c).iter().map(f64::to_string));
        writeln!(out, "{}", fields.join(",")).map_err(|e| HarnessError::io(centers_path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(centers_path, e))
}

/// Branch-tag string used in state files.
pub fn branch_tag_str(tag: BranchTag) -> &'static str {
    tag.as_str()
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| HarnessError::io(path, e))?,
    ))
}
