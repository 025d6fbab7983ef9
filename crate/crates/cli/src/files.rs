//! On-disk formats: the results tables written by `run` and the prediction
//! interchange files read by `eval-tac`.
//!
//! Interchange conventions: targets and means are headerless numeric CSV,
//! one row per sample; covariances are one n×n block of CSV rows per
//! sample, blocks separated by blank lines.

use std::path::Path;

use tictac_core::data::format_float;
use tictac_core::linalg::{Matrix, SymMatrix};
use tictac_core::trainer::{aggregate, TrialResult};

use crate::AppError;

fn invalid(code: &'static str, detail: impl Into<String>) -> AppError {
    AppError::Validation { code, detail: detail.into() }
}

fn io_err(detail: impl Into<String>) -> AppError {
    AppError::Runtime { code: "io", detail: detail.into() }
}

/// Headerless numeric CSV: every row the same width, every cell a float.
pub fn read_numeric_csv(path: &Path) -> Result<Matrix, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("bad_input_file", format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                invalid("bad_input_file", format!("{} line {}: {e}", path.display(), i + 1))
            })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(invalid(
                    "bad_input_file",
                    format!("{} line {}: ragged row", path.display(), i + 1),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(invalid("bad_input_file", format!("{} has no rows", path.display())));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Covariance blocks: n lines of n comma-separated values per sample,
/// samples separated by one or more blank lines. Off-pair asymmetry beyond
/// 1e-8 is rejected; smaller asymmetry is averaged away.
pub fn read_cov_blocks(path: &Path) -> Result<Vec<SymMatrix>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("bad_input_file", format!("cannot read {}: {e}", path.display())))?;
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| {
                invalid("bad_input_file", format!("{} line {}: {e}", path.display(), i + 1))
            })?;
        current.push(row);
    }
    if !current.is_empty() {
        blocks.push(current);
    }
    if blocks.is_empty() {
        return Err(invalid("bad_input_file", format!("{} has no blocks", path.display())));
    }
    let n = blocks[0].len();
    let mut out = Vec::with_capacity(blocks.len());
    for (b, block) in blocks.iter().enumerate() {
        if block.len() != n || block.iter().any(|row| row.len() != n) {
            return Err(invalid(
                "bad_input_file",
                format!("{} block {}: expected {n}x{n} entries", path.display(), b + 1),
            ));
        }
        let flat: Vec<f64> = block.iter().flatten().copied().collect();
        for i in 0..n {
            for j in 0..i {
                if (flat[i * n + j] - flat[j * n + i]).abs() > 1e-8 {
                    return Err(invalid(
                        "bad_input_file",
                        format!("{} block {}: not symmetric at ({i},{j})", path.display(), b + 1),
                    ));
                }
            }
        }
        out.push(SymMatrix::from_flat(n, flat));
    }
    Ok(out)
}

fn float_cell(v: f64) -> String {
    format_float(v)
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// The results table. Column set and order are fixed; `no_timing` zeroes
/// the wall-time column so reruns are byte-comparable.
pub fn write_results_csv(
    path: &Path,
    rows: &[TrialResult],
    no_timing: bool,
) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| io_err(format!("cannot write {}: {e}", path.display())))?;
    let write = |w: &mut csv::Writer<std::fs::File>, rec: &[String]| {
        w.write_record(rec).map_err(|e| io_err(format!("write {}: {e}", path.display())))
    };
    write(
        &mut w,
        &["method", "dataset", "dim", "trial", "seed", "tac", "mse", "mean_nll", "wall_time_s"]
            .map(String::from),
    )?;
    for r in rows {
        let wall = if no_timing { 0.0 } else { r.wall_time_s };
        write(
            &mut w,
            &[
                r.method.name().to_string(),
                r.dataset.clone(),
                r.dim.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                opt_cell(r.tac),
                float_cell(r.mse),
                float_cell(r.mean_nll),
                float_cell(wall),
            ],
        )?;
    }
    w.flush().map_err(|e| io_err(format!("flush {}: {e}", path.display())))
}

fn row_json(r: &TrialResult, no_timing: bool) -> serde_json::Value {
    serde_json::json!({
        "method": r.method.name(),
        "dataset": r.dataset,
        "dim": r.dim,
        "trial": r.trial,
        "seed": r.seed,
        "tac": r.tac,
        "mse": r.mse,
        "mean_nll": r.mean_nll,
        "wall_time_s": if no_timing { 0.0 } else { r.wall_time_s },
    })
}

/// Summary document: config echo, per-method aggregate means, trial rows.
pub fn results_json(
    echo: &serde_json::Value,
    rows: &[TrialResult],
    failures: &[String],
    no_timing: bool,
) -> serde_json::Value {
    let aggregates: Vec<serde_json::Value> = aggregate(rows)
        .iter()
        .map(|a| {
            serde_json::json!({
                "method": a.method.name(),
                "dataset": a.dataset,
                "dim": a.dim,
                "n_trials": a.n_trials,
                "tac": a.tac,
                "mse": a.mse,
                "mean_nll": a.mean_nll,
            })
        })
        .collect();
    serde_json::json!({
        "config": echo,
        "aggregates": aggregates,
        "trials": rows.iter().map(|r| row_json(r, no_timing)).collect::<Vec<_>>(),
        "failures": failures,
    })
}

/// One JSON artifact per (dataset, trial) pair under `dir`, holding that
/// trial's rows.
pub fn write_trial_artifacts(
    dir: &Path,
    rows: &[TrialResult],
    no_timing: bool,
) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| io_err(format!("cannot create {}: {e}", dir.display())))?;
    let mut keys: Vec<(String, usize)> = Vec::new();
    for r in rows {
        let key = (r.dataset.clone(), r.trial);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (dataset, trial) in keys {
        let group: Vec<serde_json::Value> = rows
            .iter()
            .filter(|r| r.dataset == dataset && r.trial == trial)
            .map(|r| row_json(r, no_timing))
            .collect();
        let path = dir.join(format!("{dataset}_trial{trial}.json"));
        let doc = serde_json::json!({ "dataset": dataset, "trial": trial, "rows": group });
        std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("serializable"))
            .map_err(|e| io_err(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
