//! CSV table preparation: keep continuous columns, drop rows with missing
//! values, z-score normalize, and split columns into inputs and targets at
//! random per trial.
//!
//! Missing-value tokens: empty cell, `?`, `na`, `n/a`, `nan`
//! (case-insensitive). Normalization uses the population standard deviation
//! (denominator N), so `{0, 2} → {−1, 1}`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, DatasetMeta};
use crate::linalg::Matrix;

/// How to read one CSV file.
#[derive(Debug, Clone)]
pub struct UciSchema {
    pub path: PathBuf,
    /// Minimum count of retained continuous columns; the experiment
    /// protocol needs 4 (one input plus targets after the 25% split).
    pub min_continuous_columns: usize,
}

impl UciSchema {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into(), min_continuous_columns: 4 }
    }

    pub fn with_min_columns(mut self, min: usize) -> Self {
        self.min_continuous_columns = min;
        self
    }
}

/// A normalized table ready for feature splitting.
#[derive(Debug, Clone)]
pub struct UciTable {
    pub name: String,
    /// retained column names, in file order
    pub columns: Vec<String>,
    /// pre-normalization per-column mean and population std
    pub col_mean: Vec<f64>,
    pub col_std: Vec<f64>,
    /// z-scored values, rows × retained columns
    pub data: Matrix,
    pub n_dropped_rows: usize,
    /// human-readable notes about dropped columns
    pub warnings: Vec<String>,
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty()
        || t.eq_ignore_ascii_case("?")
        || t.eq_ignore_ascii_case("na")
        || t.eq_ignore_ascii_case("n/a")
        || t.eq_ignore_ascii_case("nan")
}

/// Loads and normalizes a CSV per the schema. Non-numeric columns are
/// dropped first, then rows with missing values in the surviving columns,
/// then constant columns (population std 0, which cannot be z-scored).
pub fn load_uci(schema: &UciSchema) -> Result<UciTable, DataError> {
    let name = schema
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".to_string());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&schema.path)
        .map_err(|e| DataError::Io(e.to_string()))?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| DataError::MalformedCsv(e.to_string()))?.iter().map(String::from).collect();
    let n_cols = headers.len();

    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    let mut numeric = vec![true; n_cols];
    for (row_idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DataError::MalformedCsv(e.to_string()))?;
        if rec.len() != n_cols {
            return Err(DataError::MalformedCsv(format!(
                "row {} has {} fields, expected {}",
                row_idx + 2,
                rec.len(),
                n_cols
            )));
        }
        let mut row = Vec::with_capacity(n_cols);
        for (c, field) in rec.iter().enumerate() {
            if is_missing(field) {
                row.push(None);
            } else {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(Some(v)),
                    _ => {
                        numeric[c] = false;
                        row.push(None);
                    }
                }
            }
        }
        cells.push(row);
    }
    if cells.is_empty() {
        return Err(DataError::MalformedCsv("file has no data rows".into()));
    }

    let mut warnings = Vec::new();
    for c in 0..n_cols {
        if !numeric[c] {
            warnings.push(format!("column {:?} dropped: not continuous", headers[c]));
        }
    }
    let numeric_cols: Vec<usize> = (0..n_cols).filter(|&c| numeric[c]).collect();

    // rows with a missing value in any retained column are dropped
    let kept_rows: Vec<usize> = (0..cells.len())
        .filter(|&r| numeric_cols.iter().all(|&c| cells[r][c].is_some()))
        .collect();
    let n_dropped_rows = cells.len() - kept_rows.len();
    if kept_rows.is_empty() {
        return Err(DataError::MalformedCsv("every row has missing values".into()));
    }

    // constant columns cannot be z-scored
    let nf = kept_rows.len() as f64;
    let mut retained = Vec::new();
    let mut col_mean = Vec::new();
    let mut col_std = Vec::new();
    for &c in &numeric_cols {
        let mean = kept_rows.iter().map(|&r| cells[r][c].unwrap()).sum::<f64>() / nf;
        let var =
            kept_rows.iter().map(|&r| (cells[r][c].unwrap() - mean).powi(2)).sum::<f64>() / nf;
        let std = var.sqrt();
        if std == 0.0 {
            warnings.push(format!("column {:?} dropped: constant (std = 0)", headers[c]));
            continue;
        }
        retained.push(c);
        col_mean.push(mean);
        col_std.push(std);
    }
    if retained.len() < schema.min_continuous_columns {
        return Err(DataError::TooFewColumns {
            found: retained.len(),
            need: schema.min_continuous_columns,
        });
    }

    let mut data = Matrix::zeros(kept_rows.len(), retained.len());
    for (i, &r) in kept_rows.iter().enumerate() {
        for (j, &c) in retained.iter().enumerate() {
            data.set(i, j, (cells[r][c].unwrap() - col_mean[j]) / col_std[j]);
        }
    }
    Ok(UciTable {
        name,
        columns: retained.iter().map(|&c| headers[c].clone()).collect(),
        col_mean,
        col_std,
        data,
        n_dropped_rows,
        warnings,
    })
}

/// Splits a table's columns into inputs and targets: a uniformly random
/// permutation per seed, first ⌈25%⌉ columns as inputs, the rest targets.
pub fn random_feature_split(table: &UciTable, seed: u64) -> Dataset {
    let n_cols = table.data.cols();
    assert!(n_cols >= 2, "need at least one input and one target column");
    let n_inputs = n_cols.div_ceil(4);
    let mut perm: Vec<usize> = (0..n_cols).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let (input_cols, target_cols) = perm.split_at(n_inputs);

    let rows = table.data.rows();
    let mut inputs = Matrix::zeros(rows, input_cols.len());
    let mut targets = Matrix::zeros(rows, target_cols.len());
    for r in 0..rows {
        for (j, &c) in input_cols.iter().enumerate() {
            inputs.set(r, j, table.data.get(r, c));
        }
        for (j, &c) in target_cols.iter().enumerate() {
            targets.set(r, j, table.data.get(r, c));
        }
    }
    let names = |cols: &[usize]| -> Vec<String> {
        cols.iter().map(|&c| table.columns[c].clone()).collect()
    };
    Dataset {
        inputs,
        targets,
        meta: DatasetMeta {
            name: table.name.clone(),
            seed,
            params: serde_json::json!({
                "input_columns": names(input_cols),
                "target_columns": names(target_cols),
            }),
        },
    }
}

/// Writes a plain CSV with the given headers — the on-disk form consumed by
/// [`load_uci`].
pub fn write_table_csv(path: &Path, headers: &[String], data: &Matrix) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DataError::Io(e.to_string()))?;
    w.write_record(headers).map_err(|e| DataError::Io(e.to_string()))?;
    let mut record: Vec<String> = Vec::with_capacity(headers.len());
    for r in 0..data.rows() {
        record.clear();
        for &v in data.row(r) {
            record.push(super::format_float(v));
        }
        w.write_record(&record).map_err(|e| DataError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}
