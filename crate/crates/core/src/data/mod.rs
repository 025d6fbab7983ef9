//! Dataset generation and ingestion.
//!
//! Three data sources drive the experiments:
//! - univariate sinusoids with input-dependent noise amplitude,
//! - a multivariate construction where the target is a Gaussian conditional
//!   `Y|X` plus input-scaled independent noise `Z`, so the ground-truth
//!   covariance `Σ_{Y|X} + Σ_{Z|X}(x)` is known in closed form,
//! - CSV tables prepared with the z-score/feature-split protocol (see
//!   [`uci`]).
//!
//! Every generator is a pure function of its parameters and seed; the RNG
//! draw order is part of the format and must not be reordered.

pub mod uci;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky, condition_gaussian, CholFactor, ConditionSpec, Matrix, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("i/o failed: {0}")]
    Io(String),
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error("too few usable columns: found {found}, need {need}")]
    TooFewColumns { found: usize, need: usize },
    #[error("corrupt dataset cache: {0}")]
    CorruptCache(String),
}

/// Generation provenance carried with a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seed: u64,
    /// free-form generation parameters (variant, dimension, source file, …)
    pub params: serde_json::Value,
}

/// Input/target pairs with provenance. Row counts always match.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }
}

/// Amplitude profile of the univariate sinusoid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnivariateVariant {
    /// A(x) = 5
    Const5,
    /// A(x) = |x|
    AbsX,
    /// A(x) = 5 − |x|
    FiveMinusAbsX,
}

impl UnivariateVariant {
    pub fn name(self) -> &'static str {
        match self {
            UnivariateVariant::Const5 => "const_5",
            UnivariateVariant::AbsX => "abs_x",
            UnivariateVariant::FiveMinusAbsX => "five_minus_abs_x",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "const_5" => Some(UnivariateVariant::Const5),
            "abs_x" => Some(UnivariateVariant::AbsX),
            "five_minus_abs_x" => Some(UnivariateVariant::FiveMinusAbsX),
            _ => None,
        }
    }

    pub fn amplitude(self, x: f64) -> f64 {
        match self {
            UnivariateVariant::Const5 => 5.0,
            UnivariateVariant::AbsX => x.abs(),
            UnivariateVariant::FiveMinusAbsX => 5.0 - x.abs(),
        }
    }
}

/// Noiseless part of the univariate target, `A(x)·sin(2πx)`.
pub fn univariate_signal(variant: UnivariateVariant, x: f64) -> f64 {
    variant.amplitude(x) * (2.0 * std::f64::consts::PI * x).sin()
}

/// One univariate draw at a given noise realization:
/// `y = A(x)·sin(2πx) + |x|·η`.
pub fn univariate_sample(variant: UnivariateVariant, x: f64, eta: f64) -> f64 {
    univariate_signal(variant, x) + x.abs() * eta
}

/// Univariate dataset: `x ~ U(−5,5)`, `y = A(x)·sin(2πx) + |x|·η` with
/// `η ~ N(0,1)`. Draw order per sample: x, then η.
pub fn gen_univariate(variant: UnivariateVariant, count: usize, seed: u64) -> Dataset {
    assert!(count >= 1, "count must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut inputs = Matrix::zeros(count, 1);
    let mut targets = Matrix::zeros(count, 1);
    for i in 0..count {
        let x = rng.random_range(-5.0..5.0);
        let eta: f64 = normal.sample(&mut rng);
        inputs.set(i, 0, x);
        targets.set(i, 0, univariate_sample(variant, x, eta));
    }
    Dataset {
        inputs,
        targets,
        meta: DatasetMeta {
            name: format!("univariate_{}", variant.name()),
            seed,
            params: serde_json::json!({ "variant": variant.name(), "count": count }),
        },
    }
}

/// Parameters of the multivariate construction: a `2d`-dimensional joint
/// Gaussian whose first `d` coordinates are the input `X` and last `d` the
/// latent `Y`.
#[derive(Debug, Clone)]
pub struct MultivariateSpec {
    pub d: usize,
    pub joint_mean: Vec<f64>,
    pub joint_cov: SymMatrix,
    pub samples: usize,
}

impl MultivariateSpec {
    /// Conditional distribution of `Y` given `X = x` (Schur complement on
    /// the joint). The covariance does not depend on `x`.
    pub fn conditional_y_given_x(&self, x: &[f64]) -> (Vec<f64>, SymMatrix) {
        let d = self.d;
        let spec = ConditionSpec::new((0..d).collect(), x.to_vec()).expect("valid spec");
        condition_gaussian(&self.joint_mean, &self.joint_cov, &spec)
            .expect("joint covariance is PD by construction")
    }

    fn x_marginal(&self) -> (Vec<f64>, SymMatrix) {
        let d = self.d;
        let mean = self.joint_mean[..d].to_vec();
        let mut cov = SymMatrix::zeros(d);
        for i in 0..d {
            for j in 0..=i {
                cov.set_sym(i, j, self.joint_cov.get(i, j));
            }
        }
        (mean, cov)
    }
}

fn sample_gaussian(
    rng: &mut ChaCha8Rng,
    mean: &[f64],
    factor: &CholFactor,
    out: &mut [f64],
) {
    let normal = StandardNormal;
    let n = mean.len();
    let mut xi = vec![0.0; n];
    for v in xi.iter_mut() {
        *v = normal.sample(rng);
    }
    // mean + L·ξ
    for i in 0..n {
        let mut acc = mean[i];
        for k in 0..=i {
            acc += factor.lower(i, k) * xi[k];
        }
        out[i] = acc;
    }
}

/// Random joint over `2d` dimensions: `joint_cov = AAᵀ + 0.1·I` with
/// standard-normal `A` entries, `joint_mean ~ U(−1,1)`.
/// Draw order: A row-major, then the mean.
pub fn gen_joint_spec(d: usize, samples: usize, rng: &mut ChaCha8Rng) -> MultivariateSpec {
    let n = 2 * d;
    let normal = StandardNormal;
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for v in a.row_mut(i) {
            *v = normal.sample(rng);
        }
    }
    let mut cov = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a.get(i, k) * a.get(j, k);
            }
            cov.set_sym(i, j, acc);
        }
    }
    let joint_cov = cov.add_scaled_identity(0.1);
    let joint_mean: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    MultivariateSpec { d, joint_mean, joint_cov, samples }
}

/// Multivariate dataset with a custom sample count. Per sample the draw
/// order is: ξ_x (d), ξ_y (d), ξ_z (d); the target is
/// `q = y + z` with `y ~ N(μ_{Y|X=x}, Σ_{Y|X})` and
/// `z ~ N(0, diag(√|x|))` (per-dimension std `|xᵢ|^{1/4}`).
pub fn gen_multivariate_with_samples(
    d: usize,
    samples: usize,
    seed: u64,
) -> (Dataset, MultivariateSpec) {
    assert!(d.is_multiple_of(2) && (4..=20).contains(&d), "d must be even in [4, 20]");
    assert!(samples >= 1, "samples must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = gen_joint_spec(d, samples, &mut rng);

    let (x_mean, x_cov) = spec.x_marginal();
    let x_factor = cholesky(&x_cov).expect("X marginal is PD");
    // Σ_{Y|X} is x-independent: factor once at the marginal mean
    let (_, cond_cov) = spec.conditional_y_given_x(&x_mean);
    let cond_factor = cholesky(&cond_cov).expect("conditional covariance is PD");

    let normal = StandardNormal;
    let mut inputs = Matrix::zeros(samples, d);
    let mut targets = Matrix::zeros(samples, d);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for s in 0..samples {
        sample_gaussian(&mut rng, &x_mean, &x_factor, &mut x);
        let (cond_mean, _) = spec.conditional_y_given_x(&x);
        sample_gaussian(&mut rng, &cond_mean, &cond_factor, &mut y);
        for i in 0..d {
            let z_std = x[i].abs().sqrt().sqrt();
            let xi: f64 = normal.sample(&mut rng);
            targets.set(s, i, y[i] + z_std * xi);
            inputs.set(s, i, x[i]);
        }
    }
    let ds = Dataset {
        inputs,
        targets,
        meta: DatasetMeta {
            name: format!("multivariate_d{d}"),
            seed,
            params: serde_json::json!({ "d": d, "samples": samples }),
        },
    };
    (ds, spec)
}

/// Multivariate dataset at the default count `1000·d`.
pub fn gen_multivariate(d: usize, seed: u64) -> (Dataset, MultivariateSpec) {
    gen_multivariate_with_samples(d, 1000 * d, seed)
}

/// Repeated draws of the target `q` at one pinned input — the Monte-Carlo
/// oracle for the ground-truth conditional covariance
/// `Σ_{Y|X} + diag(√|x|)`.
pub fn sample_q_at(spec: &MultivariateSpec, x: &[f64], n_draws: usize, seed: u64) -> Matrix {
    let d = spec.d;
    let (cond_mean, cond_cov) = spec.conditional_y_given_x(x);
    let factor = cholesky(&cond_cov).expect("conditional covariance is PD");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut out = Matrix::zeros(n_draws, d);
    let mut y = vec![0.0; d];
    for s in 0..n_draws {
        sample_gaussian(&mut rng, &cond_mean, &factor, &mut y);
        for i in 0..d {
            let z_std = x[i].abs().sqrt().sqrt();
            let xi: f64 = normal.sample(&mut rng);
            out.set(s, i, y[i] + z_std * xi);
        }
    }
    out
}

/// Synthetic stand-in for a small UCI regression table: a correlated joint
/// Gaussian over all columns plus input-dependent noise on the second half.
/// Columns are named c0..c{k−1}; rows are iid given the seed.
pub fn gen_uci_surrogate(rows: usize, cols: usize, seed: u64) -> (Vec<String>, Matrix) {
    assert!(cols >= 4, "surrogate needs >= 4 columns");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut a = Matrix::zeros(cols, cols);
    for i in 0..cols {
        for v in a.row_mut(i) {
            *v = normal.sample(&mut rng);
        }
    }
    let mut cov = SymMatrix::zeros(cols);
    for i in 0..cols {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..cols {
                acc += a.get(i, k) * a.get(j, k);
            }
            cov.set_sym(i, j, acc);
        }
    }
    let cov = cov.add_scaled_identity(0.1);
    let factor = cholesky(&cov).expect("surrogate covariance is PD");
    let mean: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut data = Matrix::zeros(rows, cols);
    let mut row = vec![0.0; cols];
    for r in 0..rows {
        sample_gaussian(&mut rng, &mean, &factor, &mut row);
        // heteroscedastic bump tied to the first column
        let scale = 0.5 * row[0].abs().sqrt();
        for c in cols / 2..cols {
            let xi: f64 = normal.sample(&mut rng);
            row[c] += scale * xi;
        }
        data.row_mut(r).copy_from_slice(&row);
    }
    let headers: Vec<String> = (0..cols).map(|c| format!("c{c}")).collect();
    (headers, data)
}

/// Writes a dataset as one CSV (`x0..x{m−1}, y0..y{n−1}` headers) plus a
/// JSON meta sidecar. Floats use shortest-roundtrip formatting, so a
/// save/load cycle is bitwise exact.
pub fn save_dataset(ds: &Dataset, csv_path: &Path, meta_path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| DataError::Io(e.to_string()))?;
    let m = ds.input_dim();
    let n = ds.target_dim();
    let mut header = Vec::with_capacity(m + n);
    for j in 0..m {
        header.push(format!("x{j}"));
    }
    for j in 0..n {
        header.push(format!("y{j}"));
    }
    w.write_record(&header).map_err(|e| DataError::Io(e.to_string()))?;
    let mut record = Vec::with_capacity(m + n);
    for i in 0..ds.n_samples() {
        record.clear();
        for &v in ds.inputs.row(i) {
            record.push(format_float(v));
        }
        for &v in ds.targets.row(i) {
            record.push(format_float(v));
        }
        w.write_record(&record).map_err(|e| DataError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))?;
    let json = serde_json::to_string_pretty(&ds.meta).expect("meta serializes");
    std::fs::write(meta_path, json).map_err(|e| DataError::Io(e.to_string()))
}

/// Shortest decimal string that parses back to the same f64 — Rust's
/// default float Display guarantees the roundtrip.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(csv_path: &Path, meta_path: &Path) -> Result<Dataset, DataError> {
    let meta_json =
        std::fs::read_to_string(meta_path).map_err(|e| DataError::Io(e.to_string()))?;
    let meta: DatasetMeta =
        serde_json::from_str(&meta_json).map_err(|e| DataError::CorruptCache(e.to_string()))?;
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| DataError::Io(e.to_string()))?;
    let headers = r.headers().map_err(|e| DataError::MalformedCsv(e.to_string()))?.clone();
    let m = headers.iter().filter(|h| h.starts_with('x')).count();
    let n = headers.iter().filter(|h| h.starts_with('y')).count();
    if m == 0 || n == 0 || m + n != headers.len() {
        return Err(DataError::CorruptCache("headers must be x0..,y0..".into()));
    }
    let mut inputs_flat = Vec::new();
    let mut targets_flat = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| DataError::MalformedCsv(e.to_string()))?;
        if rec.len() != m + n {
            return Err(DataError::MalformedCsv(format!(
                "row {} has {} fields, expected {}",
                rows + 1,
                rec.len(),
                m + n
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| DataError::MalformedCsv(format!("bad float {field:?}")))?;
            if j < m {
                inputs_flat.push(v);
            } else {
                targets_flat.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::CorruptCache("dataset has no rows".into()));
    }
    Ok(Dataset {
        inputs: Matrix::from_flat(rows, m, inputs_flat),
        targets: Matrix::from_flat(rows, n, targets_flat),
        meta,
    })
}
