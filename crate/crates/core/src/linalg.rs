//! Dense symmetric linear algebra: Cholesky factorization, triangular solves,
//! log-determinants, positive-definite parameterization, and Gaussian
//! conditioning via the Schur complement.
//!
//! Everything here works in `f64`; covariance matrices get ill-conditioned
//! quickly and 32-bit floats are not enough headroom.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor added to softplus-mapped diagonals so parameterized factors stay
/// strictly positive definite even for arbitrarily negative raw inputs.
pub const EPS_MIN: f64 = 1e-6;

/// Relative jitter step (times the mean diagonal) used when retrying a
/// failed Cholesky factorization of a near-singular matrix.
pub const JITTER_STEP: f64 = 1e-6;

/// Number of jitter retries before giving up on a factorization.
pub const JITTER_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("observed block is singular after jitter retries")]
    SingularObservedBlock,
    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),
    #[error("invalid conditioning spec: {0}")]
    InvalidConditionSpec(&'static str),
}

/// Numerically stable softplus, `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense rectangular matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat data length must be rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self * v` for a vector of length `cols`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec length");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for j in 0..orow.len() {
                    out_row[j] += a * orow[j];
                }
            }
        }
        out
    }
}

/// Dense symmetric matrix. Symmetry is enforced at construction; `set_sym`
/// writes both mirrored entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "dim must be >= 1");
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = v;
        }
        m
    }

    /// Builds from arbitrary square data, symmetrizing via `(A + Aᵀ)/2`.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "flat data length must be dim*dim");
        let mut m = Self { dim, data };
        for i in 0..dim {
            for j in 0..i {
                let avg = 0.5 * (m.data[i * dim + j] + m.data[j * dim + i]);
                m.data[i * dim + j] = avg;
                m.data[j * dim + i] = avg;
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "rows must form a square matrix");
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "mul_vec length");
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for v in &mut out.data {
            *v *= c;
        }
        out
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.dim, other.dim, "add dims");
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn add_scaled_identity(&self, c: f64) -> SymMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.data[i * self.dim + i] += c;
        }
        out
    }

    pub fn mean_diag(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum::<f64>() / self.dim as f64
    }

    /// Frobenius inner product `⟨self, other⟩ = Σᵢⱼ aᵢⱼ bᵢⱼ`.
    pub fn frob_inner(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "frob_inner dims");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reorders rows and columns by `perm`, where entry `(i,j)` of the result
    /// is `self[perm[i], perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> SymMatrix {
        assert_eq!(perm.len(), self.dim, "permutation length");
        let mut out = SymMatrix::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.data[i * self.dim + j] = self.get(perm[i], perm[j]);
            }
        }
        out
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ` reconstructing the source.
#[derive(Debug, Clone)]
pub struct CholFactor {
    dim: usize,
    lower: Vec<f64>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Solves `(L·Lᵀ) x = b` by forward then backward substitution.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if b.len() != self.dim {
            return Err(LinalgError::ShapeMismatch("solve_vec rhs length"));
        }
        let n = self.dim;
        let l = &self.lower;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut acc = x[i];
            for k in 0..i {
                acc -= l[i * n + k] * x[k];
            }
            x[i] = acc / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc -= l[k * n + i] * x[k];
            }
            x[i] = acc / l[i * n + i];
        }
        Ok(x)
    }

    /// Solves `(L·Lᵀ) X = B` column by column.
    pub fn solve_mat(&self, b: &Matrix) -> Result<Matrix, LinalgError> {
        if b.rows() != self.dim {
            return Err(LinalgError::ShapeMismatch("solve_mat rhs rows"));
        }
        let mut out = Matrix::zeros(b.rows(), b.cols());
        let mut col = vec![0.0; b.rows()];
        for j in 0..b.cols() {
            for i in 0..b.rows() {
                col[i] = b.get(i, j);
            }
            let x = self.solve_vec(&col)?;
            for i in 0..b.rows() {
                out.set(i, j, x[i]);
            }
        }
        Ok(out)
    }

    /// The inverse as a dense symmetric matrix, via `dim` unit solves.
    /// Mirrored entries are averaged to absorb rounding asymmetry.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut cols = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve_vec(&e).expect("unit vector has factor dim");
            e[j] = 0.0;
            for i in 0..n {
                cols.set(i, j, col[i]);
            }
        }
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                out.set_sym(i, j, 0.5 * (cols.get(i, j) + cols.get(j, i)));
            }
        }
        out
    }
}

/// Cholesky factorization of a symmetric positive definite matrix.
pub fn cholesky(m: &SymMatrix) -> Result<CholFactor, LinalgError> {
    let n = m.dim();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = m.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut acc = m.get(i, j);
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = acc / dj;
        }
    }
    Ok(CholFactor { dim: n, lower: l })
}

/// Cholesky with the retry policy for near-singular matrices: up to
/// [`JITTER_RETRIES`] additions of `JITTER_STEP ×` mean diagonal. Returns the
/// factor and the total jitter added to the diagonal.
pub fn cholesky_with_jitter(m: &SymMatrix) -> Result<(CholFactor, f64), LinalgError> {
    match cholesky(m) {
        Ok(f) => return Ok((f, 0.0)),
        Err(LinalgError::NotPositiveDefinite) => {}
        Err(e) => return Err(e),
    }
    let mean_diag = m.mean_diag();
    let step = if mean_diag > 0.0 { JITTER_STEP * mean_diag } else { JITTER_STEP };
    let mut jittered = m.clone();
    let mut total = 0.0;
    for _ in 0..JITTER_RETRIES {
        jittered = jittered.add_scaled_identity(step);
        total += step;
        if let Ok(f) = cholesky(&jittered) {
            return Ok((f, total));
        }
    }
    Err(LinalgError::NotPositiveDefinite)
}

/// `ln |M|` from a factor of `M`: `2·Σᵢ ln Lᵢᵢ`.
pub fn log_det(f: &CholFactor) -> f64 {
    let n = f.dim;
    2.0 * (0..n).map(|i| f.lower[i * n + i].ln()).sum::<f64>()
}

/// Length of the packed lower triangle for dimension `n`.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`packed_len`]; `None` if `len` is not triangular.
pub fn packed_dim(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (packed_len(n) == len).then_some(n)
}

fn unpack_factor(raw_lower: &[f64]) -> (usize, Vec<f64>) {
    let n = packed_dim(raw_lower.len())
        .unwrap_or_else(|| panic!("raw factor length {} is not n(n+1)/2", raw_lower.len()));
    let mut l = vec![0.0; n * n];
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            l[i * n + j] = if i == j {
                softplus(raw_lower[idx]) + EPS_MIN
            } else {
                raw_lower[idx]
            };
            idx += 1;
        }
    }
    (n, l)
}

/// Builds a positive definite matrix from an unconstrained packed lower
/// triangle: diagonal entries are mapped through `softplus(·) + EPS_MIN`,
/// off-diagonals pass through, and the result is `L·Lᵀ + jitter·I`.
///
/// The packed layout is row-major over the lower triangle,
/// `idx = i(i+1)/2 + j` for `j ≤ i`.
pub fn assemble_pd(raw_lower: &[f64], jitter: f64) -> SymMatrix {
    let (n, l) = unpack_factor(raw_lower);
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..=j.min(i) {
                acc += l[i * n + k] * l[j * n + k];
            }
            m.set_sym(i, j, acc);
        }
    }
    if jitter != 0.0 {
        m = m.add_scaled_identity(jitter);
    }
    m
}

/// Pullback of a loss gradient through [`assemble_pd`].
///
/// Given `G = ∂loss/∂M` (symmetric) for `M = L·Lᵀ + jitter·I`, returns
/// `∂loss/∂raw` in the same packed layout. Uses `∂loss/∂L = 2·G·L` and chains
/// the diagonal through the softplus derivative.
pub fn assemble_pd_backward(raw_lower: &[f64], grad: &SymMatrix) -> Vec<f64> {
    let (n, l) = unpack_factor(raw_lower);
    assert_eq!(grad.dim(), n, "gradient dim must match factor dim");
    let mut out = vec![0.0; raw_lower.len()];
    let mut idx = 0;
    for i in 0..n {
        for j in 0..=i {
            // (2 G L)[i][j]
            let mut gl = 0.0;
            for k in 0..n {
                gl += grad.get(i, k) * l[k * n + j];
            }
            gl *= 2.0;
            out[idx] = if i == j { gl * sigmoid(raw_lower[idx]) } else { gl };
            idx += 1;
        }
    }
    out
}

/// Observed-dimension specification for Gaussian conditioning.
#[derive(Debug, Clone)]
pub struct ConditionSpec {
    observed_indices: Vec<usize>,
    observed_values: Vec<f64>,
}

impl ConditionSpec {
    pub fn new(observed_indices: Vec<usize>, observed_values: Vec<f64>) -> Result<Self, LinalgError> {
        if observed_indices.len() != observed_values.len() {
            return Err(LinalgError::InvalidConditionSpec("index/value length mismatch"));
        }
        if observed_indices.is_empty() {
            return Err(LinalgError::InvalidConditionSpec("no observed indices"));
        }
        let mut sorted = observed_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != observed_indices.len() {
            return Err(LinalgError::InvalidConditionSpec("duplicate observed index"));
        }
        Ok(Self { observed_indices, observed_values })
    }

    pub fn observed_indices(&self) -> &[usize] {
        &self.observed_indices
    }

    pub fn observed_values(&self) -> &[f64] {
        &self.observed_values
    }
}

/// Conditions `N(mean, cov)` on the observed coordinates in `spec`.
///
/// Returns the conditional mean and covariance of the unobserved block:
/// `mean_h + Σ12·Σ22⁻¹·(v − mean_o)` and `Σ11 − Σ12·Σ22⁻¹·Σ21`. The observed
/// block is factored with the jitter retry policy; if it stays singular the
/// call fails with [`LinalgError::SingularObservedBlock`].
pub fn condition_gaussian(
    mean: &[f64],
    cov: &SymMatrix,
    spec: &ConditionSpec,
) -> Result<(Vec<f64>, SymMatrix), LinalgError> {
    let dim = cov.dim();
    if mean.len() != dim {
        return Err(LinalgError::ShapeMismatch("condition_gaussian mean length"));
    }
    let mut observed = vec![false; dim];
    for &i in spec.observed_indices() {
        if i >= dim {
            return Err(LinalgError::InvalidConditionSpec("observed index out of range"));
        }
        observed[i] = true;
    }
    let hidden: Vec<usize> = (0..dim).filter(|&i| !observed[i]).collect();
    if hidden.is_empty() {
        return Err(LinalgError::InvalidConditionSpec("no unobserved index left"));
    }
    let obs = spec.observed_indices();
    let n_o = obs.len();
    let n_h = hidden.len();

    let mut sigma22 = SymMatrix::zeros(n_o);
    for a in 0..n_o {
        for b in 0..=a {
            sigma22.set_sym(a, b, cov.get(obs[a], obs[b]));
        }
    }
    let mut sigma12 = Matrix::zeros(n_h, n_o);
    for a in 0..n_h {
        for b in 0..n_o {
            sigma12.set(a, b, cov.get(hidden[a], obs[b]));
        }
    }

    let (factor, _) =
        cholesky_with_jitter(&sigma22).map_err(|_| LinalgError::SingularObservedBlock)?;

    let mut delta = vec![0.0; n_o];
    for b in 0..n_o {
        delta[b] = spec.observed_values()[b] - mean[obs[b]];
    }
    let w = factor.solve_vec(&delta)?;
    let mut cond_mean = vec![0.0; n_h];
    for a in 0..n_h {
        let mut acc = mean[hidden[a]];
        for b in 0..n_o {
            acc += sigma12.get(a, b) * w[b];
        }
        cond_mean[a] = acc;
    }

    // Σ21 = Σ12ᵀ; W = Σ22⁻¹ Σ21, cond_cov = Σ11 − Σ12 W, symmetrized.
    let mut sigma21 = Matrix::zeros(n_o, n_h);
    for a in 0..n_o {
        for b in 0..n_h {
            sigma21.set(a, b, sigma12.get(b, a));
        }
    }
    let w_mat = factor.solve_mat(&sigma21)?;
    let correction = sigma12.matmul(&w_mat);
    let mut cond_cov = SymMatrix::zeros(n_h);
    for a in 0..n_h {
        for b in 0..=a {
            let s11 = cov.get(hidden[a], hidden[b]);
            let v = s11 - 0.5 * (correction.get(a, b) + correction.get(b, a));
            cond_cov.set_sym(a, b, v);
        }
    }
    Ok((cond_mean, cond_cov))
}

/// Smallest eigenvalue of a symmetric matrix to absolute tolerance 1e-8,
/// by bisection on the success of a shifted Cholesky factorization.
pub fn min_eigenvalue(m: &SymMatrix) -> f64 {
    let n = m.dim();
    // Gershgorin interval contains every eigenvalue.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let mut radius = 0.0;
        for j in 0..n {
            if j != i {
                radius += m.get(i, j).abs();
            }
        }
        lo = lo.min(m.get(i, i) - radius);
        hi = hi.max(m.get(i, i) + radius);
    }
    let mut lo = lo - 1.0; // m − lo·I strictly PD
    let mut hi = hi + 1.0; // m − hi·I not PD
    for _ in 0..200 {
        if hi - lo <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if cholesky(&m.add_scaled_identity(-mid)).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
