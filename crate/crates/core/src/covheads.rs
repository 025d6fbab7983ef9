//! Predictive covariance construction for every method.
//!
//! The Taylor-induced covariance combines the mean network's input
//! derivatives with three learned factors:
//! `Σ(x) = k1·J·Jᵀ + k2·Gram(H) + k3`, where `Gram(H)ᵢⱼ = Tr(HᵢHⱼ)`.
//! `k1, k2 ≥ 0` and `k3` is positive definite, so Σ is PD by construction —
//! the two derivative terms are PSD (a Gram matrix and a Jacobian outer
//! product) and `k3` carries a strictly positive floor.
//!
//! Baseline heads map raw network outputs to diagonal or full-Cholesky
//! covariances. Raw-to-parameter decoders come with matching pullbacks so the
//! losses can chain gradients to head outputs without a tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffmlp::DiffEval;
use crate::linalg::{
    assemble_pd, assemble_pd_backward, packed_dim, sigmoid, softplus, LinalgError, SymMatrix,
    EPS_MIN,
};

/// TIC factors: two nonnegative scales and one PD offset.
#[derive(Debug, Clone)]
pub struct TicParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: SymMatrix,
}

/// A full Gaussian prediction at one input.
#[derive(Debug, Clone)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

/// Raw head width needed by [`tic_head_decode`] for output dimension `n`.
pub fn tic_raw_len(n: usize) -> usize {
    2 + n * (n + 1) / 2
}

/// Gram matrix of Hessian slices: entry `(i,j) = Tr(HᵢHⱼ)`, the Frobenius
/// inner product for symmetric slices. Always PSD.
pub fn hessian_gram(d: &DiffEval) -> Result<SymMatrix, LinalgError> {
    let (n, m) = (d.n, d.m);
    if d.hessian.len() != n * m * m {
        return Err(LinalgError::ShapeMismatch("hessian tensor length"));
    }
    let mut gram = SymMatrix::zeros(n);
    for i in 0..n {
        let hi = d.hess_slice(i);
        for j in 0..=i {
            let hj = d.hess_slice(j);
            let mut acc = 0.0;
            for a in 0..m * m {
                acc += hi[a] * hj[a];
            }
            gram.set_sym(i, j, acc);
        }
    }
    Ok(gram)
}

/// `k1·J·Jᵀ + k2·Gram(H) + k3`.
pub fn tic_covariance(d: &DiffEval, p: &TicParams) -> Result<SymMatrix, LinalgError> {
    let (n, m) = (d.n, d.m);
    if d.jacobian.len() != n * m {
        return Err(LinalgError::ShapeMismatch("jacobian length"));
    }
    if p.k3.dim() != n {
        return Err(LinalgError::ShapeMismatch("k3 dimension"));
    }
    let gram = hessian_gram(d)?;
    let mut cov = p.k3.clone();
    for i in 0..n {
        let ji = d.jac_row(i);
        for j in 0..=i {
            let jj = d.jac_row(j);
            let mut dot = 0.0;
            for a in 0..m {
                dot += ji[a] * jj[a];
            }
            let v = cov.get(i, j) + p.k1 * dot + p.k2 * gram.get(i, j);
            cov.set_sym(i, j, v);
        }
    }
    Ok(cov)
}

/// Decodes a raw head output of length `2 + n(n+1)/2` into TIC factors:
/// `k1 = softplus(raw[0])`, `k2 = softplus(raw[1])`,
/// `k3 = assemble_pd(raw[2:])`.
pub fn tic_head_decode(raw: &[f64]) -> Result<TicParams, LinalgError> {
    if raw.len() < 3 || packed_dim(raw.len() - 2).is_none() {
        return Err(LinalgError::ShapeMismatch("tic head raw length"));
    }
    Ok(TicParams {
        k1: softplus(raw[0]),
        k2: softplus(raw[1]),
        k3: assemble_pd(&raw[2..], 0.0),
    })
}

/// Pullback through [`tic_head_decode`]: maps gradients with respect to
/// `(k1, k2, k3)` back to the raw head output.
pub fn tic_head_backward(raw: &[f64], d_k1: f64, d_k2: f64, d_k3: &SymMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    out.push(d_k1 * sigmoid(raw[0]));
    out.push(d_k2 * sigmoid(raw[1]));
    out.extend(assemble_pd_backward(&raw[2..], d_k3));
    out
}

/// Diagonal covariance `diag((softplus(rawᵢ) + ε)²)`, strictly PD.
pub fn diag_covariance(raw: &[f64]) -> SymMatrix {
    let d: Vec<f64> = raw.iter().map(|&r| (softplus(r) + EPS_MIN).powi(2)).collect();
    SymMatrix::diag(&d)
}

/// Per-dimension variances of [`diag_covariance`] without matrix packaging.
pub fn diag_variances(raw: &[f64]) -> Vec<f64> {
    raw.iter().map(|&r| (softplus(r) + EPS_MIN).powi(2)).collect()
}

/// Pullback through [`diag_variances`]: `∂varᵢ/∂rawᵢ = 2(softplus+ε)·σ(raw)`.
pub fn diag_covariance_backward(raw: &[f64], d_var: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(d_var)
        .map(|(&r, &g)| g * 2.0 * (softplus(r) + EPS_MIN) * sigmoid(r))
        .collect()
}

/// Unconstrained full covariance via the packed Cholesky parameterization.
pub fn full_cholesky_covariance(raw: &[f64]) -> SymMatrix {
    assemble_pd(raw, 0.0)
}

/// Pullback through [`full_cholesky_covariance`].
pub fn full_cholesky_backward(raw: &[f64], grad: &SymMatrix) -> Vec<f64> {
    assemble_pd_backward(raw, grad)
}

/// Empirical covariance of the second-order Taylor response
/// `J·ε + ½ εᵀHε` under `ε ~ N(0, σ²I_m)`. Test-support operation: verifies
/// that the linear and quadratic terms contribute `σ²JJᵀ` and
/// `σ⁴·Tr(HᵢHⱼ)/2` with vanishing cross term.
pub fn monte_carlo_taylor_cov(d: &DiffEval, sigma: f64, n_draws: usize, seed: u64) -> SymMatrix {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(n_draws >= 10_000, "need at least 1e4 draws");
    let (n, m) = (d.n, d.m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut sum = vec![0.0; n];
    let mut sum_outer = vec![0.0; n * n];
    let mut eps = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut he = vec![0.0; m];
    for _ in 0..n_draws {
        for e in eps.iter_mut() {
            let z: f64 = normal.sample(&mut rng);
            *e = sigma * z;
        }
        for i in 0..n {
            let jrow = d.jac_row(i);
            let mut lin = 0.0;
            for a in 0..m {
                lin += jrow[a] * eps[a];
            }
            let h = d.hess_slice(i);
            for a in 0..m {
                let row = &h[a * m..(a + 1) * m];
                let mut acc = 0.0;
                for b in 0..m {
                    acc += row[b] * eps[b];
                }
                he[a] = acc;
            }
            let mut quad = 0.0;
            for a in 0..m {
                quad += eps[a] * he[a];
            }
            v[i] = lin + 0.5 * quad;
        }
        for i in 0..n {
            sum[i] += v[i];
            for j in 0..n {
                sum_outer[i * n + j] += v[i] * v[j];
            }
        }
    }
    let nf = n_draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = sum_outer[i * n + j] / nf - mean[i] * mean[j];
        }
    }
    SymMatrix::from_flat(n, cov)
}
