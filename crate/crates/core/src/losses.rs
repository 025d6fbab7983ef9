//! Training objectives for all six methods, each with analytic gradients.
//!
//! Gradient convention: `grad_mean` is ∂loss/∂ŷ with residual `r = y − ŷ`,
//! so squared-error terms contribute `−2r`. `grad_cov`/`grad_var` pair with
//! covariance perturbations through the Frobenius inner product:
//! `d loss = ⟨grad_cov, dΣ⟩_F`.
//!
//! The TIC objective treats J and H as constants of the current mean network
//! (no gradient flows into the mean parameters through Σ): differentiating
//! through them would need third- and fourth-order derivatives of the mean
//! network. The mean still receives its signal through the Mahalanobis
//! residual, and Σ tracks the evolving geometry across steps.

use thiserror::Error;

use crate::covheads::{hessian_gram, tic_covariance, TicParams};
use crate::diffmlp::DiffEval;
use crate::linalg::{cholesky_with_jitter, log_det, LinalgError, SymMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("non-positive variance at dimension {0}")]
    NonPositiveVariance(usize),
    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),
}

impl From<LinalgError> for LossError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::ShapeMismatch(s) => LossError::ShapeMismatch(s),
            _ => LossError::NotPositiveDefinite,
        }
    }
}

/// Gradient with respect to the covariance head output, shaped by head kind.
#[derive(Debug, Clone)]
pub enum CovGrad {
    Full(SymMatrix),
    Diag(Vec<f64>),
    None,
}

/// Per-sample loss value and gradients.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// ∂loss/∂ŷ
    pub grad_mean: Vec<f64>,
    pub grad_cov: CovGrad,
}

/// TIC loss value and gradients with respect to the decoded factors.
/// `grad_k3` doubles as ∂loss/∂Σ since Σ depends on k3 additively.
#[derive(Debug, Clone)]
pub struct TicLossEval {
    pub value: f64,
    pub grad_mean: Vec<f64>,
    pub grad_k1: f64,
    pub grad_k2: f64,
    pub grad_k3: SymMatrix,
}

/// Training method selector. `beta` is only meaningful for `BetaNll`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodKind {
    Tic,
    NllFull,
    NllDiag,
    BetaNll { beta: f64 },
    Faithful,
    Mse,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Tic => "tic",
            MethodKind::NllFull => "nll_full",
            MethodKind::NllDiag => "nll_diag",
            MethodKind::BetaNll { .. } => "beta_nll",
            MethodKind::Faithful => "faithful",
            MethodKind::Mse => "mse",
        }
    }

    /// Parses a method name (`nll`/`diag` accepted as shorthands); `beta`
    /// is attached to `beta_nll` and must lie in [0,1].
    pub fn parse(name: &str, beta: f64) -> Option<MethodKind> {
        let m = match name {
            "tic" => MethodKind::Tic,
            "nll_full" | "nll" => MethodKind::NllFull,
            "nll_diag" | "diag" => MethodKind::NllDiag,
            "beta_nll" => {
                if !(0.0..=1.0).contains(&beta) {
                    return None;
                }
                MethodKind::BetaNll { beta }
            }
            "faithful" => MethodKind::Faithful,
            "mse" => MethodKind::Mse,
            _ => return None,
        };
        Some(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full Gaussian negative log-likelihood `log|Σ| + rᵀΣ⁻¹r` (constants
/// dropped). Near-singular Σ gets the jitter retry policy before failing.
pub fn nll_full(residual: &[f64], cov: &SymMatrix) -> Result<LossEval, LossError> {
    if residual.len() != cov.dim() {
        return Err(LossError::ShapeMismatch("nll residual length"));
    }
    let (factor, _) = cholesky_with_jitter(cov)?;
    let alpha = factor.solve_vec(residual)?; // Σ⁻¹ r
    let value = log_det(&factor) + dot(residual, &alpha);
    let grad_mean: Vec<f64> = alpha.iter().map(|v| -2.0 * v).collect();
    // ∂/∂Σ = Σ⁻¹ − Σ⁻¹rrᵀΣ⁻¹
    let mut grad_cov = factor.inverse();
    let n = cov.dim();
    for i in 0..n {
        for j in 0..=i {
            let v = grad_cov.get(i, j) - alpha[i] * alpha[j];
            grad_cov.set_sym(i, j, v);
        }
    }
    Ok(LossEval { value, grad_mean, grad_cov: CovGrad::Full(grad_cov) })
}

/// β-weighted per-dimension NLL: each term is
/// `⌊σ^{2β}⌋ · (log σ² + r²/σ²)` where the leading factor is numerically
/// present but detached from the gradient. β = 0 is the diagonal NLL;
/// β = 1 restores the plain squared-error mean gradient.
pub fn beta_nll(residual: &[f64], var: &[f64], beta: f64) -> Result<LossEval, LossError> {
    assert!((0.0..=1.0).contains(&beta), "beta must lie in [0,1]");
    if residual.len() != var.len() {
        return Err(LossError::ShapeMismatch("beta_nll var length"));
    }
    let mut value = 0.0;
    let mut grad_mean = vec![0.0; residual.len()];
    let mut grad_var = vec![0.0; residual.len()];
    for i in 0..residual.len() {
        let v = var[i];
        if v <= 0.0 {
            return Err(LossError::NonPositiveVariance(i));
        }
        let r = residual[i];
        let factor = v.powf(beta); // stop-gradient
        value += factor * (v.ln() + r * r / v);
        grad_mean[i] = -2.0 * r * v.powf(beta - 1.0);
        grad_var[i] = factor * (1.0 / v - r * r / (v * v));
    }
    Ok(LossEval { value, grad_mean, grad_cov: CovGrad::Diag(grad_var) })
}

/// Diagonal Gaussian NLL — β-NLL at β = 0.
pub fn nll_diag(residual: &[f64], var: &[f64]) -> Result<LossEval, LossError> {
    beta_nll(residual, var, 0.0)
}

/// Faithful split: the mean is trained by squared error alone, the
/// covariance by NLL on a detached residual.
/// `value = rᵀr + NLL(⌊r⌋, Σ)`; `grad_mean = −2r` with no Σ dependence;
/// `grad_cov` is the NLL covariance gradient.
pub fn faithful_loss(residual: &[f64], cov: &SymMatrix) -> Result<LossEval, LossError> {
    let nll = nll_full(residual, cov)?;
    let value = dot(residual, residual) + nll.value;
    let grad_mean: Vec<f64> = residual.iter().map(|r| -2.0 * r).collect();
    Ok(LossEval { value, grad_mean, grad_cov: nll.grad_cov })
}

/// Plain squared error `rᵀr`; evaluation treats the covariance as identity.
pub fn mse_loss(residual: &[f64]) -> LossEval {
    LossEval {
        value: dot(residual, residual),
        grad_mean: residual.iter().map(|r| -2.0 * r).collect(),
        grad_cov: CovGrad::None,
    }
}

/// NLL through the TIC covariance with J and H held constant. Chains the
/// covariance gradient into the decoded factors:
/// `∂/∂k1 = ⟨G, JJᵀ⟩`, `∂/∂k2 = ⟨G, Gram(H)⟩`, `∂/∂k3 = G`.
pub fn tic_nll(residual: &[f64], d: &DiffEval, p: &TicParams) -> Result<TicLossEval, LossError> {
    let cov = tic_covariance(d, p)?;
    let nll = nll_full(residual, &cov)?;
    let g = match nll.grad_cov {
        CovGrad::Full(g) => g,
        _ => unreachable!("nll_full always yields a full covariance gradient"),
    };

    let n = d.n;
    let mut jjt = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            jjt.set_sym(i, j, dot(d.jac_row(i), d.jac_row(j)));
        }
    }
    let gram = hessian_gram(d)?;
    Ok(TicLossEval {
        value: nll.value,
        grad_mean: nll.grad_mean,
        grad_k1: g.frob_inner(&jjt),
        grad_k2: g.frob_inner(&gram),
        grad_k3: g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covheads::tic_head_decode;
    use crate::linalg::packed_len;
    use crate::oracle;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a}");
    }

    #[test]
    fn nll_unit_covariance_by_hand() {
        let e = nll_full(&[1.0, 1.0], &SymMatrix::identity(2)).unwrap();
        assert_close(e.value, 2.0, 1e-15);
        assert_eq!(e.grad_mean, vec![-2.0, -2.0]);
    }

    #[test]
    fn nll_zero_residual_log_det_only() {
        let e = std::f64::consts::E;
        let le = nll_full(&[0.0, 0.0], &SymMatrix::diag(&[e, e])).unwrap();
        assert_close(le.value, 2.0, 1e-12);
        match le.grad_cov {
            CovGrad::Full(g) => {
                assert_close(g.get(0, 0), 1.0 / e, 1e-12);
                assert_close(g.get(1, 1), 1.0 / e, 1e-12);
                assert_close(g.get(0, 1), 0.0, 1e-12);
            }
            _ => panic!("full gradient expected"),
        }
    }

    #[test]
    fn nll_rejects_indefinite_covariance() {
        let cov = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert_eq!(nll_full(&[0.0, 0.0], &cov).unwrap_err(), LossError::NotPositiveDefinite);
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        assert!(oracle::fd_suite_nll_full(100, 101) <= 1e-6);
    }

    #[test]
    fn beta_zero_is_diagonal_nll() {
        let r = [0.5, -1.2];
        let var = [0.8, 2.5];
        let a = beta_nll(&r, &var, 0.0).unwrap();
        let b = nll_diag(&r, &var).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.grad_mean, b.grad_mean);
    }

    #[test]
    fn beta_one_restores_squared_error_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 1 + rng.random_range(0..4);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..4.0)).collect();
            let e = beta_nll(&r, &var, 1.0).unwrap();
            for i in 0..n {
                // var^(β−1) at β=1 is powf(·, 0) = 1 exactly
                assert_eq!(e.grad_mean[i], -2.0 * r[i]);
            }
        }
    }

    #[test]
    fn beta_half_unit_case() {
        let e = beta_nll(&[1.0], &[1.0], 0.5).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn beta_rejects_non_positive_variance() {
        assert_eq!(
            beta_nll(&[1.0, 1.0], &[1.0, 0.0], 0.5).unwrap_err(),
            LossError::NonPositiveVariance(1)
        );
    }

    #[test]
    fn beta_gradients_match_frozen_factor_finite_differences() {
        for beta in [0.0, 0.25, 0.5, 1.0] {
            assert!(oracle::fd_suite_beta_nll(100, 211, beta) <= 1e-5, "beta {beta}");
        }
    }

    #[test]
    fn faithful_identity_covariance_by_hand() {
        let r = [0.5, -1.5];
        let e = faithful_loss(&r, &SymMatrix::identity(2)).unwrap();
        assert_eq!(e.grad_mean, vec![-1.0, 3.0]);
        match e.grad_cov {
            CovGrad::Full(g) => {
                // I − rrᵀ
                assert_close(g.get(0, 0), 1.0 - 0.25, 1e-12);
                assert_close(g.get(0, 1), -r[0] * r[1], 1e-12);
                assert_close(g.get(1, 1), 1.0 - 2.25, 1e-12);
            }
            _ => panic!("full gradient expected"),
        }
    }

    #[test]
    fn faithful_zero_residual() {
        let cov = SymMatrix::diag(&[2.0, 0.5]);
        let e = faithful_loss(&[0.0, 0.0], &cov).unwrap();
        assert_eq!(e.grad_mean, vec![0.0, 0.0]);
        match e.grad_cov {
            CovGrad::Full(g) => {
                assert_close(g.get(0, 0), 0.5, 1e-12);
                assert_close(g.get(1, 1), 2.0, 1e-12);
            }
            _ => panic!("full gradient expected"),
        }
    }

    #[test]
    fn faithful_mean_gradient_ignores_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = 1 + rng.random_range(0..4);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = faithful_loss(&r, &oracle::random_pd(&mut rng, n)).unwrap();
            let b = faithful_loss(&r, &oracle::random_pd(&mut rng, n)).unwrap();
            assert_eq!(a.grad_mean, b.grad_mean);
            for i in 0..n {
                assert_eq!(a.grad_mean[i], -2.0 * r[i]);
            }
        }
    }

    #[test]
    fn faithful_gradients_match_finite_differences() {
        assert!(oracle::fd_suite_faithful(100, 307) <= 1e-5);
    }

    #[test]
    fn mse_by_hand() {
        assert_eq!(mse_loss(&[0.0, 0.0]).value, 0.0);
        let e = mse_loss(&[3.0, 4.0]);
        assert_eq!(e.value, 25.0);
        assert_eq!(e.grad_mean, vec![-6.0, -8.0]);
        assert!(matches!(e.grad_cov, CovGrad::None));
    }

    #[test]
    fn mse_gradients_match_finite_differences() {
        assert!(oracle::fd_suite_mse(100, 401) <= 1e-5);
    }

    #[test]
    fn tic_nll_reduces_to_full_nll_when_scales_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (n, m) = (3, 2);
            let d = oracle::random_diffeval(&mut rng, n, m);
            let k3 = oracle::random_pd(&mut rng, n);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = TicParams { k1: 0.0, k2: 0.0, k3: k3.clone() };
            let tic = tic_nll(&r, &d, &p).unwrap();
            let plain = nll_full(&r, &k3).unwrap();
            assert_close(tic.value, plain.value, 1e-12);
            for i in 0..n {
                assert_close(tic.grad_mean[i], plain.grad_mean[i], 1e-12);
            }
        }
    }

    #[test]
    fn tic_nll_scalar_worked_case() {
        let d = DiffEval { n: 1, m: 1, value: vec![0.0], jacobian: vec![2.0], hessian: vec![3.0] };
        let p = TicParams { k1: 1.0, k2: 1.0, k3: SymMatrix::diag(&[0.25]) };
        let e = tic_nll(&[1.0], &d, &p).unwrap();
        assert_close(e.value, 13.25_f64.ln() + 1.0 / 13.25, 1e-12);
        assert_close(e.value, 2.6594693, 1e-6);
    }

    #[test]
    fn tic_gradients_match_finite_differences() {
        assert!(oracle::fd_suite_tic_nll(100, 503) <= 1e-5);
    }

    #[test]
    fn tic_k3_gradient_chains_through_factor_parameterization() {
        // end-to-end: raw k3 → assemble_pd → tic covariance → NLL
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, m) = (2, 3);
        let d = oracle::random_diffeval(&mut rng, n, m);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = (0..packed_len(n)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k1 = 0.4;
        let k2 = 0.3;

        let value_at = |raw: &[f64]| -> f64 {
            let p = TicParams {
                k1,
                k2,
                k3: crate::linalg::assemble_pd(raw, 0.0),
            };
            tic_nll(&r, &d, &p).unwrap().value
        };
        let p = TicParams { k1, k2, k3: crate::linalg::assemble_pd(&raw, 0.0) };
        let e = tic_nll(&r, &d, &p).unwrap();
        let chained = crate::linalg::assemble_pd_backward(&raw, &e.grad_k3);
        let grads_fd = oracle::fd_grad(&value_at, &raw, 1e-5);
        for i in 0..raw.len() {
            assert!((chained[i] - grads_fd[i]).abs() <= 1e-5 * grads_fd[i].abs().max(1.0));
        }
    }

    #[test]
    fn losses_are_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let n = 2 + rng.random_range(0..4);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let cov = oracle::random_pd(&mut rng, n);
            let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);

            let rp: Vec<f64> = perm.iter().map(|&i| r[i]).collect();
            let covp = cov.permuted(&perm);
            let varp: Vec<f64> = perm.iter().map(|&i| var[i]).collect();

            assert_close(
                nll_full(&r, &cov).unwrap().value,
                nll_full(&rp, &covp).unwrap().value,
                1e-12,
            );
            assert_close(
                beta_nll(&r, &var, 0.5).unwrap().value,
                beta_nll(&rp, &varp, 0.5).unwrap().value,
                1e-12,
            );
            assert_close(
                faithful_loss(&r, &cov).unwrap().value,
                faithful_loss(&rp, &covp).unwrap().value,
                1e-12,
            );
            assert_close(mse_loss(&r).value, mse_loss(&rp).value, 1e-12);
        }
    }

    #[test]
    fn method_kind_names_roundtrip() {
        for name in ["tic", "nll_full", "nll_diag", "beta_nll", "faithful", "mse"] {
            let m = MethodKind::parse(name, 0.5).unwrap();
            assert_eq!(m.name(), name);
        }
        assert!(MethodKind::parse("unknown", 0.5).is_none());
        assert!(MethodKind::parse("beta_nll", 1.5).is_none());
        assert_eq!(tic_head_decode(&[0.0; 5]).unwrap().k3.dim(), 2);
    }
}
