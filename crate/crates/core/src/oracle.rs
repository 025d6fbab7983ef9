//! Slow, independent reference implementations used to validate the fast
//! paths. Nothing here is called by training code; tests and the CLI
//! self-check compare against these.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covheads::{tic_head_decode, tic_raw_len, TicParams};
use crate::diffmlp::DiffEval;
use crate::linalg::{assemble_pd, assemble_pd_backward, packed_len, Matrix, SymMatrix};
use crate::losses::{self, CovGrad};

/// Infinity-norm relative error with a unit floor: `max|a−b| / max(1, max|b|)`.
/// The floor keeps near-zero references (e.g. vanishing Hessians) from
/// inflating the ratio.
pub fn rel_err_inf(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "rel_err_inf length");
    let max_diff = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    let scale = want.iter().map(|v| v.abs()).fold(1.0_f64, f64::max);
    max_diff / scale
}

/// Central-difference Jacobian of a vector map, n×m row-major.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], n: usize, h: f64) -> Vec<f64> {
    let m = x.len();
    let mut jac = vec![0.0; n * m];
    let mut xp = x.to_vec();
    for j in 0..m {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..n {
            jac[i * m + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Central-difference Hessian tensor of a vector map, n×m×m.
/// Off-diagonal entries use the four-point stencil
/// `(f(+a+b) − f(+a−b) − f(−a+b) + f(−a−b)) / 4h²`.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], n: usize, h: f64) -> Vec<f64> {
    let m = x.len();
    let mm = m * m;
    let mut hess = vec![0.0; n * mm];
    let f0 = f(x);
    let mut xp = x.to_vec();
    for a in 0..m {
        // diagonal: (f(+a) − 2f(0) + f(−a)) / h²
        xp[a] = x[a] + h;
        let fp = f(&xp);
        xp[a] = x[a] - h;
        let fm = f(&xp);
        xp[a] = x[a];
        for i in 0..n {
            hess[i * mm + a * m + a] = (fp[i] - 2.0 * f0[i] + fm[i]) / (h * h);
        }
        for b in a + 1..m {
            xp[a] = x[a] + h;
            xp[b] = x[b] + h;
            let fpp = f(&xp);
            xp[b] = x[b] - h;
            let fpm = f(&xp);
            xp[a] = x[a] - h;
            xp[b] = x[b] + h;
            let fmp = f(&xp);
            xp[b] = x[b] - h;
            let fmm = f(&xp);
            xp[a] = x[a];
            xp[b] = x[b];
            for i in 0..n {
                let v = (fpp[i] - fpm[i] - fmp[i] + fmm[i]) / (4.0 * h * h);
                hess[i * mm + a * m + b] = v;
                hess[i * mm + b * m + a] = v;
            }
        }
    }
    hess
}

/// Central-difference gradient of a scalar function.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Random PD matrix `AAᵀ + c·I` with `c ∈ [0.1, 1)`; well-conditioned by
/// construction so finite-difference probes stay inside the PD cone.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for v in a.row_mut(i) {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a.get(i, k) * a.get(j, k);
            }
            m.set_sym(i, j, acc);
        }
    }
    m.add_scaled_identity(0.1 + rng.random_range(0.0..0.9))
}

/// Random derivative triple with symmetric Hessian slices; stands in for a
/// network evaluation wherever only shapes and symmetry matter.
pub fn random_diffeval(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DiffEval {
    let mut d = DiffEval {
        n,
        m,
        value: vec![0.0; n],
        jacobian: vec![0.0; n * m],
        hessian: vec![0.0; n * m * m],
    };
    for v in d.value.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for v in d.jacobian.iter_mut() {
        *v = rng.random_range(-2.0..2.0);
    }
    for i in 0..n {
        let base = i * m * m;
        for a in 0..m {
            for b in 0..=a {
                let v = rng.random_range(-2.0..2.0);
                d.hessian[base + a * m + b] = v;
                d.hessian[base + b * m + a] = v;
            }
        }
    }
    d
}

fn random_sym_direction(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
    let mut d = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            d.set_sym(i, j, rng.random_range(-1.0..1.0));
        }
    }
    d
}

/// |analytic − fd| with the unit-floored relative scale.
fn scalar_rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

const FD_STEP: f64 = 1e-5;

/// Checks the mean gradient of a loss by perturbing ŷ (so `r = r0 − δ`).
fn mean_grad_rel_err(value_at_residual: &dyn Fn(&[f64]) -> f64, r0: &[f64], grad_mean: &[f64]) -> f64 {
    let to_residual = |yhat: &[f64]| -> f64 {
        let r: Vec<f64> = r0.iter().zip(yhat).map(|(r, y)| r - y).collect();
        value_at_residual(&r)
    };
    let fd = fd_grad(&to_residual, &vec![0.0; r0.len()], FD_STEP);
    rel_err_inf(grad_mean, &fd)
}

/// Checks a covariance gradient along one random symmetric direction:
/// `d/dt value(Σ + tD)` against `⟨G, D⟩`.
fn cov_grad_rel_err(
    value_at_cov: &dyn Fn(&SymMatrix) -> f64,
    cov: &SymMatrix,
    grad_cov: &SymMatrix,
    dir: &SymMatrix,
) -> f64 {
    let plus = cov.add(&dir.scaled(FD_STEP));
    let minus = cov.add(&dir.scaled(-FD_STEP));
    let fd = (value_at_cov(&plus) - value_at_cov(&minus)) / (2.0 * FD_STEP);
    scalar_rel_err(grad_cov.frob_inner(dir), fd)
}

/// Finite-difference sweep over the full Gaussian NLL: mean gradient and
/// covariance gradient on random well-conditioned instances. Returns the
/// worst relative error observed.
pub fn fd_suite_nll_full(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.random_range(0..5);
        let cov = random_pd(&mut rng, n);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eval = losses::nll_full(&r, &cov).unwrap();

        let value_r = |r: &[f64]| losses::nll_full(r, &cov).unwrap().value;
        worst = worst.max(mean_grad_rel_err(&value_r, &r, &eval.grad_mean));

        let g = match &eval.grad_cov {
            CovGrad::Full(g) => g,
            _ => unreachable!(),
        };
        let dir = random_sym_direction(&mut rng, n);
        let value_c = |c: &SymMatrix| losses::nll_full(&r, c).unwrap().value;
        worst = worst.max(cov_grad_rel_err(&value_c, &cov, g, &dir));
    }
    worst
}

/// Finite-difference sweep over β-NLL. The stop-gradient factor is frozen at
/// the base point inside the variance probe — the analytic gradient defines
/// the factor as constant, so the oracle must too.
pub fn fd_suite_beta_nll(instances: usize, seed: u64, beta: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.random_range(0..5);
        let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eval = losses::beta_nll(&r, &var, beta).unwrap();

        // var untouched: the production value is exact for the ŷ probe
        let value_r = |r: &[f64]| losses::beta_nll(r, &var, beta).unwrap().value;
        worst = worst.max(mean_grad_rel_err(&value_r, &r, &eval.grad_mean));

        let grad_var = match &eval.grad_cov {
            CovGrad::Diag(g) => g.clone(),
            _ => unreachable!(),
        };
        let frozen: Vec<f64> = var.iter().map(|v| v.powf(beta)).collect();
        let frozen_value = |v: &[f64]| -> f64 {
            (0..n).map(|i| frozen[i] * (v[i].ln() + r[i] * r[i] / v[i])).sum()
        };
        let fd = fd_grad(&frozen_value, &var, FD_STEP);
        worst = worst.max(rel_err_inf(&grad_var, &fd));
    }
    worst
}

/// Finite-difference sweep over the faithful split. The ŷ probe freezes the
/// residual inside the NLL term (it is detached there); the covariance probe
/// uses the production value directly.
pub fn fd_suite_faithful(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.random_range(0..5);
        let cov = random_pd(&mut rng, n);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eval = losses::faithful_loss(&r, &cov).unwrap();

        let nll_at_base = losses::nll_full(&r, &cov).unwrap().value;
        let value_r = |rv: &[f64]| -> f64 {
            rv.iter().map(|v| v * v).sum::<f64>() + nll_at_base
        };
        worst = worst.max(mean_grad_rel_err(&value_r, &r, &eval.grad_mean));

        let g = match &eval.grad_cov {
            CovGrad::Full(g) => g,
            _ => unreachable!(),
        };
        let dir = random_sym_direction(&mut rng, n);
        let value_c = |c: &SymMatrix| losses::faithful_loss(&r, c).unwrap().value;
        worst = worst.max(cov_grad_rel_err(&value_c, &cov, g, &dir));
    }
    worst
}

/// Finite-difference sweep over plain squared error.
pub fn fd_suite_mse(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.random_range(0..5);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eval = losses::mse_loss(&r);
        let value_r = |rv: &[f64]| losses::mse_loss(rv).value;
        worst = worst.max(mean_grad_rel_err(&value_r, &r, &eval.grad_mean));
    }
    worst
}

/// Finite-difference sweep over the TIC objective: mean gradient, the two
/// scale gradients, and the packed-factor gradient chained through the PD
/// parameterization.
pub fn fd_suite_tic_nll(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = 1 + rng.random_range(0..4);
        let m = 1 + rng.random_range(0..4);
        let d = random_diffeval(&mut rng, n, m);
        let raw: Vec<f64> = (0..tic_raw_len(n)).map(|_| rng.random_range(-1.5..1.5)).collect();
        let p = tic_head_decode(&raw).unwrap();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eval = losses::tic_nll(&r, &d, &p).unwrap();

        let value_r = |rv: &[f64]| losses::tic_nll(rv, &d, &p).unwrap().value;
        worst = worst.max(mean_grad_rel_err(&value_r, &r, &eval.grad_mean));

        let value_k1 = |k1: f64| -> f64 {
            let q = TicParams { k1, k2: p.k2, k3: p.k3.clone() };
            losses::tic_nll(&r, &d, &q).unwrap().value
        };
        let fd_k1 = (value_k1(p.k1 + FD_STEP) - value_k1(p.k1 - FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(scalar_rel_err(eval.grad_k1, fd_k1));

        let value_k2 = |k2: f64| -> f64 {
            let q = TicParams { k1: p.k1, k2, k3: p.k3.clone() };
            losses::tic_nll(&r, &d, &q).unwrap().value
        };
        let fd_k2 = (value_k2(p.k2 + FD_STEP) - value_k2(p.k2 - FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(scalar_rel_err(eval.grad_k2, fd_k2));

        let raw_k3 = &raw[2..];
        let chained = assemble_pd_backward(raw_k3, &eval.grad_k3);
        let value_raw = |rw: &[f64]| -> f64 {
            let q = TicParams { k1: p.k1, k2: p.k2, k3: assemble_pd(rw, 0.0) };
            losses::tic_nll(&r, &d, &q).unwrap().value
        };
        let fd_raw = fd_grad(&value_raw, raw_k3, FD_STEP);
        worst = worst.max(rel_err_inf(&chained, &fd_raw));
        debug_assert_eq!(raw_k3.len(), packed_len(n));
    }
    worst
}

/// Dense matrix inverse by Gauss–Jordan elimination with partial pivoting.
/// Panics on singular input — oracle inputs are constructed to be invertible.
pub fn dense_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    assert_eq!(n, m.cols(), "inverse needs a square matrix");
    let mut a = m.clone();
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        inv.set(i, i, 1.0);
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&a_i, &b_i| {
                a.get(a_i, col)
                    .abs()
                    .partial_cmp(&a.get(b_i, col).abs())
                    .unwrap()
            })
            .unwrap();
        let pivot = a.get(pivot_row, col);
        assert!(pivot.abs() > 1e-300, "singular matrix in dense_inverse");
        if pivot_row != col {
            for j in 0..n {
                let (x, y) = (a.get(col, j), a.get(pivot_row, j));
                a.set(col, j, y);
                a.set(pivot_row, j, x);
                let (x, y) = (inv.get(col, j), inv.get(pivot_row, j));
                inv.set(col, j, y);
                inv.set(pivot_row, j, x);
            }
        }
        let d = a.get(col, col);
        for j in 0..n {
            a.set(col, j, a.get(col, j) / d);
            inv.set(col, j, inv.get(col, j) / d);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a.set(r, j, a.get(r, j) - f * a.get(col, j));
                inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
            }
        }
    }
    inv
}

/// Inverse of a symmetric matrix through the dense Gauss–Jordan path.
pub fn sym_inverse(m: &SymMatrix) -> SymMatrix {
    let n = m.dim();
    let dense = Matrix::from_flat(n, n, m.data().to_vec());
    let inv = dense_inverse(&dense);
    SymMatrix::from_flat(n, inv.data().to_vec())
}

/// Leave-one-out conditional absolute error, written independently of the
/// production path: explicit block extraction and a dense Gauss–Jordan
/// inverse of each observed block.
pub fn brute_force_tac(y: &[f64], y_hat: &[f64], cov: &SymMatrix) -> f64 {
    let n = cov.dim();
    assert!(n >= 2, "brute-force TAC needs n >= 2");
    let mut total = 0.0;
    for i in 0..n {
        let observed: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let mut s22 = Matrix::zeros(n - 1, n - 1);
        for a in 0..n - 1 {
            for b in 0..n - 1 {
                s22.set(a, b, cov.get(observed[a], observed[b]));
            }
        }
        let inv = dense_inverse(&s22);
        let mut cond = y_hat[i];
        for a in 0..n - 1 {
            for b in 0..n - 1 {
                cond += cov.get(i, observed[a])
                    * inv.get(a, b)
                    * (y[observed[b]] - y_hat[observed[b]]);
            }
        }
        total += (cond - y[i]).abs();
    }
    total / n as f64
}

/// Gaussian conditioning written directly from the textbook block formulas
/// with an explicit dense inverse of the observed block. Quadratic blowup and
/// no jitter policy — exactly what the production path must agree with on
/// well-conditioned inputs.
pub fn condition_via_dense_inverse(
    mean: &[f64],
    cov: &SymMatrix,
    observed: &[usize],
    values: &[f64],
) -> (Vec<f64>, SymMatrix) {
    let dim = cov.dim();
    let mut is_obs = vec![false; dim];
    for &i in observed {
        is_obs[i] = true;
    }
    let hidden: Vec<usize> = (0..dim).filter(|&i| !is_obs[i]).collect();
    let n_o = observed.len();
    let n_h = hidden.len();

    let mut s22 = Matrix::zeros(n_o, n_o);
    for a in 0..n_o {
        for b in 0..n_o {
            s22.set(a, b, cov.get(observed[a], observed[b]));
        }
    }
    let s22_inv = dense_inverse(&s22);

    let mut cond_mean = vec![0.0; n_h];
    for a in 0..n_h {
        let mut acc = mean[hidden[a]];
        for b in 0..n_o {
            for c in 0..n_o {
                acc += cov.get(hidden[a], observed[b])
                    * s22_inv.get(b, c)
                    * (values[c] - mean[observed[c]]);
            }
        }
        cond_mean[a] = acc;
    }

    let mut cond_cov = SymMatrix::zeros(n_h);
    for a in 0..n_h {
        for b in 0..=a {
            let mut acc = cov.get(hidden[a], hidden[b]);
            for p in 0..n_o {
                for q in 0..n_o {
                    acc -= cov.get(hidden[a], observed[p])
                        * s22_inv.get(p, q)
                        * cov.get(observed[q], hidden[b]);
                }
            }
            cond_cov.set_sym(a, b, acc);
        }
    }
    (cond_mean, cond_cov)
}
