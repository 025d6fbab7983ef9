//! Evaluation metrics: task-agnostic correlations (TAC), mean squared error,
//! and mean NLL.
//!
//! TAC asks whether a predicted covariance carries usable cross-dimension
//! structure: for each output dimension, condition the Gaussian on every
//! other dimension observed at its ground-truth value and score the absolute
//! error of the updated mean. A diagonal covariance leaves the mean untouched
//! and scores plain |ŷ − y|; informative correlations pull the conditional
//! mean toward the truth.
//!
//! Dataset aggregation averages per-sample TAC over samples; per-sample TAC
//! is already the mean over dimensions, and with equal dimension counts the
//! two mean orders commute.

use thiserror::Error;

use crate::covheads::GaussianPrediction;
use crate::linalg::{condition_gaussian, ConditionSpec, LinalgError, Matrix, SymMatrix};
use crate::losses::{mse_loss, nll_full};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("TAC needs at least 2 output dimensions")]
    DimensionTooSmall,
    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("loss evaluation failed: {0}")]
    Loss(String),
}

/// Aggregate evaluation over a dataset. `tac` is `None` for univariate
/// targets, where leave-one-out conditioning is undefined; univariate runs
/// report calibration statistics elsewhere instead.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub tac: Option<f64>,
    /// mean over samples of ‖y − ŷ‖²
    pub mse: f64,
    /// mean over samples of log|Σ| + rᵀΣ⁻¹r
    pub mean_nll: f64,
    pub n_samples: usize,
}

/// Per-dimension conditional absolute errors: entry `i` is `|ỹᵢ − yᵢ|` with
/// `ỹᵢ` the Gaussian mean of dimension `i` conditioned on all others
/// observed at ground truth.
pub fn tac_terms(y: &[f64], y_hat: &[f64], cov: &SymMatrix) -> Result<Vec<f64>, MetricError> {
    let n = cov.dim();
    if n < 2 {
        return Err(MetricError::DimensionTooSmall);
    }
    if y.len() != n || y_hat.len() != n {
        return Err(MetricError::ShapeMismatch("tac vector length"));
    }
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let observed: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let values: Vec<f64> = observed.iter().map(|&j| y[j]).collect();
        let spec = ConditionSpec::new(observed, values)?;
        let (cond_mean, _) = condition_gaussian(y_hat, cov, &spec)?;
        terms.push((cond_mean[0] - y[i]).abs());
    }
    Ok(terms)
}

/// TAC: mean over dimensions of the leave-one-out conditional absolute error.
pub fn tac(y: &[f64], y_hat: &[f64], cov: &SymMatrix) -> Result<f64, MetricError> {
    let terms = tac_terms(y, y_hat, cov)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Pearson correlation coefficient. NaN when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson length mismatch");
    assert!(a.len() >= 2, "pearson needs at least two points");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Evaluates a predictor over a dataset: TAC (multivariate only), MSE, and
/// mean NLL, each averaged over samples. The predictor supplies the full
/// Gaussian for each input; methods without a covariance head pass identity.
pub fn evaluate<F>(
    inputs: &Matrix,
    targets: &Matrix,
    mut predict: F,
) -> Result<MetricReport, MetricError>
where
    F: FnMut(&[f64]) -> GaussianPrediction,
{
    let n_samples = inputs.rows();
    if n_samples == 0 || n_samples != targets.rows() {
        return Err(MetricError::ShapeMismatch("evaluate sample counts"));
    }
    let dim = targets.cols();
    let mut tac_sum = 0.0;
    let mut mse_sum = 0.0;
    let mut nll_sum = 0.0;
    for s in 0..n_samples {
        let x = inputs.row(s);
        let y = targets.row(s);
        let pred = predict(x);
        if pred.mean.len() != dim || pred.cov.dim() != dim {
            return Err(MetricError::ShapeMismatch("prediction dimensions"));
        }
        let r: Vec<f64> = y.iter().zip(&pred.mean).map(|(a, b)| a - b).collect();
        mse_sum += mse_loss(&r).value;
        nll_sum += nll_full(&r, &pred.cov)
            .map_err(|e| MetricError::Loss(e.to_string()))?
            .value;
        if dim >= 2 {
            tac_sum += tac(y, &pred.mean, &pred.cov)?;
        }
    }
    let nf = n_samples as f64;
    Ok(MetricReport {
        tac: (dim >= 2).then_some(tac_sum / nf),
        mse: mse_sum / nf,
        mean_nll: nll_sum / nf,
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_covariance_scores_mean_absolute_error() {
        let y = [1.0, -2.0, 0.5];
        let y_hat = [0.5, -1.0, 0.0];
        let t = tac(&y, &y_hat, &SymMatrix::identity(3)).unwrap();
        let want = (0.5 + 1.0 + 0.5) / 3.0;
        assert_eq!(t, want);
    }

    #[test]
    fn correlated_pair_by_hand() {
        for rho in [-0.9, -0.5, 0.0, 0.3, 0.8] {
            let cov = SymMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]]);
            let t = tac(&[1.0, 1.0], &[0.0, 0.0], &cov).unwrap();
            assert!((t - (1.0 - rho).abs()).abs() <= 1e-15, "rho {rho}");
        }
    }

    #[test]
    fn rejects_univariate_and_bad_shapes() {
        assert_eq!(
            tac(&[1.0], &[0.0], &SymMatrix::identity(1)).unwrap_err(),
            MetricError::DimensionTooSmall
        );
        assert_eq!(
            tac(&[1.0], &[0.0], &SymMatrix::identity(2)).unwrap_err(),
            MetricError::ShapeMismatch("tac vector length")
        );
    }

    #[test]
    fn matches_dense_inverse_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let cov = oracle::random_pd(&mut rng, 5);
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y_hat: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fast = tac(&y, &y_hat, &cov).unwrap();
            let brute = oracle::brute_force_tac(&y, &y_hat, &cov);
            assert!((fast - brute).abs() <= 1e-10, "trial {trial}: {fast} vs {brute}");
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 3 + rng.random_range(0..4);
            let cov = oracle::random_pd(&mut rng, n);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y_hat: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let hp: Vec<f64> = perm.iter().map(|&i| y_hat[i]).collect();
            let base = tac(&y, &y_hat, &cov).unwrap();
            let permed = tac(&yp, &hp, &cov.permuted(&perm)).unwrap();
            assert!((base - permed).abs() <= 1e-12);
        }
    }

    #[test]
    fn uncorrelated_dimension_contributes_raw_error() {
        // dim 0 isolated from a correlated 2-block
        let cov = SymMatrix::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.6],
            vec![0.0, 0.6, 1.0],
        ]);
        let y = [1.5, 0.3, -0.4];
        let y_hat = [0.25, 0.1, 0.2];
        let terms = tac_terms(&y, &y_hat, &cov).unwrap();
        assert_eq!(terms[0], (1.5_f64 - 0.25).abs());
    }

    #[test]
    fn scaling_covariance_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = 2 + rng.random_range(0..5);
            let cov = oracle::random_pd(&mut rng, n);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y_hat: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let base = tac(&y, &y_hat, &cov).unwrap();
            // powers of two rescale every factorization step exactly
            assert_eq!(tac(&y, &y_hat, &cov.scaled(4.0)).unwrap(), base);
            // arbitrary positive scale: exact in real arithmetic, 1e-12 in floats
            let c = rng.random_range(0.2..9.0);
            assert!((tac(&y, &y_hat, &cov.scaled(c)).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn evaluate_perfect_predictions() {
        let inputs = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let targets = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        let report = evaluate(&inputs, &targets, |x| GaussianPrediction {
            mean: vec![2.0 * x[0], 2.0 * x[0] + 1.0],
            cov: SymMatrix::identity(2),
        })
        .unwrap();
        assert_eq!(report.tac, Some(0.0));
        assert_eq!(report.mse, 0.0);
        assert_eq!(report.n_samples, 3);
    }

    #[test]
    fn evaluate_single_sample_equals_pointwise_metrics() {
        let inputs = Matrix::from_rows(&[vec![0.0]]);
        let targets = Matrix::from_rows(&[vec![1.0, -1.0]]);
        let mean = vec![0.5, 0.5];
        let cov = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]);
        let report = evaluate(&inputs, &targets, |_| GaussianPrediction {
            mean: mean.clone(),
            cov: cov.clone(),
        })
        .unwrap();
        let r = [0.5, -1.5];
        assert_eq!(report.mse, mse_loss(&r).value);
        assert_eq!(report.mean_nll, nll_full(&r, &cov).unwrap().value);
        assert_eq!(report.tac.unwrap(), tac(&[1.0, -1.0], &mean, &cov).unwrap());
    }

    #[test]
    fn evaluate_univariate_has_no_tac() {
        let inputs = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        let targets = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        let report = evaluate(&inputs, &targets, |_| GaussianPrediction {
            mean: vec![0.0],
            cov: SymMatrix::identity(1),
        })
        .unwrap();
        assert_eq!(report.tac, None);
        assert_eq!(report.mse, (1.0 + 4.0) / 2.0);
    }

    #[test]
    fn pearson_hand_cases() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() <= 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-2.0, -4.0, -6.0]) + 1.0).abs() <= 1e-12);
        // zero-mean orthogonal sequences: covariance exactly 0
        assert_eq!(pearson(&[1.0, 0.0, -1.0, 0.0], &[0.0, 1.0, 0.0, -1.0]), 0.0);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_nan());
    }

    #[test]
    fn pearson_is_shift_and_scale_invariant() {
        let a = [0.3, -1.2, 2.1, 0.7, -0.4];
        let b = [1.0, 0.2, -0.5, 2.2, 0.9];
        let r = pearson(&a, &b);
        let a2: Vec<f64> = a.iter().map(|v| 3.0 * v + 10.0).collect();
        let b2: Vec<f64> = b.iter().map(|v| 0.25 * v - 2.0).collect();
        assert!((pearson(&a2, &b2) - r).abs() <= 1e-12);
    }
}
