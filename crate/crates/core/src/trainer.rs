//! Joint optimization of a mean network and a covariance-head network per
//! method, under a fairness protocol: within a trial every method consumes
//! the same dataset bytes and the same batch schedule, and initializes its
//! networks from the same seeds; each method owns its optimizer and
//! learning-rate schedule.
//!
//! All training is single-threaded and deterministic: a fixed config and
//! seed reproduce final parameters bitwise.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::covheads::{
    diag_covariance, diag_covariance_backward, diag_variances, full_cholesky_backward,
    full_cholesky_covariance, tic_covariance, tic_head_backward, tic_head_decode, tic_raw_len,
    GaussianPrediction,
};
use crate::data::{
    gen_multivariate_with_samples, gen_univariate, uci::random_feature_split, uci::UciTable,
    Dataset, UnivariateVariant,
};
use crate::diffmlp::{init_mlp, Activation, Mlp, MlpError, ParamGrads};
use crate::linalg::{packed_len, SymMatrix};
use crate::losses::{
    beta_nll, faithful_loss, mse_loss, nll_full, tic_nll, CovGrad, LossError, MethodKind,
};
use crate::metrics::{evaluate, MetricError, MetricReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("dataset has no samples")]
    EmptyDataset,
    /// A loss or a parameter update went non-finite; the diagnostic names
    /// the method, epoch, and batch.
    #[error("training diverged: {0}")]
    DivergedLoss(String),
    #[error("internal failure: {0}")]
    Internal(String),
}

impl From<MlpError> for TrainError {
    fn from(e: MlpError) -> Self {
        TrainError::Internal(e.to_string())
    }
}

impl From<MetricError> for TrainError {
    fn from(e: MetricError) -> Self {
        TrainError::Internal(e.to_string())
    }
}

/// Hyperparameters for one method's training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: MethodKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// multiplier applied to the learning rate for the tail of training
    pub decay_factor: f64,
    /// fraction of epochs after which the decay kicks in
    pub decay_point: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// hidden layer widths shared by both networks
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    /// suppress the per-epoch progress line on standard error
    pub quiet: bool,
}

impl TrainConfig {
    pub fn new(method: MethodKind, seed: u64) -> Self {
        Self {
            method,
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            decay_factor: 0.1,
            decay_point: 0.75,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden_dims: vec![64, 64],
            seed,
            quiet: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::InvalidConfig("adam betas must lie in [0, 1)"));
        }
        if !self.adam_eps.is_finite() || self.adam_eps <= 0.0 {
            return Err(TrainError::InvalidConfig("adam_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decay_point) || self.decay_factor <= 0.0 {
            return Err(TrainError::InvalidConfig("invalid scheduler parameters"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(TrainError::InvalidConfig("hidden dims must be positive"));
        }
        Ok(())
    }
}

/// Covariance-head output width for an `n`-dimensional target, `None` for
/// the covariance-free squared-error method.
pub fn head_width(method: MethodKind, n: usize) -> Option<usize> {
    match method {
        MethodKind::Tic => Some(tic_raw_len(n)),
        MethodKind::NllFull | MethodKind::Faithful => Some(packed_len(n)),
        MethodKind::NllDiag | MethodKind::BetaNll { .. } => Some(n),
        MethodKind::Mse => None,
    }
}

/// One shuffled permutation of `0..n_samples` per epoch, chunked into
/// batches; the final batch keeps the remainder (no drop-last). Derived
/// solely from `seed`, so every method sharing a trial seed consumes
/// identical batches in identical order.
pub fn make_batch_schedule(
    n_samples: usize,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Vec<Vec<Vec<usize>>> {
    assert!(n_samples >= 1 && batch_size >= 1 && epochs >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n_samples).collect();
    (0..epochs)
        .map(|_| {
            perm.shuffle(&mut rng);
            perm.chunks(batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect()
}

/// Adam optimizer state for one network.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: ParamGrads,
    v: ParamGrads,
    delta: ParamGrads,
}

impl Adam {
    pub fn new(net: &Mlp, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: ParamGrads::zeros_like(net),
            v: ParamGrads::zeros_like(net),
            delta: ParamGrads::zeros_like(net),
        }
    }

    /// One bias-corrected Adam update in place:
    /// `θ ← θ − lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, net: &mut Mlp, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let update = |m: &mut [f64], v: &mut [f64], d: &mut [f64], g: &[f64]| {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                d[i] = -lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for l in 0..grads.weights.len() {
            for r in 0..grads.weights[l].rows() {
                update(
                    self.m.weights[l].row_mut(r),
                    self.v.weights[l].row_mut(r),
                    self.delta.weights[l].row_mut(r),
                    grads.weights[l].row(r),
                );
            }
            update(
                &mut self.m.biases[l],
                &mut self.v.biases[l],
                &mut self.delta.biases[l],
                &grads.biases[l],
            );
        }
        net.apply_update(&self.delta);
    }
}

/// Trained mean and covariance networks plus the per-epoch mean loss.
#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub method: MethodKind,
    pub mean_net: Mlp,
    pub cov_net: Option<Mlp>,
    pub loss_trace: Vec<f64>,
}

impl TrainedPair {
    /// Full Gaussian prediction at one input. The squared-error method has
    /// no covariance head and reports the identity.
    pub fn predict(&self, x: &[f64]) -> Result<GaussianPrediction, TrainError> {
        let n = self.mean_net.output_dim();
        let cov_raw = match &self.cov_net {
            Some(net) => Some(net.forward(x)?),
            None => None,
        };
        match self.method {
            MethodKind::Tic => {
                let d = self.mean_net.forward_with_input_derivatives(x)?;
                let raw = cov_raw.expect("tic always trains a covariance net");
                let params = tic_head_decode(&raw).map_err(|e| TrainError::Internal(e.to_string()))?;
                let cov = tic_covariance(&d, &params)
                    .map_err(|e| TrainError::Internal(e.to_string()))?;
                Ok(GaussianPrediction { mean: d.value, cov })
            }
            MethodKind::NllFull | MethodKind::Faithful => {
                let mean = self.mean_net.forward(x)?;
                Ok(GaussianPrediction { mean, cov: full_cholesky_covariance(&cov_raw.unwrap()) })
            }
            MethodKind::NllDiag | MethodKind::BetaNll { .. } => {
                let mean = self.mean_net.forward(x)?;
                Ok(GaussianPrediction { mean, cov: diag_covariance(&cov_raw.unwrap()) })
            }
            MethodKind::Mse => {
                let mean = self.mean_net.forward(x)?;
                Ok(GaussianPrediction { mean, cov: SymMatrix::identity(n) })
            }
        }
    }
}

fn residual(y: &[f64], y_hat: &[f64]) -> Vec<f64> {
    y.iter().zip(y_hat).map(|(a, b)| a - b).collect()
}

/// Per-sample loss and gradient accumulation for one method. Gradients are
/// summed into `mean_grads`/`cov_grads`; the caller averages over the batch.
fn accumulate_sample(
    method: MethodKind,
    mean_net: &Mlp,
    cov_net: Option<&Mlp>,
    x: &[f64],
    y: &[f64],
    mean_grads: &mut ParamGrads,
    cov_grads: Option<&mut ParamGrads>,
) -> Result<f64, TrainError> {
    let loss_err = |e: LossError| TrainError::Internal(e.to_string());
    match method {
        MethodKind::Mse => {
            let y_hat = mean_net.forward(x)?;
            let eval = mse_loss(&residual(y, &y_hat));
            mean_net.backprop_into(x, &eval.grad_mean, mean_grads)?;
            Ok(eval.value)
        }
        MethodKind::Tic => {
            let d = mean_net.forward_with_input_derivatives(x)?;
            let net = cov_net.expect("tic trains a covariance net");
            let raw = net.forward(x)?;
            let params = tic_head_decode(&raw).map_err(|e| TrainError::Internal(e.to_string()))?;
            let eval = tic_nll(&residual(y, &d.value), &d, &params).map_err(loss_err)?;
            mean_net.backprop_into(x, &eval.grad_mean, mean_grads)?;
            let raw_grad = tic_head_backward(&raw, eval.grad_k1, eval.grad_k2, &eval.grad_k3);
            net.backprop_into(x, &raw_grad, cov_grads.expect("tic grads"))?;
            Ok(eval.value)
        }
        MethodKind::NllFull | MethodKind::Faithful => {
            let y_hat = mean_net.forward(x)?;
            let net = cov_net.expect("full-covariance methods train a covariance net");
            let raw = net.forward(x)?;
            let cov = full_cholesky_covariance(&raw);
            let r = residual(y, &y_hat);
            let eval = if method == MethodKind::Faithful {
                faithful_loss(&r, &cov).map_err(loss_err)?
            } else {
                nll_full(&r, &cov).map_err(loss_err)?
            };
            mean_net.backprop_into(x, &eval.grad_mean, mean_grads)?;
            let CovGrad::Full(g) = &eval.grad_cov else {
                return Err(TrainError::Internal("expected full covariance gradient".into()));
            };
            let raw_grad = full_cholesky_backward(&raw, g);
            net.backprop_into(x, &raw_grad, cov_grads.expect("cov grads"))?;
            Ok(eval.value)
        }
        MethodKind::NllDiag | MethodKind::BetaNll { .. } => {
            let beta = match method {
                MethodKind::BetaNll { beta } => beta,
                _ => 0.0,
            };
            let y_hat = mean_net.forward(x)?;
            let net = cov_net.expect("diagonal methods train a covariance net");
            let raw = net.forward(x)?;
            let var = diag_variances(&raw);
            let eval = beta_nll(&residual(y, &y_hat), &var, beta).map_err(loss_err)?;
            mean_net.backprop_into(x, &eval.grad_mean, mean_grads)?;
            let CovGrad::Diag(g) = &eval.grad_cov else {
                return Err(TrainError::Internal("expected diagonal covariance gradient".into()));
            };
            let raw_grad = diag_covariance_backward(&raw, g);
            net.backprop_into(x, &raw_grad, cov_grads.expect("cov grads"))?;
            Ok(eval.value)
        }
    }
}

/// Trains one method on one dataset. Mean net seeded by `config.seed`, the
/// covariance net by `seed + 1`, and the batch schedule by `seed` — so two
/// methods configured with the same seed see identical batches and start
/// from identically drawn parameters.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainedPair, TrainError> {
    config.validate()?;
    let n_samples = dataset.n_samples();
    if n_samples == 0 {
        return Err(TrainError::EmptyDataset);
    }
    let m_in = dataset.input_dim();
    let n = dataset.target_dim();

    let dims = |out: usize| {
        let mut d = Vec::with_capacity(config.hidden_dims.len() + 2);
        d.push(m_in);
        d.extend_from_slice(&config.hidden_dims);
        d.push(out);
        d
    };
    let mut mean_net = init_mlp(&dims(n), Activation::Tanh, config.seed)?;
    let mut cov_net = match head_width(config.method, n) {
        Some(w) => Some(init_mlp(&dims(w), Activation::Tanh, config.seed + 1)?),
        None => None,
    };

    let schedule = make_batch_schedule(n_samples, config.batch_size, config.epochs, config.seed);
    let mut mean_opt = Adam::new(&mean_net, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut cov_opt = cov_net
        .as_ref()
        .map(|net| Adam::new(net, config.adam_beta1, config.adam_beta2, config.adam_eps));
    let decay_epoch = (config.epochs as f64 * config.decay_point).floor() as usize;

    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut mean_grads = ParamGrads::zeros_like(&mean_net);
    let mut cov_grads = cov_net.as_ref().map(ParamGrads::zeros_like);
    for (epoch, batches) in schedule.iter().enumerate() {
        let lr = if epoch >= decay_epoch {
            config.learning_rate * config.decay_factor
        } else {
            config.learning_rate
        };
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in batches.iter().enumerate() {
            let diverged = |what: &str| {
                TrainError::DivergedLoss(format!(
                    "method={} epoch={epoch} batch={batch_idx}: {what}",
                    config.method.name()
                ))
            };
            mean_grads.scale(0.0);
            if let Some(g) = &mut cov_grads {
                g.scale(0.0);
            }
            let mut batch_loss = 0.0;
            for &s in batch {
                let value = accumulate_sample(
                    config.method,
                    &mean_net,
                    cov_net.as_ref(),
                    dataset.inputs.row(s),
                    dataset.targets.row(s),
                    &mut mean_grads,
                    cov_grads.as_mut(),
                )
                .map_err(|e| match e {
                    // a numerical failure mid-training is a divergence, not a bug
                    TrainError::Internal(msg) => diverged(&msg),
                    other => other,
                })?;
                batch_loss += value;
            }
            if !batch_loss.is_finite() {
                return Err(diverged("non-finite loss"));
            }
            let inv = 1.0 / batch.len() as f64;
            mean_grads.scale(inv);
            mean_opt.step(&mut mean_net, &mean_grads, lr);
            if let (Some(net), Some(opt), Some(g)) =
                (cov_net.as_mut(), cov_opt.as_mut(), cov_grads.as_mut())
            {
                g.scale(inv);
                opt.step(net, g, lr);
            }
            if !mean_net.params_finite()
                || cov_net.as_ref().is_some_and(|net| !net.params_finite())
            {
                return Err(diverged("non-finite parameters after update"));
            }
            epoch_loss += batch_loss;
        }
        let mean_epoch_loss = epoch_loss / n_samples as f64;
        loss_trace.push(mean_epoch_loss);
        if !config.quiet {
            eprintln!(
                "epoch={epoch} method={} loss={mean_epoch_loss:.6e} lr={lr:.3e}",
                config.method.name()
            );
        }
    }
    Ok(TrainedPair { method: config.method, mean_net, cov_net, loss_trace })
}

/// Trains, then scores the training set (the protocol holds out nothing).
pub fn train_and_evaluate(
    config: &TrainConfig,
    dataset: &Dataset,
) -> Result<(TrainedPair, MetricReport), TrainError> {
    let pair = train(config, dataset)?;
    let preds: Vec<GaussianPrediction> = (0..dataset.n_samples())
        .map(|s| pair.predict(dataset.inputs.row(s)))
        .collect::<Result<_, _>>()?;
    let mut it = preds.into_iter();
    let report = evaluate(&dataset.inputs, &dataset.targets, |_| {
        it.next().expect("one prediction per sample")
    })?;
    Ok((pair, report))
}

/// What to train on: each trial draws a fresh realization.
#[derive(Debug, Clone)]
pub enum ExperimentKind {
    Univariate { variant: UnivariateVariant, samples: usize },
    /// `samples = None` uses the default `1000·d`.
    Multivariate { d: usize, samples: Option<usize> },
    /// Column split re-randomized per trial.
    Uci { table: UciTable },
}

impl ExperimentKind {
    fn realize(&self, trial_seed: u64) -> Dataset {
        match self {
            ExperimentKind::Univariate { variant, samples } => {
                gen_univariate(*variant, *samples, trial_seed)
            }
            ExperimentKind::Multivariate { d, samples } => {
                gen_multivariate_with_samples(*d, samples.unwrap_or(1000 * d), trial_seed).0
            }
            ExperimentKind::Uci { table } => random_feature_split(table, trial_seed),
        }
    }
}

/// A full experiment: one data source, several methods, shared protocol.
/// `base.method` is ignored; `base.seed` seeds trial 0, trial `t` uses
/// `seed + t`.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub methods: Vec<MethodKind>,
    pub base: TrainConfig,
}

/// One (method, trial) outcome.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub method: MethodKind,
    pub dataset: String,
    pub dim: usize,
    pub trial: usize,
    pub seed: u64,
    pub tac: Option<f64>,
    pub mse: f64,
    pub mean_nll: f64,
    pub wall_time_s: f64,
}

/// Successful rows plus diagnostics for trials that failed (excluded rows).
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<TrialResult>,
    pub failures: Vec<String>,
}

/// Runs all methods for one trial index: realizes the trial's dataset and
/// trains each method on it with the shared schedule. Self-contained and
/// deterministic, so callers may spread trial indices across threads.
pub fn run_single_trial(spec: &ExperimentSpec, trial: usize) -> RunOutput {
    let trial_seed = spec.base.seed.wrapping_add(trial as u64);
    let dataset = spec.kind.realize(trial_seed);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &method in &spec.methods {
        let mut config = spec.base.clone();
        config.method = method;
        config.seed = trial_seed;
        let start = Instant::now();
        match train_and_evaluate(&config, &dataset) {
            Ok((_, report)) => rows.push(TrialResult {
                method,
                dataset: dataset.meta.name.clone(),
                dim: dataset.target_dim(),
                trial,
                seed: trial_seed,
                tac: report.tac,
                mse: report.mse,
                mean_nll: report.mean_nll,
                wall_time_s: start.elapsed().as_secs_f64(),
            }),
            Err(e) => {
                let warning = format!(
                    "method={} dataset={} trial={trial} seed={trial_seed} error={e}",
                    method.name(),
                    dataset.meta.name
                );
                eprintln!("warning: trial failed: {warning}");
                failures.push(warning);
            }
        }
    }
    RunOutput { rows, failures }
}

/// Runs every method over `n_trials` fresh dataset realizations. Within a
/// trial all methods share the dataset and batch schedule; a failed run is
/// recorded as a warning and excluded from the rows.
pub fn run_trials(spec: &ExperimentSpec, n_trials: usize) -> RunOutput {
    assert!(n_trials >= 1, "need at least one trial");
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for trial in 0..n_trials {
        let mut out = run_single_trial(spec, trial);
        rows.append(&mut out.rows);
        failures.append(&mut out.failures);
    }
    RunOutput { rows, failures }
}

/// Per-(method, dataset, dim) arithmetic means across trials, in first
/// appearance order. TAC averages only rows that have one.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: MethodKind,
    pub dataset: String,
    pub dim: usize,
    pub n_trials: usize,
    pub tac: Option<f64>,
    pub mse: f64,
    pub mean_nll: f64,
}

pub fn aggregate(rows: &[TrialResult]) -> Vec<AggregateRow> {
    let mut keys: Vec<(MethodKind, String, usize)> = Vec::new();
    for row in rows {
        let key = (row.method, row.dataset.clone(), row.dim);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, dataset, dim)| {
            let group: Vec<&TrialResult> = rows
                .iter()
                .filter(|r| r.method == method && r.dataset == dataset && r.dim == dim)
                .collect();
            let nf = group.len() as f64;
            let tacs: Vec<f64> = group.iter().filter_map(|r| r.tac).collect();
            AggregateRow {
                method,
                dataset,
                dim,
                n_trials: group.len(),
                tac: if tacs.is_empty() {
                    None
                } else {
                    Some(tacs.iter().sum::<f64>() / tacs.len() as f64)
                },
                mse: group.iter().map(|r| r.mse).sum::<f64>() / nf,
                mean_nll: group.iter().map(|r| r.mean_nll).sum::<f64>() / nf,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmlp::Mlp;
    use crate::linalg::Matrix;
    use rand::Rng;

    fn quiet(method: MethodKind, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(method, seed);
        c.quiet = true;
        c
    }

    #[test]
    fn schedule_partitions_every_epoch() {
        let schedule = make_batch_schedule(4, 2, 1, 9);
        assert_eq!(schedule.len(), 1);
        assert_eq!(schedule[0].len(), 2);
        let mut seen: Vec<usize> = schedule[0].iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn schedule_is_a_pure_function_of_seed() {
        assert_eq!(make_batch_schedule(50, 7, 4, 3), make_batch_schedule(50, 7, 4, 3));
        assert_ne!(make_batch_schedule(50, 7, 4, 3), make_batch_schedule(50, 7, 4, 4));
    }

    #[test]
    fn schedule_keeps_the_remainder_batch() {
        let schedule = make_batch_schedule(5, 2, 3, 0);
        for epoch in &schedule {
            assert_eq!(epoch.len(), 3);
            assert_eq!(epoch[2].len(), 1);
            let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn schedule_epochs_differ_within_a_run() {
        let schedule = make_batch_schedule(64, 64, 8, 11);
        let first = &schedule[0][0];
        assert!(schedule.iter().skip(1).any(|e| &e[0] != first), "all epochs shuffled alike");
    }

    #[test]
    fn adam_matches_hand_arithmetic_on_constant_gradient() {
        // g = 1 throughout makes the bias corrections cancel exactly:
        // m̂ = v̂ = 1, so every step moves by lr/(1 + ε).
        let mut net = Mlp::from_parts(
            vec![1, 1],
            vec![Matrix::from_flat(1, 1, vec![1.0])],
            vec![vec![0.5]],
            Activation::Tanh,
        )
        .unwrap();
        let mut opt = Adam::new(&net, 0.9, 0.999, 1e-8);
        let ones = ParamGrads {
            weights: vec![Matrix::from_flat(1, 1, vec![1.0])],
            biases: vec![vec![1.0]],
        };
        let step = 0.1 / (1.0 + 1e-8);
        opt.step(&mut net, &ones, 0.1);
        assert!((net.flat_params()[0] - (1.0 - step)).abs() <= 1e-15);
        assert!((net.flat_params()[1] - (0.5 - step)).abs() <= 1e-15);
        opt.step(&mut net, &ones, 0.1);
        assert!((net.flat_params()[0] - (1.0 - 2.0 * step)).abs() <= 1e-15);
        assert!((net.flat_params()[1] - (0.5 - 2.0 * step)).abs() <= 1e-15);
    }

    #[test]
    fn head_widths_by_method() {
        assert_eq!(head_width(MethodKind::Tic, 4), Some(12));
        assert_eq!(head_width(MethodKind::NllFull, 4), Some(10));
        assert_eq!(head_width(MethodKind::Faithful, 4), Some(10));
        assert_eq!(head_width(MethodKind::NllDiag, 4), Some(4));
        assert_eq!(head_width(MethodKind::BetaNll { beta: 0.5 }, 4), Some(4));
        assert_eq!(head_width(MethodKind::Mse, 4), None);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let base = quiet(MethodKind::Mse, 0);
        let mut c = base.clone();
        c.epochs = 0;
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let mut c = base.clone();
        c.batch_size = 0;
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let mut c = base.clone();
        c.learning_rate = -1.0;
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let mut c = base;
        c.adam_beta2 = 1.0;
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
    }

    /// Noiseless linear targets are realizable; training squared error must
    /// collapse within the standard epoch budget.
    #[test]
    fn mse_fits_noiseless_linear_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_samples = 256;
        let mut inputs = Matrix::zeros(n_samples, 2);
        let mut targets = Matrix::zeros(n_samples, 1);
        for s in 0..n_samples {
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            inputs.set(s, 0, a);
            inputs.set(s, 1, b);
            targets.set(s, 0, 0.5 * a - 0.3 * b);
        }
        let dataset = Dataset {
            inputs,
            targets,
            meta: crate::data::DatasetMeta {
                name: "linear".into(),
                seed: 5,
                params: serde_json::json!({}),
            },
        };
        let mut config = quiet(MethodKind::Mse, 1);
        config.batch_size = 32;
        config.learning_rate = 1e-2;
        config.hidden_dims = vec![16];
        let pair = train(&config, &dataset).unwrap();
        assert_eq!(pair.loss_trace.len(), 100);
        assert!(pair.cov_net.is_none());
        let final_mse = pair.loss_trace.last().unwrap();
        assert!(*final_mse <= 1e-3, "training MSE {final_mse} did not reach 1e-3");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (dataset, _) = gen_multivariate_with_samples(4, 160, 21);
        let mut config = quiet(MethodKind::Tic, 3);
        config.epochs = 2;
        config.batch_size = 64;
        let a = train(&config, &dataset).unwrap();
        let b = train(&config, &dataset).unwrap();
        assert_eq!(a.mean_net.flat_params(), b.mean_net.flat_params());
        assert_eq!(
            a.cov_net.as_ref().unwrap().flat_params(),
            b.cov_net.as_ref().unwrap().flat_params()
        );
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    /// Constant noiseless targets are the degenerate case: the fitted
    /// covariance must collapse to the scale of the parameterization's
    /// diagonal floor constant ε_min = 1e-6. The stationary point of the
    /// likelihood puts Σ ≈ E[r²], and the residual's equilibrium wobble is
    /// set by the late learning rate — so the absolute limit ε_min² is not
    /// reachable by step-decay SGD, while 10·ε_min is.
    #[test]
    fn tic_covariance_collapses_on_constant_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n_samples = 64;
        let mut inputs = Matrix::zeros(n_samples, 1);
        let targets = Matrix::from_flat(n_samples, 1, vec![3.0; n_samples]);
        for s in 0..n_samples {
            inputs.set(s, 0, rng.random_range(-1.0..1.0));
        }
        let dataset = Dataset {
            inputs,
            targets,
            meta: crate::data::DatasetMeta {
                name: "constant".into(),
                seed: 8,
                params: serde_json::json!({}),
            },
        };
        let mut config = quiet(MethodKind::Tic, 2);
        config.epochs = 2000;
        config.batch_size = 16;
        config.learning_rate = 1e-2;
        config.hidden_dims = vec![16];
        let pair = train(&config, &dataset).unwrap();
        let mut worst: f64 = 0.0;
        for s in 0..n_samples {
            let pred = pair.predict(dataset.inputs.row(s)).unwrap();
            worst = worst.max(pred.cov.get(0, 0));
        }
        assert!(worst < 1e-5, "covariance floor not reached: max diagonal {worst:.3e}");
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let inputs = Matrix::from_flat(4, 1, vec![0.1, 0.2, 0.3, 0.4]);
        let targets = Matrix::from_flat(4, 1, vec![1.0, f64::NAN, 1.0, 1.0]);
        let dataset = Dataset {
            inputs,
            targets,
            meta: crate::data::DatasetMeta {
                name: "poisoned".into(),
                seed: 0,
                params: serde_json::json!({}),
            },
        };
        let mut config = quiet(MethodKind::Mse, 0);
        config.epochs = 2;
        config.batch_size = 4;
        match train(&config, &dataset) {
            Err(TrainError::DivergedLoss(msg)) => {
                assert!(msg.contains("epoch=0"), "diagnostic missing epoch: {msg}");
                assert!(msg.contains("method=mse"), "diagnostic missing method: {msg}");
            }
            other => panic!("expected DivergedLoss, got {other:?}"),
        }
    }

    #[test]
    fn runaway_learning_rate_diverges_not_panics() {
        let (dataset, _) = gen_multivariate_with_samples(4, 64, 7);
        let mut config = quiet(MethodKind::NllDiag, 1);
        config.epochs = 50;
        config.batch_size = 64;
        config.learning_rate = 1e200;
        match train(&config, &dataset) {
            Err(TrainError::DivergedLoss(_)) => {}
            Ok(_) => panic!("training with lr=1e200 cannot converge"),
            Err(other) => panic!("expected DivergedLoss, got {other:?}"),
        }
    }

    #[test]
    fn trials_share_dataset_and_report_per_method_rows() {
        let mut base = quiet(MethodKind::Mse, 30);
        base.epochs = 2;
        base.batch_size = 64;
        base.hidden_dims = vec![8];
        let spec = ExperimentSpec {
            kind: ExperimentKind::Multivariate { d: 4, samples: Some(120) },
            methods: vec![MethodKind::Mse, MethodKind::NllDiag],
            base,
        };
        let out = run_trials(&spec, 1);
        assert!(out.failures.is_empty());
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].dataset, out.rows[1].dataset);
        assert_eq!(out.rows[0].seed, out.rows[1].seed);
        assert_eq!(out.rows[0].dim, 4);
        for row in &out.rows {
            assert!(row.mse.is_finite() && row.mean_nll.is_finite());
            assert!(row.tac.unwrap().is_finite());
        }
    }

    #[test]
    fn aggregate_means_per_method() {
        let row = |method, trial, tac, mse| TrialResult {
            method,
            dataset: "d".into(),
            dim: 4,
            trial,
            seed: trial as u64,
            tac,
            mse,
            mean_nll: 1.0,
            wall_time_s: 0.0,
        };
        let rows: Vec<TrialResult> = (0..10)
            .map(|t| row(MethodKind::Tic, t, Some(t as f64), 2.0))
            .chain((0..10).map(|t| row(MethodKind::Mse, t, None, 4.0)))
            .collect();
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].method, MethodKind::Tic);
        assert_eq!(agg[0].n_trials, 10);
        assert_eq!(agg[0].tac, Some(4.5)); // mean of 0..=9
        assert_eq!(agg[0].mse, 2.0);
        assert_eq!(agg[1].tac, None);
        assert_eq!(agg[1].mse, 4.0);
    }

    #[test]
    fn predictions_use_the_method_head() {
        let (dataset, _) = gen_multivariate_with_samples(4, 80, 13);
        for method in [MethodKind::NllFull, MethodKind::Tic, MethodKind::Mse] {
            let mut config = quiet(method, 4);
            config.epochs = 1;
            config.batch_size = 80;
            config.hidden_dims = vec![8];
            let pair = train(&config, &dataset).unwrap();
            let pred = pair.predict(dataset.inputs.row(0)).unwrap();
            assert_eq!(pred.mean.len(), 4);
            assert_eq!(pred.cov.dim(), 4);
            if method == MethodKind::Mse {
                assert_eq!(pred.cov, SymMatrix::identity(4));
            } else {
                assert!(crate::linalg::cholesky(&pred.cov).is_ok(), "head must emit PD");
            }
        }
    }
}
