//! Experiment runner: trains heteroscedastic covariance methods under a
//! shared fairness protocol and emits result tables, plus small utilities
//! for dataset generation and prediction scoring.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime failure. Errors go
//! to standard error with a machine-parseable `error_code=` prefix.

mod config;
mod files;

use std::path::PathBuf;
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use tictac_core::data::uci::write_table_csv;
use tictac_core::data::{
    gen_multivariate_with_samples, gen_uci_surrogate, gen_univariate, save_dataset,
    UnivariateVariant,
};
use tictac_core::linalg::min_eigenvalue;
use tictac_core::metrics::tac;
use tictac_core::oracle;
use tictac_core::trainer::{run_single_trial, run_trials, ExperimentSpec, RunOutput, TrialResult};

#[derive(Debug)]
pub enum AppError {
    /// bad flags, config, or input files — exit 1
    Validation { code: &'static str, detail: String },
    /// failures after validation (io, diverged training) — exit 2
    Runtime { code: &'static str, detail: String },
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation { .. } => 1,
            AppError::Runtime { .. } => 2,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (AppError::Validation { code, detail } | AppError::Runtime { code, detail }) = self;
        write!(f, "error_code={code} detail={detail}")
    }
}

#[derive(Parser)]
#[command(
    name = "tictac",
    about = "Unsupervised heteroscedastic covariance estimation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the selected methods over fresh trials and write result tables
    Run(Box<RunArgs>),
    /// Score prediction files with the conditional-correlation metric
    EvalTac(EvalTacArgs),
    /// Materialize a synthetic dataset as CSV plus a metadata sidecar
    GenData(GenDataArgs),
    /// Materialize the bundled offline table corpus for the uci experiment
    FetchUci(FetchUciArgs),
    /// Run the numerical self-checks (gradient oracles, metric brute force)
    Selftest,
}

/// Flags mirror the flat JSON config keys; flags win on conflict.
#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// flat JSON config file; command-line flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// univariate | multivariate | uci
    #[arg(long)]
    pub experiment: Option<String>,
    /// comma-separated: tic, nll_full (nll), nll_diag (diag), beta_nll, faithful, mse
    #[arg(long)]
    pub methods: Option<String>,
    /// independent repetitions, each with a fresh dataset realization [default: 1]
    #[arg(long)]
    pub trials: Option<usize>,
    /// base seed; trial t uses seed + t [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// output directory [default: results]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// comma-separated target dimensions, even, within [4, 20] (multivariate)
    #[arg(long)]
    pub d: Option<String>,
    /// sample count (univariate default 10000; multivariate default 1000·d)
    #[arg(long)]
    pub samples: Option<usize>,
    /// univariate amplitude profile: const_5 | abs_x | five_minus_abs_x
    #[arg(long)]
    pub variant: Option<String>,
    /// comma-separated CSV table paths (uci)
    #[arg(long)]
    pub csv: Option<String>,
    /// training epochs [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// minibatch size [default: 256 synthetic, 64 uci]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-3]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// beta_nll interpolation exponent in [0, 1] [default: 0.5]
    #[arg(long)]
    pub beta: Option<f64>,
    /// comma-separated hidden layer widths [default: 64,64]
    #[arg(long)]
    pub hidden: Option<String>,
    /// worker threads across trials; within-trial work stays sequential [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// write wall_time_s as 0 so identical runs produce identical bytes
    #[arg(long)]
    pub no_timing: bool,
    /// suppress per-epoch progress lines
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, clap::Args)]
struct EvalTacArgs {
    /// headerless CSV of ground-truth targets, one row per sample
    #[arg(long)]
    targets: PathBuf,
    /// headerless CSV of predicted means, same shape as --targets
    #[arg(long)]
    means: PathBuf,
    /// covariance blocks: n lines of n values per sample, blank-line separated
    #[arg(long)]
    covs: PathBuf,
}

#[derive(Debug, clap::Args)]
struct GenDataArgs {
    /// univariate | multivariate
    #[arg(long)]
    experiment: String,
    /// univariate amplitude profile [default: const_5]
    #[arg(long)]
    variant: Option<String>,
    /// target dimension (multivariate), even, within [4, 20]
    #[arg(long)]
    d: Option<usize>,
    /// sample count (univariate default 10000; multivariate default 1000·d)
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// output directory [default: data]
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct FetchUciArgs {
    /// output directory [default: data]
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return;
        }
        Err(e) => {
            eprintln!("error_code=usage detail={e}");
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::EvalTac(args) => cmd_eval_tac(&args),
        Command::GenData(args) => cmd_gen_data(&args),
        Command::FetchUci(args) => cmd_fetch_uci(&args),
        Command::Selftest => cmd_selftest(),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn io_err(detail: String) -> AppError {
    AppError::Runtime { code: "io", detail }
}

/// Trials spread over worker threads; each trial is self-contained, so the
/// stitched result equals the sequential one (up to wall times).
fn run_parallel(spec: &ExperimentSpec, trials: usize, jobs: usize) -> RunOutput {
    let collected: Mutex<Vec<(usize, RunOutput)>> = Mutex::new(Vec::with_capacity(trials));
    std::thread::scope(|scope| {
        for worker in 0..jobs.min(trials) {
            let collected = &collected;
            scope.spawn(move || {
                let mut trial = worker;
                while trial < trials {
                    let out = run_single_trial(spec, trial);
                    collected.lock().expect("no panics hold this lock").push((trial, out));
                    trial += jobs;
                }
            });
        }
    });
    let mut parts = collected.into_inner().expect("workers joined");
    parts.sort_by_key(|(trial, _)| *trial);
    let mut merged = RunOutput { rows: Vec::new(), failures: Vec::new() };
    for (_, mut part) in parts {
        merged.rows.append(&mut part.rows);
        merged.failures.append(&mut part.failures);
    }
    merged
}

fn cmd_run(args: &RunArgs) -> Result<(), AppError> {
    let plan = config::build_plan(args)?;
    std::fs::create_dir_all(&plan.out)
        .map_err(|e| io_err(format!("cannot create {}: {e}", plan.out.display())))?;

    let mut rows: Vec<TrialResult> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    for spec in &plan.specs {
        let mut out = if plan.jobs > 1 {
            run_parallel(spec, plan.trials, plan.jobs)
        } else {
            run_trials(spec, plan.trials)
        };
        rows.append(&mut out.rows);
        failures.append(&mut out.failures);
    }
    if rows.is_empty() {
        return Err(AppError::Runtime {
            code: "all_trials_failed",
            detail: failures.join("; "),
        });
    }

    let csv_path = plan.out.join("results.csv");
    files::write_results_csv(&csv_path, &rows, plan.no_timing)?;
    let json_path = plan.out.join("results.json");
    let doc = files::results_json(&plan.echo, &rows, &failures, plan.no_timing);
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc).expect("serializable"))
        .map_err(|e| io_err(format!("cannot write {}: {e}", json_path.display())))?;
    files::write_trial_artifacts(&plan.out.join("trials"), &rows, plan.no_timing)?;

    for agg in doc["aggregates"].as_array().expect("array") {
        let tac_str = agg["tac"]
            .as_f64()
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "n/a".to_string());
        println!(
            "method={} dataset={} dim={} trials={} tac={} mse={:.6} mean_nll={:.6}",
            agg["method"].as_str().expect("str"),
            agg["dataset"].as_str().expect("str"),
            agg["dim"],
            agg["n_trials"],
            tac_str,
            agg["mse"].as_f64().expect("num"),
            agg["mean_nll"].as_f64().expect("num"),
        );
    }
    println!("wrote {}", csv_path.display());
    println!("wrote {}", json_path.display());
    Ok(())
}

fn cmd_eval_tac(args: &EvalTacArgs) -> Result<(), AppError> {
    let targets = files::read_numeric_csv(&args.targets)?;
    let means = files::read_numeric_csv(&args.means)?;
    let covs = files::read_cov_blocks(&args.covs)?;
    let n = targets.cols();
    if n < 2 {
        return Err(AppError::Validation {
            code: "bad_input_file",
            detail: "the correlation metric needs at least 2 target dimensions".into(),
        });
    }
    if means.rows() != targets.rows() || means.cols() != n {
        return Err(AppError::Validation {
            code: "bad_input_file",
            detail: format!(
                "means shape {}x{} does not match targets {}x{n}",
                means.rows(),
                means.cols(),
                targets.rows()
            ),
        });
    }
    if covs.len() != targets.rows() || covs[0].dim() != n {
        return Err(AppError::Validation {
            code: "bad_input_file",
            detail: format!(
                "covariance blocks ({} of dim {}) do not match targets {}x{n}",
                covs.len(),
                covs[0].dim(),
                targets.rows()
            ),
        });
    }
    let mut sum = 0.0;
    for (s, cov) in covs.iter().enumerate() {
        sum += tac(targets.row(s), means.row(s), cov).map_err(|e| AppError::Runtime {
            code: "metric_failed",
            detail: format!("sample {s}: {e}"),
        })?;
    }
    println!("tac={}", tictac_core::data::format_float(sum / targets.rows() as f64));
    Ok(())
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), AppError> {
    let dataset = match args.experiment.as_str() {
        "univariate" => {
            let name = args.variant.clone().unwrap_or_else(|| "const_5".to_string());
            let variant = UnivariateVariant::parse(&name).ok_or(AppError::Validation {
                code: "invalid_variant",
                detail: format!("unknown amplitude profile {name:?}"),
            })?;
            gen_univariate(variant, args.samples.unwrap_or(10_000), args.seed)
        }
        "multivariate" => {
            let d = args.d.ok_or(AppError::Validation {
                code: "invalid_dimension",
                detail: "--d is required for multivariate".into(),
            })?;
            if d % 2 != 0 || !(4..=20).contains(&d) {
                return Err(AppError::Validation {
                    code: "invalid_dimension",
                    detail: format!("d must be even and within [4, 20], got {d}"),
                });
            }
            gen_multivariate_with_samples(d, args.samples.unwrap_or(1000 * d), args.seed).0
        }
        other => {
            return Err(AppError::Validation {
                code: "invalid_experiment",
                detail: format!("gen-data covers univariate and multivariate, got {other:?}"),
            });
        }
    };
    std::fs::create_dir_all(&args.out)
        .map_err(|e| io_err(format!("cannot create {}: {e}", args.out.display())))?;
    let csv_path = args.out.join(format!("{}.csv", dataset.meta.name));
    let meta_path = args.out.join(format!("{}.meta.json", dataset.meta.name));
    save_dataset(&dataset, &csv_path, &meta_path)
        .map_err(|e| io_err(format!("cannot save dataset: {e}")))?;
    println!("wrote {} ({} samples)", csv_path.display(), dataset.n_samples());
    println!("wrote {}", meta_path.display());
    Ok(())
}

/// The table corpus for the `uci` experiment. This environment has no
/// network access, so instead of downloading, the command materializes
/// deterministic synthetic tables that flow through the exact same loading,
/// normalization, and splitting pipeline as any downloaded CSV would.
const TABLE_CORPUS: [(&str, usize, usize, u64); 2] =
    [("surrogate_a", 320, 8, 101), ("surrogate_b", 260, 6, 202)];

fn cmd_fetch_uci(args: &FetchUciArgs) -> Result<(), AppError> {
    std::fs::create_dir_all(&args.out)
        .map_err(|e| io_err(format!("cannot create {}: {e}", args.out.display())))?;
    for (name, rows, cols, seed) in TABLE_CORPUS {
        let (headers, data) = gen_uci_surrogate(rows, cols, seed);
        let path = args.out.join(format!("{name}.csv"));
        write_table_csv(&path, &headers, &data)
            .map_err(|e| io_err(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {} ({rows} rows, {cols} columns)", path.display());
    }
    println!("note: offline corpus generated locally; no network fetch performed");
    Ok(())
}

fn selftest_check(name: &str, err: f64, tol: f64) -> Result<(), AppError> {
    if err <= tol {
        println!("selftest {name}: max_err={err:.3e} tol={tol:.0e} ok");
        Ok(())
    } else {
        Err(AppError::Runtime {
            code: "selftest_failed",
            detail: format!("{name}: max_err={err:.3e} exceeds tol={tol:.0e}"),
        })
    }
}

fn cmd_selftest() -> Result<(), AppError> {
    use rand::Rng;

    selftest_check("nll_full_gradients_vs_fd", oracle::fd_suite_nll_full(20, 1), 1e-5)?;
    selftest_check("beta_nll_gradients_vs_fd", oracle::fd_suite_beta_nll(20, 2, 0.5), 1e-5)?;
    selftest_check("faithful_gradients_vs_fd", oracle::fd_suite_faithful(20, 3), 1e-5)?;
    selftest_check("mse_gradients_vs_fd", oracle::fd_suite_mse(20, 4), 1e-5)?;
    selftest_check("tic_gradients_vs_fd", oracle::fd_suite_tic_nll(20, 5), 1e-5)?;

    // network input derivatives against central differences
    let mut worst: f64 = 0.0;
    for (seed, dims) in [(6u64, vec![2, 6, 2]), (7, vec![3, 8, 2]), (8, vec![4, 5, 3])] {
        let net = tictac_core::diffmlp::init_mlp(
            &dims,
            tictac_core::diffmlp::Activation::Tanh,
            seed,
        )
        .expect("valid dims");
        let mut rng = rand_seed(seed);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eval = net.forward_with_input_derivatives(&x).expect("shape ok");
        let f = |p: &[f64]| net.forward(p).expect("shape ok");
        let jac = oracle::fd_jacobian(&f, &x, *dims.last().unwrap(), 1e-4);
        let hess = oracle::fd_hessian(&f, &x, *dims.last().unwrap(), 1e-4);
        let flat_j: Vec<f64> = (0..eval.n).flat_map(|i| eval.jac_row(i).to_vec()).collect();
        let flat_h: Vec<f64> = (0..eval.n).flat_map(|i| eval.hess_slice(i).to_vec()).collect();
        worst = worst.max(oracle::rel_err_inf(&flat_j, &jac));
        worst = worst.max(oracle::rel_err_inf(&flat_h, &hess));
    }
    selftest_check("network_derivatives_vs_fd", worst, 1e-5)?;

    // correlation metric against the dense-inverse brute force
    let mut rng = rand_seed(9);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let cov = oracle::random_pd(&mut rng, 5);
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y_hat: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fast = tac(&y, &y_hat, &cov).expect("dim 5");
        let brute = oracle::brute_force_tac(&y, &y_hat, &cov);
        worst = worst.max((fast - brute).abs());
    }
    selftest_check("tac_vs_brute_force", worst, 1e-10)?;

    // decoded covariances stay positive semidefinite
    let mut rng = rand_seed(10);
    let mut worst_eig: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=5);
        let eval = oracle::random_diffeval(&mut rng, n, m);
        let raw: Vec<f64> = (0..tictac_core::covheads::tic_raw_len(n))
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let params = tictac_core::covheads::tic_head_decode(&raw).expect("valid length");
        let cov = tictac_core::covheads::tic_covariance(&eval, &params).expect("shapes agree");
        worst_eig = worst_eig.min(min_eigenvalue(&cov));
    }
    selftest_check("tic_covariance_psd_floor", -worst_eig, 1e-10)?;

    println!("selftest: all checks passed");
    Ok(())
}

fn rand_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
