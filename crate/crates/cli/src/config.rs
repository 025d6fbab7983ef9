//! Run configuration: a flat JSON file mirroring the command-line flags,
//! with flags taking precedence. Everything is validated before any
//! compute starts; unknown keys are rejected.

use std::path::PathBuf;

use serde::Deserialize;
use tictac_core::data::uci::{load_uci, UciSchema};
use tictac_core::data::UnivariateVariant;
use tictac_core::losses::MethodKind;
use tictac_core::trainer::{ExperimentKind, ExperimentSpec, TrainConfig};

use crate::{AppError, RunArgs};

/// Flat key=value config; every key matches a `run` flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub methods: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub d: Option<String>,
    pub samples: Option<usize>,
    pub variant: Option<String>,
    pub csv: Option<String>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta: Option<f64>,
    pub hidden: Option<String>,
    pub jobs: Option<usize>,
    pub no_timing: Option<bool>,
    pub quiet: Option<bool>,
}

/// A validated run: one spec per dataset source, shared protocol settings.
#[derive(Debug)]
pub struct RunPlan {
    pub specs: Vec<ExperimentSpec>,
    pub trials: usize,
    pub out: PathBuf,
    pub jobs: usize,
    pub no_timing: bool,
    /// effective configuration, echoed into results.json
    pub echo: serde_json::Value,
}

fn invalid(code: &'static str, detail: impl Into<String>) -> AppError {
    AppError::Validation { code, detail: detail.into() }
}

pub fn load_file_config(path: &PathBuf) -> Result<FileConfig, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("config", format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| invalid("config", format!("bad config {}: {e}", path.display())))
}

fn parse_list<T, F>(raw: &str, what: &'static str, parse: F) -> Result<Vec<T>, AppError>
where
    F: Fn(&str) -> Option<T>,
{
    let items: Vec<&str> = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(invalid(what, format!("empty {what} list: {raw:?}")));
    }
    items
        .into_iter()
        .map(|s| parse(s).ok_or_else(|| invalid(what, format!("cannot parse {s:?}"))))
        .collect()
}

/// Merges flags over the file config and validates the result.
pub fn build_plan(args: &RunArgs) -> Result<RunPlan, AppError> {
    let file = match &args.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };
    // flags override file keys
    let experiment = args.experiment.clone().or(file.experiment);
    let methods_raw = args.methods.clone().or(file.methods);
    let trials = args.trials.or(file.trials).unwrap_or(1);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let out = args.out.clone().or(file.out.map(PathBuf::from)).unwrap_or_else(|| "results".into());
    let d_raw = args.d.clone().or(file.d);
    let samples = args.samples.or(file.samples);
    let variant_raw = args.variant.clone().or(file.variant);
    let csv_raw = args.csv.clone().or(file.csv);
    let epochs = args.epochs.or(file.epochs).unwrap_or(100);
    let batch_size = args.batch_size.or(file.batch_size);
    let learning_rate = args.learning_rate.or(file.learning_rate).unwrap_or(1e-3);
    let beta = args.beta.or(file.beta).unwrap_or(0.5);
    let hidden_raw = args.hidden.clone().or(file.hidden);
    let jobs = args.jobs.or(file.jobs).unwrap_or(1);
    let no_timing = args.no_timing || file.no_timing.unwrap_or(false);
    let quiet = args.quiet || file.quiet.unwrap_or(false);

    if trials < 1 {
        return Err(invalid("invalid_trials", "trials must be >= 1"));
    }
    if jobs < 1 {
        return Err(invalid("invalid_jobs", "jobs must be >= 1"));
    }
    let experiment =
        experiment.ok_or_else(|| invalid("missing_experiment", "--experiment is required"))?;
    let methods_raw =
        methods_raw.ok_or_else(|| invalid("missing_methods", "--methods is required"))?;

    let methods = parse_list(&methods_raw, "invalid_method", |s| MethodKind::parse(s, beta))?;
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(invalid("invalid_method", format!("duplicate method {}", m.name())));
        }
    }

    let hidden_dims = match &hidden_raw {
        Some(raw) => parse_list(raw, "invalid_hidden", |s| s.parse::<usize>().ok())?,
        None => vec![64, 64],
    };

    let mut base = TrainConfig::new(methods[0], seed);
    base.epochs = epochs;
    base.learning_rate = learning_rate;
    base.hidden_dims = hidden_dims.clone();
    base.quiet = quiet;

    let mut echo = serde_json::Map::new();
    let mut put = |k: &str, v: serde_json::Value| {
        echo.insert(k.to_string(), v);
    };
    put("experiment", experiment.clone().into());
    put("methods", methods_raw.clone().into());
    put("trials", trials.into());
    put("seed", seed.into());
    put("out", out.display().to_string().into());
    put("epochs", epochs.into());
    put("learning_rate", learning_rate.into());
    put("beta", beta.into());
    put("hidden", hidden_dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(",").into());
    put("jobs", jobs.into());
    put("no_timing", no_timing.into());
    put("quiet", quiet.into());

    let specs: Vec<ExperimentSpec> = match experiment.as_str() {
        "univariate" => {
            base.batch_size = batch_size.unwrap_or(256);
            let variant_name = variant_raw.unwrap_or_else(|| "const_5".to_string());
            let variant = UnivariateVariant::parse(&variant_name).ok_or_else(|| {
                invalid("invalid_variant", format!("unknown amplitude profile {variant_name:?}"))
            })?;
            let samples = samples.unwrap_or(10_000);
            if samples < 1 {
                return Err(invalid("invalid_samples", "samples must be >= 1"));
            }
            put("variant", variant.name().into());
            put("samples", samples.into());
            vec![ExperimentSpec {
                kind: ExperimentKind::Univariate { variant, samples },
                methods: methods.clone(),
                base: base.clone(),
            }]
        }
        "multivariate" => {
            base.batch_size = batch_size.unwrap_or(256);
            let d_raw = d_raw.unwrap_or_else(|| "4".to_string());
            let dims = parse_list(&d_raw, "invalid_dimension", |s| s.parse::<usize>().ok())?;
            for &d in &dims {
                if d % 2 != 0 || !(4..=20).contains(&d) {
                    return Err(invalid(
                        "invalid_dimension",
                        format!("d must be even and within [4, 20], got {d}"),
                    ));
                }
            }
            if let Some(s) = samples {
                if s < 1 {
                    return Err(invalid("invalid_samples", "samples must be >= 1"));
                }
                put("samples", s.into());
            }
            put("d", d_raw.clone().into());
            dims.into_iter()
                .map(|d| ExperimentSpec {
                    kind: ExperimentKind::Multivariate { d, samples },
                    methods: methods.clone(),
                    base: base.clone(),
                })
                .collect()
        }
        "uci" => {
            base.batch_size = batch_size.unwrap_or(64);
            let csv_raw = csv_raw
                .ok_or_else(|| invalid("missing_csv", "--csv is required for the uci experiment"))?;
            let paths = parse_list(&csv_raw, "invalid_csv", |s| Some(PathBuf::from(s)))?;
            put("csv", csv_raw.clone().into());
            let mut specs = Vec::with_capacity(paths.len());
            for path in paths {
                let table = load_uci(&UciSchema::new(&path)).map_err(|e| {
                    invalid("invalid_csv", format!("{}: {e}", path.display()))
                })?;
                for w in &table.warnings {
                    eprintln!("warning: {}: {w}", path.display());
                }
                specs.push(ExperimentSpec {
                    kind: ExperimentKind::Uci { table },
                    methods: methods.clone(),
                    base: base.clone(),
                });
            }
            specs
        }
        other => {
            return Err(invalid(
                "invalid_experiment",
                format!("unknown experiment {other:?}; expected univariate, multivariate, or uci"),
            ));
        }
    };
    put("batch_size", base.batch_size.into());

    Ok(RunPlan { specs, trials, out, jobs, no_timing, echo: serde_json::Value::Object(echo) })
}
