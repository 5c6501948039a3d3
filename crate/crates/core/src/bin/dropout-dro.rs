use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dropout_dro::error::{DroError, Result};
use dropout_dro::harness::{
    default_cv_grid, gen_linear_data, run_coverage, run_divergence, run_oracle_check, CoverageConfig,
    DivergenceConfig, ExperimentResult, OracleCheckConfig, SimSpec,
};
use dropout_dro::solvers::{mlmc_solve, solve_exact_gd, solve_saa, solve_sgd, MlmcConfig, SgdConfig};
use dropout_dro::tuner::{tune_oracle_linear, tune_plugin, DeltaChoice, TuneMode};
use dropout_dro::{fit_mle, make_family, Dataset, DropoutSpec, FamilyKind, GdConfig};

#[derive(Parser, Debug)]
#[command(name = "dropout-dro", version, about = "Dropout training as distributionally robust GLM estimation")]
struct Cli {
    /// TOML file whose keys are long flag names; flags on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV; a `.manifest.json` is written next to it. Stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a GLM by maximum likelihood or dropout training.
    Fit(FitArgs),
    /// Choose δ = z₁₋α σ / (μ √n).
    TuneDelta(TuneArgs),
    /// Check that no feasible noise law beats dropout.
    OracleCheck(OracleArgs),
    /// Run a simulation study.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
    /// Simulate a linear-model dataset.
    GenData(GenArgs),
}

#[derive(Subcommand, Debug)]
enum Experiment {
    Coverage(CoverageArgs),
    Divergence(DivergenceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Mle,
    Exact,
    Sgd,
    Saa,
    Mlmc,
}

#[derive(clap::Args, Debug)]
struct FitArgs {
    /// CSV with a `y` column followed by covariates.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "linear")]
    family: FamilyKind,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, value_enum, default_value = "exact")]
    method: Method,
    /// Masks per row for `saa`.
    #[arg(long, default_value_t = 1000)]
    masks: usize,
    #[arg(long, default_value_t = 1000)]
    replicas: usize,
    #[arg(long, default_value_t = dropout_dro::solvers::mlmc::DEFAULT_RATE)]
    r: f64,
    #[arg(long, default_value_t = 3)]
    m0: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 100_000)]
    budget: usize,
}

#[derive(clap::Args, Debug)]
struct TuneArgs {
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value = "oracle")]
    mode: TuneMode,
    /// Sample size (oracle mode).
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Covariate dimension with β* = 1 (oracle mode).
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 10.0)]
    noise_sd: f64,
    /// Data for plugin mode.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "linear")]
    family: FamilyKind,
}

#[derive(clap::Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value = "linear")]
    family: FamilyKind,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 50)]
    functions: usize,
    #[arg(long, default_value_t = 201)]
    grid_size: usize,
}

#[derive(clap::Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Comma-separated β₀; ones by default.
    #[arg(long, value_delimiter = ',')]
    beta0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
}

#[derive(clap::Args, Debug)]
struct CoverageArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 10.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Comma-separated δ grid for cross-validation; 0, 0.05, …, 0.5 by default.
    #[arg(long, value_delimiter = ',')]
    cv_grid: Option<Vec<f64>>,
}

#[derive(clap::Args, Debug)]
struct DivergenceArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 10.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "400,800,1600")]
    l_grid: Vec<usize>,
    /// Extra SGD draw budgets.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    #[arg(long, default_value_t = 0.6)]
    r: f64,
    #[arg(long, default_value_t = 5)]
    m0: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Per-repetition divergences as CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: &'a [String],
    config_file: Option<String>,
    seed: u64,
    threads: Option<usize>,
    outputs: Vec<String>,
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let mut args: Vec<String> = std::env::args().collect();
    let matches = Cli::command().try_get_matches_from(&args).unwrap_or_else(|e| e.exit());
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        args.extend(config_tokens(path, &matches)?);
    }
    let matches = Cli::command().try_get_matches_from(&args).unwrap_or_else(|e| e.exit());
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());

    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| DroError::Config(e.to_string()))?;
    }

    let seed = cli.seed;
    let (name, csv, extra): (&str, Vec<u8>, Vec<(PathBuf, Vec<u8>)>) = match &cli.command {
        Command::Fit(a) => ("fit", to_csv(&fit(a, seed)?)?, vec![]),
        Command::TuneDelta(a) => ("tune-delta", to_csv(&tune(a)?)?, vec![]),
        Command::OracleCheck(a) => {
            let cfg = OracleCheckConfig {
                family: a.family,
                n: a.n,
                d: a.d,
                delta: a.delta,
                trials: a.trials,
                functions: a.functions,
                grid_size: a.grid_size,
                seed,
            };
            ("oracle-check", to_csv(&run_oracle_check(&cfg)?.result)?, vec![])
        }
        Command::GenData(a) => {
            let beta0 = a.beta0.clone().unwrap_or_else(|| vec![1.0; a.d]);
            let spec = SimSpec { beta0, ..SimSpec::ones(a.n, a.d, a.noise_sd, seed) };
            let mut buf = Vec::new();
            gen_linear_data(&spec)?.write_csv(&mut buf)?;
            ("gen-data", buf, vec![])
        }
        Command::Experiment { which: Experiment::Coverage(a) } => {
            let cfg = CoverageConfig {
                n_list: a.n_list.clone(),
                d: a.d,
                alpha_list: a.alphas.clone(),
                reps: a.reps,
                noise_sd: a.noise_sd,
                cv_folds: a.folds,
                cv_grid: a.cv_grid.clone().unwrap_or_else(default_cv_grid),
                seed,
            };
            ("experiment coverage", to_csv(&run_coverage(&cfg)?)?, vec![])
        }
        Command::Experiment { which: Experiment::Divergence(a) } => {
            let cfg = DivergenceConfig {
                n: a.n,
                d: a.d,
                noise_sd: a.noise_sd,
                alpha: a.alpha,
                reps: a.reps,
                l_grid: a.l_grid.clone(),
                budget_grid: a.budgets.clone(),
                r: a.r,
                m0: a.m0,
                sgd_lr: a.lr,
                sgd_batch: a.batch,
                seed,
            };
            let out = run_divergence(&cfg)?;
            let mut extra = vec![];
            if let Some(p) = &a.records {
                let mut w = csv::Writer::from_writer(Vec::new());
                for rec in &out.records {
                    w.serialize(rec)?;
                }
                extra.push((p.clone(), w.into_inner().map_err(|e| DroError::Io(e.into_error()))?));
            }
            ("experiment divergence", to_csv(&out.result)?, extra)
        }
    };

    match &cli.out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            let mut outputs = vec![path.display().to_string()];
            for (p, bytes) in &extra {
                std::fs::write(p, bytes)?;
                outputs.push(p.display().to_string());
            }
            let manifest = Manifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: name,
                args: &args[1..],
                config_file: cli.config.as_ref().map(|p| p.display().to_string()),
                seed,
                threads: cli.threads,
                outputs,
            };
            let json = serde_json::to_string_pretty(&manifest).map_err(|e| DroError::Config(e.to_string()))?;
            std::fs::write(manifest_path(path), json + "\n")?;
        }
        None => {
            std::io::stdout().write_all(&csv)?;
            for (p, bytes) in &extra {
                std::fs::write(p, bytes)?;
            }
        }
    }
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn to_csv(r: &ExperimentResult) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.write_csv(&mut buf)?;
    Ok(buf)
}

/// Flag tokens for config keys the command line did not set.
fn config_tokens(path: &Path, matches: &ArgMatches) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| DroError::Config(e.to_string()))?;
    let mut leaf = matches;
    while let Some((_, sub)) = leaf.subcommand() {
        leaf = sub;
    }
    let mut tokens = Vec::new();
    for (key, value) in &table {
        let id = key.replace('-', "_");
        if key == "config" {
            return Err(DroError::Config("a config file cannot name another config file".into()));
        }
        let from_cli = leaf.try_contains_id(&id).unwrap_or(false)
            && leaf.value_source(&id) == Some(ValueSource::CommandLine);
        if from_cli {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let scalar = |v: &toml::Value| -> Result<String> {
            match v {
                toml::Value::String(s) => Ok(s.clone()),
                toml::Value::Integer(i) => Ok(i.to_string()),
                toml::Value::Float(f) => Ok(f.to_string()),
                other => Err(DroError::Config(format!("unsupported value for '{key}': {other}"))),
            }
        };
        match value {
            toml::Value::Boolean(true) => tokens.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
                tokens.push(format!("{flag}={}", parts.join(",")));
            }
            v => tokens.push(format!("{flag}={}", scalar(v)?)),
        }
    }
    Ok(tokens)
}

fn load_data(path: &Option<PathBuf>) -> Result<Dataset> {
    let p = path.as_ref().ok_or_else(|| DroError::Config("--data is required".into()))?;
    Dataset::from_csv_path(p)
}

fn fit(a: &FitArgs, seed: u64) -> Result<ExperimentResult> {
    let family = make_family(a.family);
    let data = load_data(&a.data)?;
    let spec = DropoutSpec::homogeneous(a.delta, data.d())?;
    let id = format!("fit/{}/{:?}/delta={}", a.family, a.method, a.delta).to_lowercase();
    let mut out = ExperimentResult::default();
    let (params, se) = match a.method {
        Method::Mle => (fit_mle(&family, &data, &GdConfig::default())?, None),
        Method::Exact => (solve_exact_gd(&family, &data, &spec, &GdConfig::default())?, None),
        Method::Sgd => {
            let cfg = SgdConfig { lr: a.lr, batch: a.batch, budget: a.budget, init: None, seed };
            (solve_sgd(&family, &data, &spec, &cfg)?, None)
        }
        Method::Saa => (solve_saa(&family, &data, &spec, a.masks, &GdConfig::newton(), seed)?, None),
        Method::Mlmc => {
            let cfg = MlmcConfig { r: a.r, m0: a.m0, replicas: a.replicas, inner: GdConfig::newton(), master_seed: seed };
            if let Some(msg) = cfg.advisory(data.d()) {
                eprintln!("note: {msg}");
            }
            let rep = mlmc_solve(&family, &data, &spec, &cfg)?;
            out.push(&id, "total_draws", rep.total_draws as f64, 0.0, a.replicas);
            out.push(&id, "expected_draws_per_replica", rep.expected_cost_formula_value, 0.0, a.replicas);
            let se = rep.std_errors();
            (dropout_dro::ModelParams { beta: rep.estimate, phi: rep.phi }, Some(se))
        }
    };
    let reps = if matches!(a.method, Method::Mlmc) { a.replicas } else { 1 };
    for (j, b) in params.beta.iter().enumerate() {
        let s = se.as_ref().map_or(0.0, |s| s[j]);
        out.push(&id, format!("beta[{j}]"), *b, s, reps);
    }
    out.push(&id, "phi", params.phi, 0.0, reps);
    Ok(out)
}

fn tune(a: &TuneArgs) -> Result<ExperimentResult> {
    let (id, choice): (String, DeltaChoice) = match a.mode {
        TuneMode::Oracle => {
            let ch = tune_oracle_linear(a.alpha, a.n, &vec![1.0; a.d], a.noise_sd * a.noise_sd)?;
            (format!("tune/oracle/n={}/d={}/noise_sd={}", a.n, a.d, a.noise_sd), ch)
        }
        TuneMode::Plugin => {
            let data = load_data(&a.data)?;
            let ch = tune_plugin(&make_family(a.family), &data, a.alpha)?;
            (format!("tune/plugin/{}/n={}", a.family, data.n()), ch)
        }
    };
    let mut out = ExperimentResult::default();
    for (metric, v) in [
        ("alpha", choice.alpha),
        ("z_quantile", choice.z_quantile),
        ("mu", choice.mu_hat),
        ("sigma", choice.sigma_hat),
        ("c", choice.c),
        ("delta", choice.delta),
    ] {
        out.push(&id, metric, v, 0.0, 1);
    }
    Ok(out)
}
