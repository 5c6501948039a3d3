//! Simulation experiments: synthetic linear data, coverage of the
//! population loss by the tuned in-sample loss, cross-validated δ, and the
//! MLMC-versus-SGD divergence study. Results are flat tables written as CSV.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dropout::{
    adversary_value, certify_least_favorable, CertificationReport, DropoutSpec, FeasibleNoiseDist, MAX_ENUMERATION_DIM,
};
use crate::error::{DroError, Result};
use crate::glm::{fit_mle, loss_unchecked, make_family, Dataset, FamilyKind, GlmFamily, ModelParams};
use crate::linreg::dropout_ridge;
use crate::optim::GdConfig;
use crate::rng::{self, derive_seed, tag};
use crate::solvers::{mlmc_solve, mle_phi, solve_exact_gd, solve_saa, solve_sgd, MlmcConfig, SgdConfig};
use crate::tuner::{choose_delta, in_sample_loss, mu_linear, population_loss_linear, SIGMA_LINEAR_ORACLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    /// i.i.d. standard normal coordinates.
    #[default]
    StdNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub d: usize,
    pub beta0: Vec<f64>,
    pub noise_sd: f64,
    pub covariate_law: CovariateLaw,
    pub seed: u64,
}

impl SimSpec {
    /// `n` rows, `d` covariates, `β₀ = 1` and the given noise level.
    pub fn ones(n: usize, d: usize, noise_sd: f64, seed: u64) -> Self {
        SimSpec { n, d, beta0: vec![1.0; d], noise_sd, covariate_law: CovariateLaw::StdNormal, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(DroError::InvalidParameter("n and d must be at least 1".into()));
        }
        if self.beta0.len() != self.d {
            return Err(DroError::DimensionMismatch { expected: self.d, got: self.beta0.len() });
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(DroError::InvalidParameter(format!("noise_sd must be finite and ≥ 0, got {}", self.noise_sd)));
        }
        Ok(())
    }

    /// True dispersion `noise_sd²`.
    pub fn phi_star(&self) -> f64 {
        self.noise_sd * self.noise_sd
    }
}

/// `Y = Xβ₀ + ε` with standard normal covariates and `ε ~ N(0, noise_sd²)`,
/// drawn row by row from the data stream of `spec.seed`.
pub fn gen_linear_data(spec: &SimSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, tag::DATA);
    let mut x = Vec::with_capacity(spec.n * spec.d);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let start = x.len();
        match spec.covariate_law {
            CovariateLaw::StdNormal => x.extend((0..spec.d).map(|_| -> f64 { StandardNormal.sample(&mut r) })),
        }
        let eps: f64 = StandardNormal.sample(&mut r);
        let mean: f64 = x[start..].iter().zip(&spec.beta0).map(|(a, b)| a * b).sum();
        y.push(mean + spec.noise_sd * eps);
    }
    Dataset::new(x, y, spec.d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_id: String,
    pub metric: String,
    pub value: f64,
    pub mc_std_err: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn push(&mut self, config_id: impl Into<String>, metric: impl Into<String>, value: f64, se: f64, reps: usize) {
        self.rows.push(ResultRow {
            config_id: config_id.into(),
            metric: metric.into(),
            value,
            mc_std_err: se,
            replications: reps,
        });
    }

    pub fn get(&self, config_id: &str, metric: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.config_id == config_id && r.metric == metric)
    }

    pub fn extend(&mut self, other: ExperimentResult) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record(["config_id", "metric", "value", "mc_std_err", "replications"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(ExperimentResult { rows })
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Frequency and binomial standard error `√(p̂(1−p̂)/reps)`.
pub fn coverage_se(hits: usize, reps: usize) -> (f64, f64) {
    let p = hits as f64 / reps as f64;
    (p, (p * (1.0 - p) / reps as f64).sqrt())
}

/// The δ grid used by cross-validation unless one is given: 0, 0.05, …, 0.5.
pub fn default_cv_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 * 0.05).collect()
}

fn fit_dropout_for_cv(family: &GlmFamily, train: &Dataset, delta: f64) -> Result<Vec<f64>> {
    match family.kind() {
        FamilyKind::Linear => Ok(dropout_ridge(train, delta)?.beta),
        _ => {
            let spec = DropoutSpec::homogeneous(delta, train.d())?;
            let params = if train.d() <= MAX_ENUMERATION_DIM {
                solve_exact_gd(family, train, &spec, &GdConfig::newton())?
            } else {
                solve_saa(family, train, &spec, 256, &GdConfig::newton(), 0)?
            };
            Ok(params.beta)
        }
    }
}

/// K-fold cross-validated δ: the grid value whose dropout fit has the
/// smallest held-out average negative log-likelihood (δ = 0 loss, φ from
/// the δ = 0 fit of the training folds). Rows are shuffled by the fold
/// stream of `seed`; ties go to the smaller δ.
pub fn run_cv_delta(family: &GlmFamily, data: &Dataset, folds: usize, delta_grid: &[f64], seed: u64) -> Result<f64> {
    if delta_grid.is_empty() {
        return Err(DroError::InvalidParameter("delta grid is empty".into()));
    }
    if let Some(bad) = delta_grid.iter().find(|d| !(0.0..=0.95).contains(*d)) {
        return Err(DroError::InvalidParameter(format!("grid value {bad} outside [0, 0.95]")));
    }
    let n = data.n();
    if folds < 2 || folds > n {
        return Err(DroError::InvalidParameter(format!("need 2 ≤ folds ≤ n, got {folds} folds for n = {n}")));
    }
    data.validate_for(family)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, tag::FOLDS));

    let mut totals = vec![0.0; delta_grid.len()];
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let test = data.select(&idx[lo..hi]);
        let train_idx: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
        let train = data.select(&train_idx);
        let phi = mle_phi(family, &train)?;
        for (t, &delta) in totals.iter_mut().zip(delta_grid) {
            let beta = fit_dropout_for_cv(family, &train, delta)?;
            *t += test.rows().zip(test.y()).map(|(x, &y)| loss_unchecked(family, x, y, &beta, phi)).sum::<f64>();
        }
    }
    let mut best = 0;
    for k in 1..totals.len() {
        if totals[k] < totals[best] {
            best = k;
        }
    }
    Ok(delta_grid[best])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub n_list: Vec<usize>,
    pub d: usize,
    pub alpha_list: Vec<f64>,
    pub reps: usize,
    pub noise_sd: f64,
    pub cv_folds: usize,
    pub cv_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            n_list: vec![1000],
            d: 10,
            alpha_list: vec![0.2, 0.1, 0.05],
            reps: 500,
            noise_sd: 10.0,
            cv_folds: 10,
            cv_grid: default_cv_grid(),
            seed: 0,
        }
    }
}

struct CoverageRep {
    dropout_hit: Vec<bool>,
    ols_hit: bool,
    cv_hit: bool,
    cv_delta: f64,
}

/// Frequency with which the in-sample loss `L_n(β̂(δ), φ̂, δ)` reaches the
/// population loss `½ln(2πφ*) + ½`, for δ tuned in oracle mode, for OLS
/// (δ = 0) and for cross-validated δ. `β₀ = 1`; φ̂ is the mean squared OLS
/// residual.
pub fn run_coverage(cfg: &CoverageConfig) -> Result<ExperimentResult> {
    if cfg.reps < 100 {
        return Err(DroError::InvalidParameter(format!("coverage needs at least 100 replications, got {}", cfg.reps)));
    }
    if !(cfg.noise_sd > 0.0) {
        return Err(DroError::InvalidParameter("coverage needs noise_sd > 0".into()));
    }
    let family = make_family(FamilyKind::Linear);
    let phi_star = cfg.noise_sd * cfg.noise_sd;
    let target = population_loss_linear(phi_star);
    let beta0 = vec![1.0; cfg.d];
    let mu = mu_linear(&vec![1.0; cfg.d], &beta0, phi_star)?;
    let mut out = ExperimentResult::default();

    for &n in &cfg.n_list {
        let choices =
            cfg.alpha_list.iter().map(|&a| choose_delta(a, n, mu, SIGMA_LINEAR_ORACLE)).collect::<Result<Vec<_>>>()?;
        let base = derive_seed(cfg.seed, n as u64);
        let reps: Vec<Result<CoverageRep>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = derive_seed(base, rep as u64);
                let data = gen_linear_data(&SimSpec { seed, ..SimSpec::ones(n, cfg.d, cfg.noise_sd, 0) })?;
                let mle = fit_mle(&family, &data, &GdConfig::default())?;
                let loss_at = |delta: f64| -> Result<f64> {
                    let beta = dropout_ridge(&data, delta)?.beta;
                    let spec = DropoutSpec::homogeneous(delta, cfg.d)?;
                    let params = ModelParams { beta, phi: mle.phi };
                    Ok(in_sample_loss(&family, &data, &params, &spec)?.in_sample)
                };
                let dropout_hit =
                    choices.iter().map(|c| loss_at(c.delta).map(|l| l >= target)).collect::<Result<Vec<_>>>()?;
                let ols_hit = loss_at(0.0)? >= target;
                let cv_delta = run_cv_delta(&family, &data, cfg.cv_folds, &cfg.cv_grid, seed)?;
                let cv_hit = loss_at(cv_delta)? >= target;
                Ok(CoverageRep { dropout_hit, ols_hit, cv_hit, cv_delta })
            })
            .collect();
        let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
        let k = reps.len();

        for (a, choice) in choices.iter().enumerate() {
            let id = format!("n={n}/dropout/alpha={}", choice.alpha);
            let (p, se) = coverage_se(reps.iter().filter(|r| r.dropout_hit[a]).count(), k);
            out.push(&id, "coverage", p, se, k);
            out.push(&id, "delta", choice.delta, 0.0, k);
        }
        let (p, se) = coverage_se(reps.iter().filter(|r| r.ols_hit).count(), k);
        out.push(format!("n={n}/ols"), "coverage", p, se, k);
        let id = format!("n={n}/cv{}", cfg.cv_folds);
        let (p, se) = coverage_se(reps.iter().filter(|r| r.cv_hit).count(), k);
        out.push(&id, "coverage", p, se, k);
        let (m, se) = mean_se(&reps.iter().map(|r| r.cv_delta).collect::<Vec<_>>());
        out.push(&id, "delta", m, se, k);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceConfig {
    pub n: usize,
    pub d: usize,
    pub noise_sd: f64,
    pub alpha: f64,
    pub reps: usize,
    /// Replica counts `L` for MLMC; SGD is also run at each matched budget.
    pub l_grid: Vec<usize>,
    /// Extra SGD budgets, in per-row mask draws.
    pub budget_grid: Vec<usize>,
    pub r: f64,
    pub m0: usize,
    pub sgd_lr: f64,
    pub sgd_batch: usize,
    pub seed: u64,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        DivergenceConfig {
            n: 50,
            d: 100,
            noise_sd: 10.0,
            alpha: 0.1,
            reps: 20,
            l_grid: vec![400, 800, 1600],
            budget_grid: vec![],
            r: 0.6,
            m0: 5,
            sgd_lr: 1e-4,
            sgd_batch: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMethod {
    Mlmc,
    /// SGD with the draw budget of the MLMC run at the same `L`.
    SgdMatched,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub rep: usize,
    pub method: DivergenceMethod,
    /// `L` for MLMC and matched SGD, the budget for plain SGD.
    pub setting: usize,
    pub draws: u64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceOutcome {
    pub delta: f64,
    pub records: Vec<DivergenceRecord>,
    pub result: ExperimentResult,
}

impl DivergenceOutcome {
    /// Fraction of repetitions where MLMC at `l` has the smaller ∞-norm
    /// error than SGD at the matched budget.
    pub fn mlmc_win_rate(&self, l: usize) -> f64 {
        let pick = |m: DivergenceMethod| -> Vec<&DivergenceRecord> {
            self.records.iter().filter(|r| r.method == m && r.setting == l).collect()
        };
        let (mlmc, sgd) = (pick(DivergenceMethod::Mlmc), pick(DivergenceMethod::SgdMatched));
        let wins = mlmc.iter().zip(&sgd).filter(|(a, b)| a.linf < b.linf).count();
        wins as f64 / mlmc.len().max(1) as f64
    }
}

fn norms(est: &[f64], target: &[f64]) -> (f64, f64, f64) {
    let diff: Vec<f64> = est.iter().zip(target).map(|(a, b)| (a - b).abs()).collect();
    let l1 = diff.iter().sum();
    let l2 = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linf = diff.iter().fold(0.0f64, |m, v| m.max(*v));
    (l1, l2, linf)
}

/// Distance of MLMC and SGD solutions to the closed-form dropout solution
/// `β*_n` on data with `β₀ = 1`, δ tuned in oracle mode.
pub fn run_divergence(cfg: &DivergenceConfig) -> Result<DivergenceOutcome> {
    if cfg.l_grid.is_empty() && cfg.budget_grid.is_empty() {
        return Err(DroError::InvalidParameter("divergence needs a nonempty L or budget grid".into()));
    }
    if cfg.reps == 0 {
        return Err(DroError::InvalidParameter("need at least one repetition".into()));
    }
    let family = make_family(FamilyKind::Linear);
    let phi_star = cfg.noise_sd * cfg.noise_sd;
    let mu = mu_linear(&vec![1.0; cfg.d], &vec![1.0; cfg.d], phi_star)?;
    let delta = choose_delta(cfg.alpha, cfg.n, mu, SIGMA_LINEAR_ORACLE)?.delta;
    let spec = DropoutSpec::homogeneous(delta, cfg.d)?;

    let mut records = Vec::new();
    for rep in 0..cfg.reps {
        let seed = derive_seed(cfg.seed, rep as u64);
        let data = gen_linear_data(&SimSpec { seed, ..SimSpec::ones(cfg.n, cfg.d, cfg.noise_sd, 0) })?;
        let target = dropout_ridge(&data, delta)?.beta;
        let sgd = |budget: usize, stream: u64| -> Result<Vec<f64>> {
            let sc = SgdConfig {
                lr: cfg.sgd_lr,
                batch: cfg.sgd_batch,
                budget,
                init: None,
                seed: derive_seed(seed, stream),
            };
            Ok(solve_sgd(&family, &data, &spec, &sc)?.beta)
        };
        for (k, &l) in cfg.l_grid.iter().enumerate() {
            let mc = MlmcConfig {
                r: cfg.r,
                m0: cfg.m0,
                replicas: l,
                inner: GdConfig::newton(),
                master_seed: derive_seed(seed, 2 * k as u64),
            };
            let report = mlmc_solve(&family, &data, &spec, &mc)?;
            let (l1, l2, linf) = norms(&report.estimate, &target);
            let draws = report.total_draws;
            records.push(DivergenceRecord { rep, method: DivergenceMethod::Mlmc, setting: l, draws, l1, l2, linf });
            let beta = sgd(draws as usize, 2 * k as u64 + 1)?;
            let (l1, l2, linf) = norms(&beta, &target);
            records.push(DivergenceRecord { rep, method: DivergenceMethod::SgdMatched, setting: l, draws, l1, l2, linf });
        }
        for (k, &budget) in cfg.budget_grid.iter().enumerate() {
            let beta = sgd(budget, 2 * (cfg.l_grid.len() + k) as u64 + 1)?;
            let (l1, l2, linf) = norms(&beta, &target);
            let draws = budget as u64;
            records.push(DivergenceRecord { rep, method: DivergenceMethod::Sgd, setting: budget, draws, l1, l2, linf });
        }
    }

    let mut result = ExperimentResult::default();
    result.push("setup", "delta", delta, 0.0, cfg.reps);
    let mut emit = |id: String, method: DivergenceMethod, setting: usize| {
        let sel: Vec<&DivergenceRecord> =
            records.iter().filter(|r| r.method == method && r.setting == setting).collect();
        let col = |f: fn(&DivergenceRecord) -> f64| mean_se(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        for (name, (m, se)) in [
            ("draws", col(|r| r.draws as f64)),
            ("l1", col(|r| r.l1)),
            ("l2", col(|r| r.l2)),
            ("linf", col(|r| r.linf)),
        ] {
            result.push(&id, name, m, se, sel.len());
        }
    };
    for &l in &cfg.l_grid {
        emit(format!("mlmc/L={l}"), DivergenceMethod::Mlmc, l);
        emit(format!("sgd_matched/L={l}"), DivergenceMethod::SgdMatched, l);
    }
    for &b in &cfg.budget_grid {
        emit(format!("sgd/budget={b}"), DivergenceMethod::Sgd, b);
    }
    let mut outcome = DivergenceOutcome { delta, records, result };
    for &l in &cfg.l_grid {
        let (p, se) = coverage_se((outcome.mlmc_win_rate(l) * cfg.reps as f64).round() as usize, cfg.reps);
        outcome.result.push(format!("mlmc_vs_sgd/L={l}"), "linf_win_rate", p, se, cfg.reps);
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckConfig {
    pub family: FamilyKind,
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    /// Random feasible product laws compared with the dropout law.
    pub trials: usize,
    /// Random convex test functions for the one-dimensional adversary.
    pub functions: usize,
    pub grid_size: usize,
    pub seed: u64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        OracleCheckConfig {
            family: FamilyKind::Linear,
            n: 20,
            d: 4,
            delta: 0.3,
            trials: 200,
            functions: 50,
            grid_size: 201,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckOutcome {
    pub certification: CertificationReport,
    /// Largest `|grid optimum − dropout law value|` over the test functions.
    pub adversary_max_gap: f64,
    pub result: ExperimentResult,
}

/// A random convex function on `[0, ∞)`: a quadratic, an exponential and a
/// kink, each with a random nonnegative weight.
pub fn random_convex_fn<R: Rng + ?Sized>(rng: &mut R) -> impl Fn(f64) -> f64 {
    let a = rng.random::<f64>() * 3.0;
    let b = rng.random::<f64>() * 2.0;
    let c = rng.random::<f64>();
    let s = rng.random::<f64>() * 2.0 - 1.0;
    let k = rng.random::<f64>();
    let t = rng.random::<f64>() * 1.5;
    let lin = rng.random::<f64>() * 2.0 - 1.0;
    move |z: f64| a * (z - b).powi(2) + c * (s * z).exp() + k * (z - t).abs() + lin * z
}

/// Worst-case check: random feasible product laws never beat dropout on a
/// random instance, and on random convex functions of one coordinate the
/// gridded two-point adversary lands on the dropout law.
pub fn run_oracle_check(cfg: &OracleCheckConfig) -> Result<OracleCheckOutcome> {
    let family = make_family(cfg.family);
    let mut r = rng::stream(cfg.seed, 0);
    let base = gen_linear_data(&SimSpec::ones(cfg.n, cfg.d, 1.0, cfg.seed))?;
    let y: Vec<f64> = match cfg.family {
        FamilyKind::Linear => base.y().to_vec(),
        FamilyKind::Logistic => base.y().iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect(),
        FamilyKind::Poisson => base.y().iter().map(|v| v.abs().floor()).collect(),
    };
    let data = Dataset::new(base.x_flat().to_vec(), y, cfg.d)?;
    let beta: Vec<f64> = (0..cfg.d).map(|_| -> f64 { StandardNormal.sample(&mut r) }).map(|v: f64| 0.5 * v).collect();
    let phi = if family.has_free_dispersion() { 0.5 + r.random::<f64>() } else { 1.0 };
    let params = ModelParams::new(beta, phi)?;
    let spec = DropoutSpec::homogeneous(cfg.delta, cfg.d)?;
    let certification = certify_least_favorable(&family, &data, &spec, &params, cfg.trials, &mut r)?;

    let law = FeasibleNoiseDist::dropout(cfg.delta);
    let mut gap = 0.0f64;
    for _ in 0..cfg.functions {
        let f = random_convex_fn(&mut r);
        let (v, _) = adversary_value(&f, cfg.delta, cfg.grid_size)?;
        gap = gap.max((v - law.expect(&f)).abs());
    }

    let mut result = ExperimentResult::default();
    let id = format!("oracle/{}/d={}/delta={}", cfg.family, cfg.d, cfg.delta);
    result.push(&id, "violations", certification.violations as f64, 0.0, cfg.trials);
    result.push(&id, "max_violation", certification.max_violation, 0.0, cfg.trials);
    result.push(&id, "dropout_value", certification.dropout_value, 0.0, cfg.trials);
    result.push(&id, "adversary_max_gap", gap, 0.0, cfg.functions);
    Ok(OracleCheckOutcome { certification, adversary_max_gap: gap, result })
}
