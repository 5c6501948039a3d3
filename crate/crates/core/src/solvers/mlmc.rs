//! Unbiased randomized multilevel Monte Carlo for the dropout solution.
//!
//! Each replica draws a random level `K = m₀ + m` with `m ~ Geometric(r)`
//! on `{0, 1, …}`, draws `2^{K+1}` masks per row and solves four SAA
//! problems: one on the first `2^{m₀}` draws, one on all draws and one on
//! each of the odd and even halves. With
//! `Δ̄ = θ̂(2^{K+1}) − ½(θ̂ᴼ + θ̂ᴱ)` the replica reports
//! `Z = Δ̄ / (r(1−r)^{K−m₀}) + θ_{m₀}`, whose expectation is the exact
//! dropout solution. Replicas are independent and combined in index order.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::saa::{solve_saa_sets, DrawSet};
use super::{check, mle_phi};
use crate::dropout::DropoutSpec;
use crate::error::{DroError, Result};
use crate::glm::{Dataset, GlmFamily};
use crate::optim::GdConfig;
use crate::rng::{self, derive_seed};

/// `1 − 2^{−3/2}`, the rate minimizing cost × variance.
pub const DEFAULT_RATE: f64 = 0.646_446_609_406_726_2;

/// Levels above `m₀ + LEVEL_CAP` abort the run.
pub const LEVEL_CAP: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcConfig {
    /// Geometric success probability, in `(1/2, 3/4)`.
    pub r: f64,
    /// Burn-in level.
    pub m0: usize,
    /// Number of independent replicas `L`.
    pub replicas: usize,
    pub inner: GdConfig,
    pub master_seed: u64,
}

impl Default for MlmcConfig {
    fn default() -> Self {
        MlmcConfig { r: DEFAULT_RATE, m0: 3, replicas: 1000, inner: GdConfig::newton(), master_seed: 0 }
    }
}

impl MlmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.5 && self.r < 0.75) {
            return Err(DroError::InvalidParameter(format!(
                "geometric rate r = {} must lie in (1/2, 3/4) for finite cost and variance",
                self.r
            )));
        }
        if self.replicas == 0 {
            return Err(DroError::InvalidParameter("need at least one replica".into()));
        }
        self.inner.validate()
    }

    /// Warns when `2^{m₀+1}` is not small against `2^d`, i.e. when plain
    /// enumeration would be no more expensive than the burn-in level.
    pub fn advisory(&self, d: usize) -> Option<String> {
        (self.m0 + 1 >= d).then(|| {
            format!("m0 = {} is not small relative to d = {d}; exact enumeration may be cheaper", self.m0)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub level: usize,
    pub z: Vec<f64>,
    pub delta_bar: Vec<f64>,
    /// `n · 2^{K+1}`.
    pub draws_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmcReport {
    /// Mean of `Z` over replicas.
    pub estimate: Vec<f64>,
    pub replicas: Vec<ReplicaRecord>,
    pub total_draws: u64,
    /// Per-coordinate sample variance of `Z`.
    pub empirical_variance: Vec<f64>,
    /// `n · 2^{m₀+1} · r / (2r − 1)`.
    pub expected_cost_formula_value: f64,
    /// δ = 0 maximum likelihood dispersion, reported alongside β.
    pub phi: f64,
}

impl MlmcReport {
    pub fn mean_draws_per_replica(&self) -> f64 {
        self.total_draws as f64 / self.replicas.len() as f64
    }

    /// Standard error of each coordinate of the estimate.
    pub fn std_errors(&self) -> Vec<f64> {
        let l = self.replicas.len() as f64;
        self.empirical_variance.iter().map(|v| (v / l).sqrt()).collect()
    }
}

/// Expected draws of one replica.
pub fn expected_draws_per_replica(n: usize, r: f64, m0: usize) -> f64 {
    n as f64 * 2f64.powi(m0 as i32 + 1) * r / (2.0 * r - 1.0)
}

/// `K = m₀ + m` with `P(m) = r(1−r)^m`.
pub fn sample_level<R: Rng + ?Sized>(r: f64, m0: usize, rng: &mut R) -> Result<usize> {
    let geo = Geometric::new(r).map_err(|e| DroError::InvalidParameter(e.to_string()))?;
    let m = geo.sample(rng) as usize;
    if m > LEVEL_CAP {
        return Err(DroError::LevelCapExceeded { level: m0 + m, cap: m0 + LEVEL_CAP });
    }
    Ok(m0 + m)
}

/// The four SAA solutions of one replica at a given level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSolutions {
    pub theta_m0: Vec<f64>,
    pub full: Vec<f64>,
    pub odd: Vec<f64>,
    pub even: Vec<f64>,
}

impl LevelSolutions {
    pub fn delta_bar(&self) -> Vec<f64> {
        self.full.iter().zip(&self.odd).zip(&self.even).map(|((f, o), e)| f - 0.5 * (o + e)).collect()
    }
}

/// Solves the replica problems at level `level` with masks drawn from the
/// row streams of `replica_seed`.
pub fn replica_at_level(
    family: &GlmFamily,
    data: &Dataset,
    spec: &DropoutSpec,
    inner: &GdConfig,
    m0: usize,
    level: usize,
    replica_seed: u64,
) -> Result<LevelSolutions> {
    if level < m0 {
        return Err(DroError::InvalidParameter(format!("level {level} below burn-in {m0}")));
    }
    if level > m0 + LEVEL_CAP || level >= 62 {
        return Err(DroError::LevelCapExceeded { level, cap: (m0 + LEVEL_CAP).min(61) });
    }
    let draws = 1usize << (level + 1);
    let sets = [DrawSet::Prefix(1 << m0), DrawSet::All, DrawSet::OddDraws, DrawSet::EvenDraws];
    let mut sols = solve_saa_sets(family, data, spec, draws, replica_seed, &sets, inner)?.into_iter();
    let mut next = || sols.next().expect("one solution per set");
    Ok(LevelSolutions { theta_m0: next(), full: next(), odd: next(), even: next() })
}

fn run_replica(family: &GlmFamily, data: &Dataset, spec: &DropoutSpec, cfg: &MlmcConfig, index: usize) -> Result<ReplicaRecord> {
    let seed = derive_seed(cfg.master_seed, index as u64);
    let level = sample_level(cfg.r, cfg.m0, &mut rng::stream(seed, rng::tag::LEVEL))?;
    let sols = replica_at_level(family, data, spec, &cfg.inner, cfg.m0, level, seed)?;
    let delta_bar = sols.delta_bar();
    let p = cfg.r * (1.0 - cfg.r).powi((level - cfg.m0) as i32);
    let z = delta_bar.iter().zip(&sols.theta_m0).map(|(db, t)| db / p + t).collect();
    Ok(ReplicaRecord { level, z, delta_bar, draws_used: (data.n() as u64) << (level + 1) })
}

/// Runs `cfg.replicas` independent replicas (in parallel) and averages them.
/// Any failed replica fails the whole run.
pub fn mlmc_solve(family: &GlmFamily, data: &Dataset, spec: &DropoutSpec, cfg: &MlmcConfig) -> Result<MlmcReport> {
    check(family, data, spec)?;
    cfg.validate()?;
    let results: Vec<Result<ReplicaRecord>> =
        (0..cfg.replicas).into_par_iter().map(|l| run_replica(family, data, spec, cfg, l)).collect();
    let mut replicas = Vec::with_capacity(cfg.replicas);
    for (l, res) in results.into_iter().enumerate() {
        replicas.push(res.map_err(|e| DroError::ReplicaFailed { replica: l, source: Box::new(e) })?);
    }

    let d = data.d();
    let count = replicas.len() as f64;
    let mut estimate = vec![0.0; d];
    for rec in &replicas {
        for (e, z) in estimate.iter_mut().zip(&rec.z) {
            *e += z / count;
        }
    }
    let empirical_variance = (0..d)
        .map(|j| {
            if replicas.len() < 2 {
                return 0.0;
            }
            replicas.iter().map(|rec| (rec.z[j] - estimate[j]).powi(2)).sum::<f64>() / (count - 1.0)
        })
        .collect();
    let total_draws = replicas.iter().map(|r| r.draws_used).sum();
    Ok(MlmcReport {
        estimate,
        replicas,
        total_draws,
        empirical_variance,
        expected_cost_formula_value: expected_draws_per_replica(data.n(), cfg.r, cfg.m0),
        phi: mle_phi(family, data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_mle, make_family, FamilyKind};

    fn data() -> Dataset {
        let rows = vec![
            vec![1.0, 0.5, -0.3],
            vec![-0.7, 1.2, 0.8],
            vec![0.2, -1.1, 1.5],
            vec![1.4, 0.1, -0.6],
            vec![0.4, 0.9, 0.2],
            vec![-1.2, -0.4, 0.7],
        ];
        Dataset::from_rows(&rows, vec![1.3, -0.2, 0.8, 2.1, 0.4, -1.6]).unwrap()
    }

    #[test]
    fn rate_bounds() {
        for r in [0.5, 0.75, 0.8, 0.3] {
            let cfg = MlmcConfig { r, ..MlmcConfig::default() };
            assert!(cfg.validate().is_err(), "r = {r}");
        }
        assert!(MlmcConfig::default().validate().is_ok());
        assert!((DEFAULT_RATE - (1.0 - 2f64.powf(-1.5))).abs() < 1e-15);
    }

    #[test]
    fn cost_formula() {
        let r = DEFAULT_RATE;
        let v = expected_draws_per_replica(30, r, 3);
        assert!((v - 30.0 * 16.0 * r / (2.0 * r - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn levels_start_at_burn_in() {
        let mut rng = rng::stream(1, 0);
        let levels: Vec<usize> = (0..10_000).map(|_| sample_level(0.6, 4, &mut rng).unwrap()).collect();
        assert!(levels.iter().all(|k| *k >= 4));
        let at_m0 = levels.iter().filter(|k| **k == 4).count() as f64 / 10_000.0;
        // P(m = 0) = r
        assert!((at_m0 - 0.6).abs() < 3.0 * (0.6f64 * 0.4 / 10_000.0).sqrt());
    }

    #[test]
    fn zero_delta_collapses_to_mle() {
        let f = make_family(FamilyKind::Linear);
        let d = data();
        let spec = DropoutSpec::homogeneous(0.0, 3).unwrap();
        let cfg = MlmcConfig { replicas: 20, master_seed: 3, ..MlmcConfig::default() };
        let rep = mlmc_solve(&f, &d, &spec, &cfg).unwrap();
        let mle = fit_mle(&f, &d, &GdConfig::default()).unwrap();
        for rec in &rep.replicas {
            assert!(rec.delta_bar.iter().all(|v| v.abs() < 1e-12));
            for (z, b) in rec.z.iter().zip(&mle.beta) {
                assert!((z - b).abs() < 1e-9);
            }
        }
        assert!((rep.phi - mle.phi).abs() < 1e-12 * mle.phi);
    }

    #[test]
    fn report_accounting() {
        let f = make_family(FamilyKind::Linear);
        let d = data();
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        let cfg = MlmcConfig { replicas: 50, master_seed: 8, ..MlmcConfig::default() };
        let rep = mlmc_solve(&f, &d, &spec, &cfg).unwrap();
        assert_eq!(rep.total_draws, rep.replicas.iter().map(|r| r.draws_used).sum::<u64>());
        assert!(rep.replicas.iter().all(|r| r.level >= cfg.m0 && r.draws_used == (6u64 << (r.level + 1))));
        assert!(rep.empirical_variance.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(rep, mlmc_solve(&f, &d, &spec, &cfg).unwrap());
    }

    #[test]
    fn failed_replica_fails_the_run() {
        let f = make_family(FamilyKind::Linear);
        let d = data();
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        let inner = GdConfig { step_rule: crate::optim::StepRule::Fixed(1e-9), tol: 1e-12, max_iters: 2, init: None };
        let cfg = MlmcConfig { replicas: 4, inner, ..MlmcConfig::default() };
        assert!(matches!(mlmc_solve(&f, &d, &spec, &cfg), Err(DroError::ReplicaFailed { replica: 0, .. })));
    }
}
