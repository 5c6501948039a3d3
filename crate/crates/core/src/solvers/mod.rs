//! Routes to the dropout training solution: exact gradient descent over the
//! enumerated objective, dropout SGD, sample average approximation, and the
//! unbiased multilevel Monte Carlo estimator.
//!
//! All routes optimize β with unit dispersion; the argmin in β does not
//! depend on φ. The returned φ is the δ = 0 maximum likelihood value.

pub mod mlmc;
pub mod saa;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::DropoutSpec;
use crate::error::{DroError, Result};
use crate::glm::{dot, Dataset, FamilyKind, GlmFamily, ModelParams, PHI_FLOOR};
use crate::objective::ExactDropoutObjective;
use crate::optim::{inf_norm, minimize};
use crate::rng;

pub use crate::optim::{GdConfig, StepRule};
pub use mlmc::{mlmc_solve, MlmcConfig, MlmcReport, ReplicaRecord};
pub use saa::DrawSet;

/// δ = 0 maximum likelihood dispersion.
///
/// For the linear family this is the mean squared residual of the
/// least-squares projection, which is unique even when `XᵀX` is singular.
pub fn mle_phi(family: &GlmFamily, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    match family.kind() {
        FamilyKind::Linear => {
            let x = data.x_matrix();
            let y = data.y_vector();
            let svd = x.clone().svd(true, true);
            let coef = svd
                .solve(&y, 1e-12 * svd.singular_values.max().max(1.0))
                .map_err(|e| DroError::Singular(e.to_string()))?;
            let resid = y - x * coef;
            Ok((resid.norm_squared() / data.n() as f64).max(PHI_FLOOR))
        }
        _ => Ok(1.0),
    }
}

fn check(family: &GlmFamily, data: &Dataset, spec: &DropoutSpec) -> Result<()> {
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    if spec.dim() != data.d() {
        return Err(DroError::DimensionMismatch { expected: data.d(), got: spec.dim() });
    }
    data.validate_for(family)
}

/// Gradient descent on the exactly enumerated dropout objective.
pub fn solve_exact_gd(family: &GlmFamily, data: &Dataset, spec: &DropoutSpec, cfg: &GdConfig) -> Result<ModelParams> {
    check(family, data, spec)?;
    let obj = ExactDropoutObjective::new(family, data, spec)?;
    let sol = minimize(&obj, cfg)?;
    Ok(ModelParams { beta: sol.beta, phi: mle_phi(family, data)? })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    /// Draws averaged per update.
    pub batch: usize,
    /// Total number of per-draw gradient evaluations.
    pub budget: usize,
    pub init: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 1e-4, batch: 1, budget: 100_000, init: None, seed: 0 }
    }
}

/// Above this ∞-norm an SGD iterate is declared divergent.
pub const SGD_DIVERGENCE_LIMIT: f64 = 1e8;

/// Dropout SGD: each update averages per-draw gradients of the unit
/// dispersion loss at `(xₖ ⊙ ξₖ, yₖ)` with rows drawn uniformly and masks
/// from the dropout law. The final iterate is returned.
pub fn solve_sgd(family: &GlmFamily, data: &Dataset, spec: &DropoutSpec, cfg: &SgdConfig) -> Result<ModelParams> {
    check(family, data, spec)?;
    if !(cfg.lr > 0.0) || cfg.batch == 0 {
        return Err(DroError::InvalidParameter("SGD needs lr > 0 and batch ≥ 1".into()));
    }
    let d = data.d();
    let mut beta = match &cfg.init {
        Some(b) if b.len() != d => return Err(DroError::DimensionMismatch { expected: d, got: b.len() }),
        Some(b) => b.clone(),
        None => vec![0.0; d],
    };
    let thresholds = spec.drop_thresholds();
    let scales = spec.scales();
    let mut r = rng::stream(cfg.seed, rng::tag::SGD);
    let mut grad = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut u = vec![0u32; d];
    let mut remaining = cfg.budget;
    let mut updates = 0u64;
    while remaining > 0 {
        let b = remaining.min(cfg.batch);
        remaining -= b;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..b {
            let i = r.random_range(0..data.n());
            let x = data.row(i);
            r.fill(&mut u[..]);
            for j in 0..d {
                let keep = (u[j] as u64 >= thresholds[j]) as u8 as f64;
                z[j] = keep * x[j] * scales[j];
            }
            let eta = dot(&z, &beta);
            let res = family.psi_dot(eta) - data.y()[i];
            for (g, zj) in grad.iter_mut().zip(&z) {
                *g += res * zj;
            }
        }
        let step = cfg.lr / b as f64;
        for (bj, g) in beta.iter_mut().zip(&grad) {
            *bj -= step * g;
        }
        updates += 1;
        if updates % 256 == 0 || remaining == 0 {
            let norm = if beta.iter().all(|b| b.is_finite()) { inf_norm(&beta) } else { f64::INFINITY };
            if norm > SGD_DIVERGENCE_LIMIT {
                return Err(DroError::Diverged(norm));
            }
        }
    }
    Ok(ModelParams { beta, phi: mle_phi(family, data)? })
}

/// Minimizer of the `K`-draw sample average approximation, with row `i`
/// drawing its masks from stream `i` of `seed`.
pub fn solve_saa(
    family: &GlmFamily,
    data: &Dataset,
    spec: &DropoutSpec,
    masks_per_row: usize,
    inner: &GdConfig,
    seed: u64,
) -> Result<ModelParams> {
    check(family, data, spec)?;
    let mut sols = saa::solve_saa_sets(family, data, spec, masks_per_row, seed, &[DrawSet::All], inner)?;
    Ok(ModelParams { beta: sols.remove(0), phi: mle_phi(family, data)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{fit_mle, make_family};
    use crate::linreg::dropout_ridge;

    fn linear_data() -> Dataset {
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
    fn exact_gd_matches_ridge_closed_form() {
        let f = make_family(FamilyKind::Linear);
        let data = linear_data();
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        let cfg = GdConfig { tol: 1e-12, ..GdConfig::default() };
        let sol = solve_exact_gd(&f, &data, &spec, &cfg).unwrap();
        let ridge = dropout_ridge(&data, 0.3).unwrap();
        for (a, b) in sol.beta.iter().zip(&ridge.beta) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_delta_routes_agree_with_mle() {
        let f = make_family(FamilyKind::Linear);
        let data = linear_data();
        let spec = DropoutSpec::homogeneous(0.0, 3).unwrap();
        let mle = fit_mle(&f, &data, &GdConfig::default()).unwrap();
        let gd = solve_exact_gd(&f, &data, &spec, &GdConfig { tol: 1e-12, ..GdConfig::default() }).unwrap();
        let saa = solve_saa(&f, &data, &spec, 3, &GdConfig::newton(), 9).unwrap();
        for j in 0..3 {
            assert!((gd.beta[j] - mle.beta[j]).abs() < 1e-8);
            assert!((saa.beta[j] - mle.beta[j]).abs() < 1e-10);
        }
        assert!((gd.phi - mle.phi).abs() < 1e-12 * mle.phi);
    }

    #[test]
    fn sgd_zero_budget_returns_init() {
        let f = make_family(FamilyKind::Linear);
        let data = linear_data();
        let spec = DropoutSpec::homogeneous(0.2, 3).unwrap();
        let cfg = SgdConfig { budget: 0, init: Some(vec![0.1, 0.2, 0.3]), ..SgdConfig::default() };
        assert_eq!(solve_sgd(&f, &data, &spec, &cfg).unwrap().beta, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn sgd_detects_divergence() {
        let f = make_family(FamilyKind::Linear);
        let data = linear_data();
        let spec = DropoutSpec::homogeneous(0.2, 3).unwrap();
        let cfg = SgdConfig { lr: 50.0, budget: 10_000, ..SgdConfig::default() };
        assert!(matches!(solve_sgd(&f, &data, &spec, &cfg), Err(DroError::Diverged(_))));
    }

    #[test]
    fn saa_is_seeded() {
        let f = make_family(FamilyKind::Logistic);
        let rows = vec![vec![1.0, 0.3], vec![1.0, -0.8], vec![1.0, 1.4], vec![1.0, -0.1], vec![1.0, 0.6]];
        let data = Dataset::from_rows(&rows, vec![1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let spec = DropoutSpec::homogeneous(0.25, 2).unwrap();
        let a = solve_saa(&f, &data, &spec, 32, &GdConfig::newton(), 4).unwrap();
        let b = solve_saa(&f, &data, &spec, 32, &GdConfig::newton(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mle_phi_handles_wide_designs() {
        let f = make_family(FamilyKind::Linear);
        let data = Dataset::from_rows(&[vec![1.0, 2.0, 0.5], vec![0.3, -1.0, 2.0]], vec![1.0, 2.0]).unwrap();
        assert_eq!(mle_phi(&f, &data).unwrap(), PHI_FLOOR);
    }
}
