//! The dropout training objective, exactly and by Monte Carlo, with its
//! score, Hessian and the population quantities that drive the first-order
//! bias of the dropout estimator.
//!
//! Sign conventions: objective values are in minimization form (average
//! negative log-likelihood under dropout noise). [`dropout_score`] and
//! [`dropout_hessian`] are the gradient and Hessian of the *maximized*
//! log-likelihood `Q_n` with unit dispersion, so the gradient of the
//! minimized objective is `−score / a(φ)` and its Hessian `−hessian / a(φ)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dropout::{enumerate_masks, one_zero_masks, sample_mask, DropoutSpec, MaskEnumeration};
use crate::error::{DroError, Result};
use crate::glm::{dot, loss_unchecked, Dataset, GlmFamily, ModelParams};
use crate::optim::SmoothObjective;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveMethod {
    Exact,
    MonteCarlo(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutObjectiveValue {
    pub value: f64,
    pub method: ObjectiveMethod,
    /// Standard error of a Monte Carlo value; `None` for exact values.
    pub mc_std_err: Option<f64>,
}

fn check_inputs(data: &Dataset, spec: &DropoutSpec, d: usize) -> Result<()> {
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    if data.d() != d {
        return Err(DroError::DimensionMismatch { expected: data.d(), got: d });
    }
    if spec.dim() != d {
        return Err(DroError::DimensionMismatch { expected: d, got: spec.dim() });
    }
    Ok(())
}

/// Exact dropout objective with unit dispersion over an enumerated mask set.
pub struct ExactDropoutObjective<'a> {
    family: GlmFamily,
    data: &'a Dataset,
    masks: MaskEnumeration,
}

impl<'a> ExactDropoutObjective<'a> {
    pub fn new(family: &GlmFamily, data: &'a Dataset, spec: &DropoutSpec) -> Result<Self> {
        check_inputs(data, spec, spec.dim())?;
        Ok(ExactDropoutObjective { family: *family, data, masks: enumerate_masks(spec)? })
    }

    /// Calls `f(row, weight, x ⊙ ξ, y)` for every (row, mask) term; weights sum to one.
    fn for_each_term(&self, mut f: impl FnMut(usize, f64, &[f64], f64)) {
        let n = self.data.n() as f64;
        let mut z = vec![0.0; self.data.d()];
        for (i, &y) in self.data.y().iter().enumerate() {
            let x = self.data.row(i);
            for (mask, &p) in self.masks.masks.iter().zip(&self.masks.probs) {
                if p == 0.0 {
                    continue;
                }
                for ((zj, xj), mj) in z.iter_mut().zip(x).zip(&mask.values) {
                    *zj = xj * mj;
                }
                f(i, p / n, &z, y);
            }
        }
    }
}

impl SmoothObjective for ExactDropoutObjective<'_> {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.for_each_term(|_, w, z, y| acc += w * self.family.canonical_loss(dot(beta, z), y));
        acc
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.for_each_term(|_, w, z, y| {
            let r = w * (self.family.psi_dot(dot(beta, z)) - y);
            for (gj, zj) in g.iter_mut().zip(z) {
                *gj += r * zj;
            }
        });
        g
    }

    fn hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::zeros(d, d);
        self.for_each_term(|_, w, z, _| {
            let c = w * self.family.psi_ddot(dot(beta, z));
            let zv = DVector::from_column_slice(z);
            h.ger(c, &zv, &zv, 1.0);
        });
        h
    }
}

/// `(1/n) Σᵢ Σ_ξ P(ξ) ℓ(xᵢ ⊙ ξ, yᵢ, θ)` by full mask enumeration.
pub fn dropout_objective_exact(
    family: &GlmFamily,
    data: &Dataset,
    params: &ModelParams,
    spec: &DropoutSpec,
) -> Result<DropoutObjectiveValue> {
    check_inputs(data, spec, params.dim())?;
    params.validate()?;
    let obj = ExactDropoutObjective::new(family, data, spec)?;
    let mut acc = 0.0;
    obj.for_each_term(|_, w, z, y| acc += w * loss_unchecked(family, z, y, &params.beta, params.phi));
    Ok(DropoutObjectiveValue { value: acc, method: ObjectiveMethod::Exact, mc_std_err: None })
}

/// Monte Carlo dropout objective with `masks_per_row` draws per row.
///
/// Row `i` draws its masks from stream `i` of `seed`, so the result does not
/// depend on how rows are scheduled across threads. The standard error is
/// that of the estimator for fixed data: within-row sample variances pooled
/// across rows.
pub fn dropout_objective_mc(
    family: &GlmFamily,
    data: &Dataset,
    params: &ModelParams,
    spec: &DropoutSpec,
    masks_per_row: usize,
    seed: u64,
) -> Result<DropoutObjectiveValue> {
    check_inputs(data, spec, params.dim())?;
    params.validate()?;
    if masks_per_row == 0 {
        return Err(DroError::InvalidParameter("masks_per_row must be at least 1".into()));
    }
    let k = masks_per_row as f64;
    let per_row: Vec<(f64, f64)> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let x = data.row(i);
            let y = data.y()[i];
            // Welford
            let mut mean = 0.0;
            let mut m2 = 0.0;
            for t in 0..masks_per_row {
                let z = sample_mask(spec, &mut r).apply(x);
                let l = loss_unchecked(family, &z, y, &params.beta, params.phi);
                let delta = l - mean;
                mean += delta / (t + 1) as f64;
                m2 += delta * (l - mean);
            }
            let var = if masks_per_row > 1 { m2 / (k - 1.0) } else { 0.0 };
            (mean, var)
        })
        .collect();
    let n = data.n() as f64;
    let value = per_row.iter().map(|(m, _)| m).sum::<f64>() / n;
    let var_sum: f64 = per_row.iter().map(|(_, v)| v / k).sum();
    let se = var_sum.sqrt() / n;
    Ok(DropoutObjectiveValue { value, method: ObjectiveMethod::MonteCarlo(masks_per_row), mc_std_err: Some(se) })
}

/// `S̃_n(β) = S_n(β) − [(1/n) Σᵢ E_δ[(xᵢ⊙ξ) Ψ̇(βᵀ(xᵢ⊙ξ))] − xᵢ Ψ̇(xᵢᵀβ)]`
/// with `S_n(β) = (1/n) Σᵢ xᵢ (yᵢ − Ψ̇(xᵢᵀβ))`.
pub fn dropout_score(family: &GlmFamily, data: &Dataset, beta: &[f64], spec: &DropoutSpec) -> Result<Vec<f64>> {
    check_inputs(data, spec, beta.len())?;
    let obj = ExactDropoutObjective::new(family, data, spec)?;
    let d = beta.len();
    let n = data.n() as f64;
    let mut plain = vec![0.0; d];
    let mut noisy_mean = vec![0.0; d];
    for (x, &y) in data.rows().zip(data.y()) {
        let m = family.psi_dot(dot(beta, x));
        for j in 0..d {
            plain[j] += x[j] * (y - m) / n;
            // xᵢΨ̇(xᵢᵀβ) part of the correction
            noisy_mean[j] -= x[j] * m / n;
        }
    }
    obj.for_each_term(|_, w, z, _| {
        let m = family.psi_dot(dot(beta, z));
        for (acc, zj) in noisy_mean.iter_mut().zip(z) {
            *acc += w * zj * m;
        }
    });
    Ok(plain.iter().zip(&noisy_mean).map(|(s, c)| s - c).collect())
}

/// `H̃_n(β) = −(1/n) Σᵢ E_δ[Ψ̈((xᵢ⊙ξ)ᵀβ) (xᵢ⊙ξ)(xᵢ⊙ξ)ᵀ]`.
pub fn dropout_hessian(family: &GlmFamily, data: &Dataset, beta: &[f64], spec: &DropoutSpec) -> Result<DMatrix<f64>> {
    check_inputs(data, spec, beta.len())?;
    let obj = ExactDropoutObjective::new(family, data, spec)?;
    Ok(-obj.hessian(beta))
}

/// Empirical `Σ(β) = E[Ψ̈(Xᵀβ) X Xᵀ]` over the rows of `sample`.
pub fn sigma_matrix(family: &GlmFamily, sample: &Dataset, beta: &[f64]) -> Result<DMatrix<f64>> {
    if sample.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    if sample.d() != beta.len() {
        return Err(DroError::DimensionMismatch { expected: sample.d(), got: beta.len() });
    }
    let d = beta.len();
    let mut s = DMatrix::zeros(d, d);
    let w = 1.0 / sample.n() as f64;
    for x in sample.rows() {
        let c = w * family.psi_ddot(dot(beta, x));
        let xv = DVector::from_column_slice(x);
        s.ger(c, &xv, &xv, 1.0);
    }
    Ok(s)
}

/// Empirical bias vector
/// `μ = Σ_{ξ∈A} E[Ψ̇((X⊙ξ)ᵀβ*)(X⊙ξ)] − (d−1) E[YX] + Σ(β*) β*`,
/// with `A` the one-zero binary masks.
pub fn asymptotic_bias_mu(family: &GlmFamily, sample: &Dataset, beta_star: &[f64]) -> Result<Vec<f64>> {
    let sigma = sigma_matrix(family, sample, beta_star)?;
    let d = beta_star.len();
    let w = 1.0 / sample.n() as f64;
    let masks = one_zero_masks(d);
    let mut mu = vec![0.0; d];
    let mut z = vec![0.0; d];
    for (x, &y) in sample.rows().zip(sample.y()) {
        for a in &masks {
            for ((zj, xj), aj) in z.iter_mut().zip(x).zip(a) {
                *zj = xj * aj;
            }
            let m = family.psi_dot(dot(beta_star, &z));
            for (acc, zj) in mu.iter_mut().zip(&z) {
                *acc += w * m * zj;
            }
        }
        for (acc, xj) in mu.iter_mut().zip(x) {
            *acc -= w * (d as f64 - 1.0) * y * xj;
        }
    }
    let sb = &sigma * DVector::from_column_slice(beta_star);
    for (acc, v) in mu.iter_mut().zip(sb.iter()) {
        *acc += v;
    }
    Ok(mu)
}

/// `E[YX] − E[Ψ̇(Xᵀβ*) X]`; zero at the population maximizer. The two
/// published forms of the bias vector agree exactly when it vanishes.
pub fn first_order_residual(family: &GlmFamily, sample: &Dataset, beta_star: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    if sample.d() != beta_star.len() {
        return Err(DroError::DimensionMismatch { expected: sample.d(), got: beta_star.len() });
    }
    let w = 1.0 / sample.n() as f64;
    let mut r = vec![0.0; beta_star.len()];
    for (x, &y) in sample.rows().zip(sample.y()) {
        let m = family.psi_dot(dot(beta_star, x));
        for (acc, xj) in r.iter_mut().zip(x) {
            *acc += w * (y - m) * xj;
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{avg_neg_loglik, make_family, FamilyKind};

    fn small_linear() -> (Dataset, ModelParams) {
        let rows = vec![vec![1.0, 0.5, -0.3], vec![-0.7, 1.2, 0.8], vec![0.2, -1.1, 1.5], vec![1.4, 0.1, -0.6]];
        let data = Dataset::from_rows(&rows, vec![0.9, -0.4, 1.7, 0.3]).unwrap();
        (data, ModelParams::new(vec![0.3, -0.8, 0.5], 1.7).unwrap())
    }

    #[test]
    fn zero_delta_reduces_to_likelihood() {
        let f = make_family(FamilyKind::Linear);
        let (data, p) = small_linear();
        let spec = DropoutSpec::homogeneous(0.0, 3).unwrap();
        let exact = dropout_objective_exact(&f, &data, &p, &spec).unwrap();
        assert!((exact.value - avg_neg_loglik(&f, &data, &p).unwrap()).abs() < 1e-14);
        assert!(exact.mc_std_err.is_none());
        let mc = dropout_objective_mc(&f, &data, &p, &spec, 7, 11).unwrap();
        assert!((mc.value - exact.value).abs() < 1e-13);
        assert_eq!(mc.mc_std_err, Some(0.0));
    }

    #[test]
    fn logistic_four_term_oracle() {
        let f = make_family(FamilyKind::Logistic);
        let rows = vec![vec![1.0, -2.0], vec![0.5, 0.7], vec![-1.5, 0.3]];
        let ys = vec![1.0, 0.0, 1.0];
        let data = Dataset::from_rows(&rows, ys.clone()).unwrap();
        let p = ModelParams::new(vec![0.6, 0.9], 1.0).unwrap();
        let spec = DropoutSpec::homogeneous(0.5, 2).unwrap();
        let exact = dropout_objective_exact(&f, &data, &p, &spec).unwrap().value;
        // masks (0,0), (2,0), (0,2), (2,2), each with probability 1/4
        let masks = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        let mut oracle = 0.0;
        for (x, y) in rows.iter().zip(&ys) {
            for m in &masks {
                let eta = 0.6 * x[0] * m[0] + 0.9 * x[1] * m[1];
                oracle += 0.25 * ((1.0 + eta.exp()).ln() - y * eta);
            }
        }
        oracle /= 3.0;
        assert!((exact - oracle).abs() < 1e-14);
    }

    #[test]
    fn mc_is_deterministic_and_close() {
        let f = make_family(FamilyKind::Linear);
        let (data, p) = small_linear();
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        let a = dropout_objective_mc(&f, &data, &p, &spec, 100_000, 5).unwrap();
        let b = dropout_objective_mc(&f, &data, &p, &spec, 100_000, 5).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let exact = dropout_objective_exact(&f, &data, &p, &spec).unwrap().value;
        assert!((a.value - exact).abs() <= 3.0 * a.mc_std_err.unwrap());
    }

    #[test]
    fn mc_rejects_zero_draws() {
        let f = make_family(FamilyKind::Linear);
        let (data, p) = small_linear();
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        assert!(dropout_objective_mc(&f, &data, &p, &spec, 0, 1).is_err());
    }

    #[test]
    fn score_at_zero_delta_is_plain_score() {
        let f = make_family(FamilyKind::Logistic);
        let rows = vec![vec![1.0, -2.0], vec![0.5, 0.7], vec![-1.5, 0.3]];
        let data = Dataset::from_rows(&rows, vec![1.0, 0.0, 1.0]).unwrap();
        let beta = [0.2, -0.4];
        let spec = DropoutSpec::homogeneous(0.0, 2).unwrap();
        let s = dropout_score(&f, &data, &beta, &spec).unwrap();
        let mut plain = [0.0; 2];
        for (x, y) in rows.iter().zip([1.0, 0.0, 1.0]) {
            let m = f.psi_dot(beta[0] * x[0] + beta[1] * x[1]);
            plain[0] += x[0] * (y - m) / 3.0;
            plain[1] += x[1] * (y - m) / 3.0;
        }
        assert!((s[0] - plain[0]).abs() < 1e-15 && (s[1] - plain[1]).abs() < 1e-15);
    }

    #[test]
    fn linear_hessian_is_beta_free() {
        let f = make_family(FamilyKind::Linear);
        let (data, _) = small_linear();
        let spec = DropoutSpec::homogeneous(0.4, 3).unwrap();
        let h1 = dropout_hessian(&f, &data, &[0.0, 0.0, 0.0], &spec).unwrap();
        let h2 = dropout_hessian(&f, &data, &[3.0, -1.0, 2.0], &spec).unwrap();
        assert!((h1 - h2).abs().max() < 1e-14);
    }

    #[test]
    fn sigma_single_row_and_duplication() {
        let f = make_family(FamilyKind::Logistic);
        let one = Dataset::from_rows(&[vec![1.0, 2.0]], vec![1.0]).unwrap();
        let beta = [0.3, -0.1];
        let s = sigma_matrix(&f, &one, &beta).unwrap();
        let w = f.psi_ddot(0.1);
        let expect = DMatrix::from_row_slice(2, 2, &[w, 2.0 * w, 2.0 * w, 4.0 * w]);
        assert!((s - expect).abs().max() < 1e-15);

        let rows = vec![vec![1.0, 2.0], vec![-0.5, 0.4]];
        let a = Dataset::from_rows(&rows, vec![1.0, 0.0]).unwrap();
        let b = Dataset::from_rows(&[rows.clone(), rows].concat(), vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let sa = sigma_matrix(&f, &a, &beta).unwrap();
        let sb = sigma_matrix(&f, &b, &beta).unwrap();
        assert!((sa - sb).abs().max() < 1e-15);
    }

    #[test]
    fn bias_in_one_dimension_is_sigma_beta() {
        let f = make_family(FamilyKind::Logistic);
        let data = Dataset::from_rows(&[vec![1.5], vec![-0.3], vec![0.8]], vec![1.0, 0.0, 0.0]).unwrap();
        let beta = [0.7];
        let mu = asymptotic_bias_mu(&f, &data, &beta).unwrap();
        let s = sigma_matrix(&f, &data, &beta).unwrap();
        assert!((mu[0] - s[(0, 0)] * 0.7).abs() < 1e-15);
    }

    #[test]
    fn linear_bias_is_diagonal_sigma_times_beta_under_first_order_condition() {
        // For Ψ̇(η) = η, μ = diag(Σ)β* + (d−1)(Σβ* − E[YX]).
        let f = make_family(FamilyKind::Linear);
        let rows = vec![vec![1.0, 0.5, -0.3], vec![-0.7, 1.2, 0.8], vec![0.2, -1.1, 1.5], vec![1.4, 0.1, -0.6]];
        let beta = [0.4, -0.2, 0.9];
        let ys: Vec<f64> = rows.iter().map(|r| dot(r, &beta)).collect();
        let data = Dataset::from_rows(&rows, ys).unwrap();
        let mu = asymptotic_bias_mu(&f, &data, &beta).unwrap();
        let s = sigma_matrix(&f, &data, &beta).unwrap();
        for j in 0..3 {
            assert!((mu[j] - s[(j, j)] * beta[j]).abs() < 1e-13);
        }
        assert!(first_order_residual(&f, &data, &beta).unwrap().iter().all(|r| r.abs() < 1e-14));
    }
}
