//! Choosing the dropout probability from the in-sample loss.
//!
//! The in-sample dropout loss overestimates the δ = 0 in-sample loss by
//! `μ_n ≥ 0`. With `δ = c/√n` the shift is `c·μ/√n` to first order, so
//! taking `c = z₁₋α σ / μ` makes the in-sample loss exceed the population
//! loss with asymptotic probability `1 − α`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dropout::{one_zero_masks, DropoutSpec, MAX_ENUMERATION_DIM};
use crate::error::{DroError, Result};
use crate::glm::{avg_neg_loglik, dot, fit_mle, loss_unchecked, Dataset, FamilyKind, GlmFamily, ModelParams};
use crate::optim::GdConfig;
use crate::objective::{dropout_objective_exact, dropout_objective_mc};

/// Upper bound on the returned δ, keeping `1/(1−δ)` moderate.
pub const DELTA_CAP: f64 = 0.9;

/// Masks per row when the in-sample loss falls back to Monte Carlo.
pub const MC_FALLBACK_MASKS: usize = 10_000;

/// `σ` for Gaussian residuals at the true dispersion.
pub const SIGMA_LINEAR_ORACLE: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `L_n(β, φ, δ)`.
    pub in_sample: f64,
    /// `L_n(β, φ, 0)`.
    pub baseline: f64,
    pub mu_n: f64,
    pub population: Option<f64>,
    /// Set when `in_sample` was estimated by Monte Carlo.
    pub mc_std_err: Option<f64>,
}

/// In-sample dropout loss against its δ = 0 baseline.
///
/// The linear family uses the closed form
/// `E_δ[(y − βᵀ(x⊙ξ))²] = (y − βᵀx)² + Σⱼ δⱼ/(1−δⱼ) βⱼ² xⱼ²`; other
/// families enumerate masks, or draw [`MC_FALLBACK_MASKS`] masks per row when
/// `d` is too large to enumerate.
pub fn in_sample_loss(family: &GlmFamily, data: &Dataset, params: &ModelParams, spec: &DropoutSpec) -> Result<LossReport> {
    let baseline = avg_neg_loglik(family, data, params)?;
    if spec.dim() != data.d() {
        return Err(DroError::DimensionMismatch { expected: data.d(), got: spec.dim() });
    }
    let (in_sample, mc_std_err) = if family.kind() == FamilyKind::Linear {
        let mut pen = 0.0;
        for x in data.rows() {
            for ((xj, bj), dj) in x.iter().zip(&params.beta).zip(spec.deltas()) {
                pen += dj / (1.0 - dj) * bj * bj * xj * xj;
            }
        }
        (baseline + pen / (2.0 * data.n() as f64 * params.phi), None)
    } else if data.d() <= MAX_ENUMERATION_DIM {
        (dropout_objective_exact(family, data, params, spec)?.value, None)
    } else {
        let v = dropout_objective_mc(family, data, params, spec, MC_FALLBACK_MASKS, 0)?;
        (v.value, v.mc_std_err)
    };
    Ok(LossReport { in_sample, baseline, mu_n: in_sample - baseline, population: None, mc_std_err })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationLoss {
    pub value: f64,
    pub std_err: f64,
}

/// Monte Carlo `E_{P*}[−ln f(Y | X, β*, φ*)]` over `sample_size` draws of
/// `generator`.
pub fn population_loss_mc<R, G>(
    family: &GlmFamily,
    mut generator: G,
    params_true: &ModelParams,
    sample_size: usize,
    rng: &mut R,
) -> Result<PopulationLoss>
where
    R: Rng + ?Sized,
    G: FnMut(&mut R) -> (Vec<f64>, f64),
{
    if sample_size < 2 {
        return Err(DroError::VarianceUndefined(sample_size));
    }
    params_true.validate()?;
    let phi = params_true.phi.max(crate::glm::PHI_FLOOR);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for t in 0..sample_size {
        let (x, y) = generator(rng);
        if x.len() != params_true.dim() {
            return Err(DroError::DimensionMismatch { expected: params_true.dim(), got: x.len() });
        }
        let eta = dot(&params_true.beta, &x);
        let l = -family.log_base(y, phi) + family.canonical_loss(eta, y) / family.dispersion(phi);
        let delta = l - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (l - mean);
    }
    let var = m2 / (sample_size - 1) as f64;
    Ok(PopulationLoss { value: mean, std_err: (var / sample_size as f64).sqrt() })
}

/// `½ ln(2πφ*) + ½`, the linear population loss at the true parameters.
pub fn population_loss_linear(phi_star: f64) -> f64 {
    0.5 * (2.0 * PI * phi_star).ln() + 0.5
}

/// `μ = (1/2φ*) Σⱼ E[Xⱼ²] β*ⱼ²`.
pub fn mu_linear(second_moments_diag: &[f64], beta_star: &[f64], phi_star: f64) -> Result<f64> {
    if !(phi_star > 0.0) {
        return Err(DroError::InvalidParameter(format!("phi* must be positive, got {phi_star}")));
    }
    if second_moments_diag.len() != beta_star.len() {
        return Err(DroError::DimensionMismatch { expected: beta_star.len(), got: second_moments_diag.len() });
    }
    let s: f64 = second_moments_diag.iter().zip(beta_star).map(|(m, b)| m * b * b).sum();
    Ok(s / (2.0 * phi_star))
}

/// `Σ_{ξ∈A} E[Ψ((X⊙ξ)ᵀβ*)] − d·E[Ψ(Xᵀβ*)] + E[YXᵀ]β*` over the sample.
fn loss_shift_kernel(family: &GlmFamily, sample: &Dataset, beta_star: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    if sample.d() != beta_star.len() {
        return Err(DroError::DimensionMismatch { expected: sample.d(), got: beta_star.len() });
    }
    let d = beta_star.len();
    let masks = one_zero_masks(d);
    let mut z = vec![0.0; d];
    let mut acc = 0.0;
    for (x, &y) in sample.rows().zip(sample.y()) {
        let eta = dot(beta_star, x);
        for a in &masks {
            for ((zj, xj), aj) in z.iter_mut().zip(x).zip(a) {
                *zj = xj * aj;
            }
            acc += family.psi(dot(beta_star, &z));
        }
        acc += -(d as f64) * family.psi(eta) + y * eta;
    }
    Ok(acc / sample.n() as f64)
}

/// Plug-in `μ` for any family: the loss-shift kernel divided by `a(φ*)`.
pub fn mu_general(family: &GlmFamily, sample: &Dataset, beta_star: &[f64], phi_star: f64) -> Result<f64> {
    if !(phi_star > 0.0) {
        return Err(DroError::InvalidParameter(format!("phi* must be positive, got {phi_star}")));
    }
    Ok(loss_shift_kernel(family, sample, beta_star)? / family.dispersion(phi_star))
}

/// Limit of `√n` times the loss shift under `δ = c/√n`, before division by
/// the dispersion.
pub fn asymptotic_loss_shift_delta(family: &GlmFamily, sample: &Dataset, beta_star: &[f64], c: f64) -> Result<f64> {
    Ok(c * loss_shift_kernel(family, sample, beta_star)?)
}

/// Sample standard deviation of `½ln(2πφ*) + r²/(2φ*)` over the residuals.
pub fn sigma_linear(phi_star: f64, residuals: &[f64]) -> Result<f64> {
    if !(phi_star > 0.0) {
        return Err(DroError::InvalidParameter(format!("phi* must be positive, got {phi_star}")));
    }
    sample_std(residuals.iter().map(|r| 0.5 * (2.0 * PI * phi_star).ln() + r * r / (2.0 * phi_star)))
}

/// Sample standard deviation (denominator `n − 1`) of per-observation losses.
pub fn sample_std(values: impl Iterator<Item = f64>) -> Result<f64> {
    let (mut k, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for v in values {
        k += 1;
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
    }
    if k < 2 {
        return Err(DroError::VarianceUndefined(k));
    }
    Ok((m2 / (k - 1) as f64).max(0.0).sqrt())
}

/// Standard normal quantile (Wichura's AS 241, about 1e−16 relative error).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DroError::InvalidParameter(format!("quantile level {p} outside (0, 1)")));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608;
        let den = ((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0;
        return Ok(q * num / den);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734;
        let den = ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
            + 0.14810397642748007459)
            * r
            + 0.68976733498510000455)
            * r
            + 1.6763848301838038494)
            * r
            + 2.05319162663775882187)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772;
        let den = ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5)
            * r
            + 7.868691311456132591e-4)
            * r
            + 0.0148753612908506148525)
            * r
            + 0.13692988092273580531)
            * r
            + 0.59983220655588793769)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// How `μ` and `σ` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneMode {
    /// True parameters of a known data-generating process.
    Oracle,
    /// δ = 0 fit plugged in for the true parameters.
    Plugin,
}

impl std::str::FromStr for TuneMode {
    type Err = DroError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(TuneMode::Oracle),
            "plugin" => Ok(TuneMode::Plugin),
            other => Err(DroError::InvalidParameter(format!("unknown tuning mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaChoice {
    pub alpha: f64,
    pub mu_hat: f64,
    pub sigma_hat: f64,
    pub c: f64,
    pub delta: f64,
    pub n: usize,
    pub z_quantile: f64,
}

impl DeltaChoice {
    /// `c` from the stored inputs; equal to `self.c` bit for bit.
    pub fn recompute_c(&self) -> Result<f64> {
        Ok(c_value(normal_quantile(1.0 - self.alpha)?, self.sigma_hat, self.mu_hat))
    }
}

// Levels above one half give z < 0; c is then clamped to zero so that the
// rule returns δ = 0 rather than a negative probability.
fn c_value(z: f64, sigma: f64, mu: f64) -> f64 {
    (z * sigma / mu).max(0.0)
}

/// `c = z₁₋α σ̂/μ̂` and `δ = min(c/√n, DELTA_CAP)`.
pub fn choose_delta(alpha: f64, n: usize, mu_hat: f64, sigma_hat: f64) -> Result<DeltaChoice> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DroError::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    if n == 0 {
        return Err(DroError::EmptyDataset);
    }
    if !(mu_hat > 0.0) {
        return Err(DroError::NonPositiveMu(mu_hat));
    }
    if !(sigma_hat >= 0.0) || !sigma_hat.is_finite() {
        return Err(DroError::InvalidParameter(format!("sigma must be finite and nonnegative, got {sigma_hat}")));
    }
    let z = normal_quantile(1.0 - alpha)?;
    let c = c_value(z, sigma_hat, mu_hat);
    let delta = (c / (n as f64).sqrt()).min(DELTA_CAP);
    Ok(DeltaChoice { alpha, mu_hat, sigma_hat, c, delta, n, z_quantile: z })
}

/// Oracle tuning for the linear model with standard normal covariates:
/// `μ = ‖β*‖²/(2φ*)` and `σ = √½`.
pub fn tune_oracle_linear(alpha: f64, n: usize, beta_star: &[f64], phi_star: f64) -> Result<DeltaChoice> {
    let mu = mu_linear(&vec![1.0; beta_star.len()], beta_star, phi_star)?;
    choose_delta(alpha, n, mu, SIGMA_LINEAR_ORACLE)
}

/// Plug-in tuning: the δ = 0 fit stands in for the true parameters, `μ` is
/// [`mu_general`] and `σ` the sample standard deviation of the
/// per-observation losses at that fit.
pub fn tune_plugin(family: &GlmFamily, data: &Dataset, alpha: f64) -> Result<DeltaChoice> {
    let fit = fit_mle(family, data, &GdConfig::default())?;
    let mu = mu_general(family, data, &fit.beta, fit.phi)?;
    let sigma = sample_std(data.rows().zip(data.y()).map(|(x, &y)| loss_unchecked(family, x, y, &fit.beta, fit.phi)))?;
    choose_delta(alpha, data.n(), mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::make_family;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn reference_instance_delta() {
        let mu = mu_linear(&vec![1.0; 100], &vec![1.0; 100], 100.0).unwrap();
        assert_eq!(mu, 0.5);
        let ch = choose_delta(0.1, 50, mu, SIGMA_LINEAR_ORACLE).unwrap();
        let c = 1.2815515655446004 * std::f64::consts::SQRT_2;
        assert!((ch.c - c).abs() < 1e-12, "{}", ch.c);
        assert!((ch.delta - c / 50f64.sqrt()).abs() < 1e-12, "{}", ch.delta);
        assert!((ch.delta - 0.2563).abs() < 5e-4);
        assert_eq!(ch.recompute_c().unwrap(), ch.c);
    }

    #[test]
    fn oracle_and_plugin_agree_in_large_samples() {
        let beta = vec![1.0; 5];
        let oracle = tune_oracle_linear(0.1, 20_000, &beta, 4.0).unwrap();
        let spec = crate::harness::SimSpec::ones(20_000, 5, 2.0, 1);
        let data = crate::harness::gen_linear_data(&spec).unwrap();
        let plug = tune_plugin(&make_family(FamilyKind::Linear), &data, 0.1).unwrap();
        assert!((plug.mu_hat / oracle.mu_hat - 1.0).abs() < 0.05, "{} vs {}", plug.mu_hat, oracle.mu_hat);
        assert!((plug.sigma_hat / oracle.sigma_hat - 1.0).abs() < 0.05);
    }

    #[test]
    fn median_and_errors() {
        let ch = choose_delta(0.5, 10, 1.0, 1.0).unwrap();
        assert_eq!(ch.z_quantile, 0.0);
        assert_eq!(ch.delta, 0.0);
        assert!(matches!(choose_delta(0.1, 10, 0.0, 1.0), Err(DroError::NonPositiveMu(_))));
        assert_eq!(choose_delta(0.01, 1, 0.01, 5.0).unwrap().delta, DELTA_CAP);
    }

    #[test]
    fn quantile_symmetry_and_known_values() {
        assert!((normal_quantile(0.975).unwrap() - 1.959963984540054).abs() < 1e-13);
        assert!((normal_quantile(0.9).unwrap() - 1.2815515655446004).abs() < 1e-13);
        assert!((normal_quantile(1e-10).unwrap() + 6.361340902404056).abs() < 1e-10);
        for p in [0.01, 0.2, 0.44, 0.49999] {
            assert!((normal_quantile(p).unwrap() + normal_quantile(1.0 - p).unwrap()).abs() < 1e-12);
        }
        assert!(normal_quantile(0.0).is_err());
    }

    #[test]
    fn mu_homogeneity() {
        let m = [1.0, 2.0, 0.5];
        let b = [0.3, -1.0, 2.0];
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let a = mu_linear(&m, &b, 3.0).unwrap();
        assert!((mu_linear(&m, &b2, 3.0).unwrap() - 4.0 * a).abs() < 1e-14);
        assert_eq!(mu_linear(&m, &[0.0; 3], 3.0).unwrap(), 0.0);
    }

    #[test]
    fn general_mu_reduces_to_linear_on_sample() {
        // For the linear family the kernel is (1/2) Σⱼ mean(xⱼ²) βⱼ² plus
        // mean((y − xᵀβ) xᵀβ), which vanishes at the least-squares fit.
        let f = make_family(FamilyKind::Linear);
        let mut r = rng::stream(5, 0);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
        let y: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut r)).collect();
        let data = Dataset::from_rows(&rows, y).unwrap();
        let beta = crate::glm::ols(&data).unwrap();
        let m2: Vec<f64> = (0..4).map(|j| data.rows().map(|x| x[j] * x[j]).sum::<f64>() / 200.0).collect();
        let expect = mu_linear(&m2, &beta, 2.5).unwrap();
        assert!((mu_general(&f, &data, &beta, 2.5).unwrap() - expect).abs() < 1e-12);
        let shift = asymptotic_loss_shift_delta(&f, &data, &beta, 1.7).unwrap();
        assert!((shift - 1.7 * 2.5 * expect).abs() < 1e-12);
    }

    #[test]
    fn general_mu_zero_beta_logistic() {
        let f = make_family(FamilyKind::Logistic);
        let data = Dataset::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]], vec![1.0, 0.0]).unwrap();
        assert!(mu_general(&f, &data, &[0.0, 0.0], 1.0).unwrap().abs() < 1e-15);
        assert_eq!(asymptotic_loss_shift_delta(&f, &data, &[0.4, 0.2], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn single_coordinate_kernel() {
        let f = make_family(FamilyKind::Poisson);
        let data = Dataset::from_rows(&[vec![0.7], vec![-1.2]], vec![2.0, 0.0]).unwrap();
        let b = 0.4;
        let expect = ((f.psi(0.0) - f.psi(0.7 * b) + 2.0 * 0.7 * b) + (f.psi(0.0) - f.psi(-1.2 * b))) / 2.0;
        assert!((mu_general(&f, &data, &[b], 1.0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn sigma_cases() {
        assert_eq!(sigma_linear(4.0, &[1.5, -1.5, 1.5]).unwrap(), 0.0);
        assert!(matches!(sigma_linear(4.0, &[1.0]), Err(DroError::VarianceUndefined(1))));
        let mut r = rng::stream(2, 0);
        let res: Vec<f64> = (0..200_000).map(|_| { let e: f64 = StandardNormal.sample(&mut r); 10.0 * e }).collect();
        let s = sigma_linear(100.0, &res).unwrap();
        assert!((s - SIGMA_LINEAR_ORACLE).abs() < 0.01, "{s}");
    }

    #[test]
    fn linear_in_sample_shift() {
        let f = make_family(FamilyKind::Linear);
        let rows = vec![vec![1.0, 0.5, -0.3], vec![-0.7, 1.2, 0.8], vec![0.2, -1.1, 1.5], vec![1.4, 0.1, -0.6]];
        let data = Dataset::from_rows(&rows, vec![0.9, -0.4, 1.7, 0.3]).unwrap();
        let p = ModelParams::new(vec![0.3, -0.8, 0.5], 1.7).unwrap();
        let spec = DropoutSpec::homogeneous(0.3, 3).unwrap();
        let rep = in_sample_loss(&f, &data, &p, &spec).unwrap();
        let exact = dropout_objective_exact(&f, &data, &p, &spec).unwrap().value;
        assert!((rep.in_sample - exact).abs() < 1e-13);
        let zero = in_sample_loss(&f, &data, &p, &DropoutSpec::homogeneous(0.0, 3).unwrap()).unwrap();
        assert_eq!(zero.mu_n, 0.0);
    }

    #[test]
    fn population_loss_gaussian() {
        let f = make_family(FamilyKind::Linear);
        let p = ModelParams::new(vec![1.0, 1.0], 100.0).unwrap();
        let gen = |r: &mut rng::StreamRng| {
            let x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(r)).collect();
            let e: f64 = StandardNormal.sample(r);
            let y = x[0] + x[1] + 10.0 * e;
            (x, y)
        };
        let est = population_loss_mc(&f, gen, &p, 100_000, &mut rng::stream(1, 0)).unwrap();
        let exact = population_loss_linear(100.0);
        assert!((exact - 3.721524).abs() < 1e-6);
        assert!((est.value - exact).abs() < 4.0 * est.std_err, "{} vs {exact}", est.value);
        let half = population_loss_mc(&f, gen, &p, 50_000, &mut rng::stream(1, 1)).unwrap();
        let ratio = (half.std_err / est.std_err).powi(2);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }
}
