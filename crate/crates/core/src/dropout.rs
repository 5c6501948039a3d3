//! Dropout noise: specifications, sampled and enumerated masks, and a
//! brute-force adversary that certifies the scaled-Bernoulli law as the
//! worst case over mean-one noise supported on `[0, (1−δ)⁻¹]`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{DroError, Result};
use crate::glm::{dot, loss_unchecked, Dataset, GlmFamily, ModelParams};

/// Largest dimension [`enumerate_masks`] accepts.
pub const MAX_ENUMERATION_DIM: usize = 24;

/// Per-coordinate dropout probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    deltas: Vec<f64>,
}

impl DropoutSpec {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.is_empty() {
            return Err(DroError::InvalidParameter("dropout spec needs at least one coordinate".into()));
        }
        if let Some(bad) = deltas.iter().find(|d| !(**d >= 0.0 && **d < 1.0)) {
            return Err(DroError::InvalidParameter(format!("dropout probability {bad} outside [0, 1)")));
        }
        Ok(DropoutSpec { deltas })
    }

    pub fn homogeneous(delta: f64, d: usize) -> Result<Self> {
        Self::new(vec![delta; d])
    }

    pub fn dim(&self) -> usize {
        self.deltas.len()
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn is_homogeneous(&self) -> bool {
        self.deltas.windows(2).all(|w| w[0] == w[1])
    }

    pub fn is_zero(&self) -> bool {
        self.deltas.iter().all(|d| *d == 0.0)
    }

    /// Scale factor `(1−δⱼ)⁻¹` of a kept coordinate.
    pub fn scale(&self, j: usize) -> f64 {
        1.0 / (1.0 - self.deltas[j])
    }

    pub fn scales(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.scale(j)).collect()
    }

    /// Coordinate `j` is dropped when a uniform `u32` falls below this.
    pub(crate) fn drop_thresholds(&self) -> Vec<u64> {
        self.deltas.iter().map(|d| (d * 4_294_967_296.0).round() as u64).collect()
    }
}

/// Realized noise vector with entries in `{0, (1−δⱼ)⁻¹}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub values: Vec<f64>,
}

impl Mask {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.values).map(|(a, b)| a * b).collect()
    }
}

/// Draws one mask. Coordinates are visited in order and each consumes one
/// `u32` from `rng`.
pub fn sample_mask<R: RngCore + ?Sized>(spec: &DropoutSpec, rng: &mut R) -> Mask {
    let thresholds = spec.drop_thresholds();
    let values = thresholds
        .iter()
        .enumerate()
        .map(|(j, &t)| if (rng.next_u32() as u64) < t { 0.0 } else { spec.scale(j) })
        .collect();
    Mask { values }
}

/// All `2^d` masks with their product probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEnumeration {
    pub masks: Vec<Mask>,
    pub probs: Vec<f64>,
    /// `keep[m]` has bit `j` set when mask `m` keeps coordinate `j`.
    pub keep: Vec<u32>,
}

pub fn enumerate_masks(spec: &DropoutSpec) -> Result<MaskEnumeration> {
    let d = spec.dim();
    if d > MAX_ENUMERATION_DIM {
        return Err(DroError::TooManyMasks { d, limit: MAX_ENUMERATION_DIM });
    }
    let scales = spec.scales();
    let count = 1usize << d;
    let mut masks = Vec::with_capacity(count);
    let mut probs = Vec::with_capacity(count);
    let mut keep = Vec::with_capacity(count);
    for m in 0..count as u32 {
        let mut p = 1.0;
        let mut values = Vec::with_capacity(d);
        for (j, (&delta, &s)) in spec.deltas.iter().zip(&scales).enumerate() {
            if m >> j & 1 == 1 {
                p *= 1.0 - delta;
                values.push(s);
            } else {
                p *= delta;
                values.push(0.0);
            }
        }
        masks.push(Mask { values });
        probs.push(p);
        keep.push(m);
    }
    Ok(MaskEnumeration { masks, probs, keep })
}

/// The `d` binary vectors with exactly one zero entry.
pub fn one_zero_masks(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|zero| (0..d).map(|j| if j == zero { 0.0 } else { 1.0 }).collect())
        .collect()
}

/// A finitely supported mean-one law on `[0, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleNoiseDist {
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub upper: f64,
}

impl FeasibleNoiseDist {
    pub fn new(support: Vec<f64>, weights: Vec<f64>, upper: f64) -> Result<Self> {
        let dist = FeasibleNoiseDist { support, weights, upper };
        dist.check()?;
        Ok(dist)
    }

    /// Two-point law on `a ≤ 1 ≤ b` with mean one.
    pub fn two_point(a: f64, b: f64, upper: f64) -> Result<Self> {
        if a == b {
            return Self::new(vec![a], vec![1.0], upper);
        }
        let wa = (b - 1.0) / (b - a);
        Self::new(vec![a, b], vec![wa, 1.0 - wa], upper)
    }

    /// Dropout law: mass δ at 0 and 1−δ at `(1−δ)⁻¹`.
    pub fn dropout(delta: f64) -> Self {
        if delta == 0.0 {
            return FeasibleNoiseDist { support: vec![1.0], weights: vec![1.0], upper: 1.0 };
        }
        let s = 1.0 / (1.0 - delta);
        FeasibleNoiseDist { support: vec![0.0, s], weights: vec![delta, 1.0 - delta], upper: s }
    }

    pub fn mean(&self) -> f64 {
        dot(&self.support, &self.weights)
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.support.iter().zip(&self.weights).map(|(z, w)| w * f(*z)).sum()
    }

    pub fn check(&self) -> Result<()> {
        if self.support.len() != self.weights.len() || self.support.is_empty() {
            return Err(DroError::InvalidParameter("support and weights must be nonempty and aligned".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(DroError::InvalidParameter(format!("weights sum to {total}")));
        }
        if (self.mean() - 1.0).abs() > 1e-10 {
            return Err(DroError::InvalidParameter(format!("mean {} is not one", self.mean())));
        }
        if self.support.iter().any(|z| *z < 0.0 || *z > self.upper * (1.0 + 1e-12)) {
            return Err(DroError::InvalidParameter("support outside [0, upper]".into()));
        }
        Ok(())
    }
}

/// Brute-force maximum of `E_Q[f(ζ)]` over mean-one laws with at most two
/// support points on a uniform grid of `[0, (1−δ)⁻¹]` (both endpoints
/// included). Returns the optimal value and a maximizing law.
pub fn adversary_value<F: Fn(f64) -> f64>(f: F, delta: f64, grid_size: usize) -> Result<(f64, FeasibleNoiseDist)> {
    if !(0.0..1.0).contains(&delta) {
        return Err(DroError::InvalidParameter(format!("delta {delta} outside [0, 1)")));
    }
    if grid_size < 3 {
        return Err(DroError::InvalidParameter("grid_size must be at least 3".into()));
    }
    let upper = 1.0 / (1.0 - delta);
    let step = upper / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size)
        .map(|k| if k == grid_size - 1 { upper } else { k as f64 * step })
        .collect();
    let values: Vec<f64> = grid.iter().map(|z| f(*z)).collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(DroError::NonFinite(format!("f({})", grid[k])));
    }

    let mut best: Option<(f64, usize, usize)> = None;
    let mut consider = |v: f64, lo: usize, hi: usize| {
        if best.is_none_or(|(b, _, _)| v > b) {
            best = Some((v, lo, hi));
        }
    };
    for (lo, &a) in grid.iter().enumerate() {
        if a > 1.0 {
            break;
        }
        if a == 1.0 {
            consider(values[lo], lo, lo);
            continue;
        }
        for (hi, &b) in grid.iter().enumerate().skip(lo + 1) {
            if b <= 1.0 {
                continue;
            }
            let wa = (b - 1.0) / (b - a);
            consider(wa * values[lo] + (1.0 - wa) * values[hi], lo, hi);
        }
    }
    let (value, lo, hi) = best.ok_or_else(|| DroError::InvalidParameter("no feasible grid law".into()))?;
    let dist = FeasibleNoiseDist::two_point(grid[lo], grid[hi], upper)?;
    Ok((value, dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub trials: usize,
    /// Loss expectation under the dropout law.
    pub dropout_value: f64,
    /// Largest `E_Q[loss] − E_{Q*}[loss]` seen over the trials.
    pub max_violation: f64,
    /// Trials exceeding the dropout value by more than [`CERTIFY_TOL`].
    pub violations: usize,
}

pub const CERTIFY_TOL: f64 = 1e-9;

/// Exact `(1/n) Σᵢ E_Q[ℓ(xᵢ ⊙ ζ, yᵢ, θ)]` for a product law `Q = ⊗ⱼ Qⱼ`.
pub fn product_expectation(
    family: &GlmFamily,
    data: &Dataset,
    params: &ModelParams,
    laws: &[FeasibleNoiseDist],
) -> Result<f64> {
    let d = data.d();
    if laws.len() != d || params.dim() != d {
        return Err(DroError::DimensionMismatch { expected: d, got: laws.len().min(params.dim()) });
    }
    let sizes: Vec<usize> = laws.iter().map(|l| l.support.len()).collect();
    let total: usize = sizes.iter().product();
    let mut idx = vec![0usize; d];
    let mut zeta = vec![0.0; d];
    let mut xz = vec![0.0; d];
    let mut acc = 0.0;
    for _ in 0..total {
        let mut w = 1.0;
        for j in 0..d {
            zeta[j] = laws[j].support[idx[j]];
            w *= laws[j].weights[idx[j]];
        }
        if w > 0.0 {
            let mut row_sum = 0.0;
            for (i, &y) in data.y().iter().enumerate() {
                for ((o, x), z) in xz.iter_mut().zip(data.row(i)).zip(&zeta) {
                    *o = x * z;
                }
                row_sum += loss_unchecked(family, &xz, y, &params.beta, params.phi);
            }
            acc += w * row_sum;
        }
        // odometer increment
        for j in 0..d {
            idx[j] += 1;
            if idx[j] < sizes[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok(acc / data.n() as f64)
}

/// Compares the dropout law against `trials` random feasible two-point
/// product laws, with both expectations computed exactly.
pub fn certify_least_favorable<R: Rng + ?Sized>(
    family: &GlmFamily,
    data: &Dataset,
    spec: &DropoutSpec,
    params: &ModelParams,
    trials: usize,
    rng: &mut R,
) -> Result<CertificationReport> {
    let d = data.d();
    if d > 8 || data.n() > 50 {
        return Err(DroError::InvalidParameter("certification is limited to d ≤ 8 and n ≤ 50".into()));
    }
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    if spec.dim() != d {
        return Err(DroError::DimensionMismatch { expected: d, got: spec.dim() });
    }
    params.validate()?;

    let star: Vec<FeasibleNoiseDist> = spec.deltas().iter().map(|&dl| FeasibleNoiseDist::dropout(dl)).collect();
    let dropout_value = product_expectation(family, data, params, &star)?;

    let mut max_violation = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..trials {
        let laws: Vec<FeasibleNoiseDist> = spec
            .deltas()
            .iter()
            .map(|&dl| {
                let upper = 1.0 / (1.0 - dl);
                if upper == 1.0 {
                    return FeasibleNoiseDist::dropout(0.0);
                }
                let a = rng.random::<f64>();
                let b = 1.0 + (upper - 1.0) * (1.0 - rng.random::<f64>());
                let law = FeasibleNoiseDist::two_point(a, b, upper).expect("sampled law is feasible");
                assert!((law.mean() - 1.0).abs() <= 1e-12, "sampled law has mean {}", law.mean());
                law
            })
            .collect();
        let v = product_expectation(family, data, params, &laws)?;
        let gap = v - dropout_value;
        max_violation = max_violation.max(gap);
        if gap > CERTIFY_TOL {
            violations += 1;
        }
    }
    if trials == 0 {
        max_violation = 0.0;
    }
    Ok(CertificationReport { trials, dropout_value, max_violation, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{make_family, FamilyKind};
    use crate::rng::stream;

    #[test]
    fn spec_validation() {
        assert!(DropoutSpec::new(vec![0.0, 0.5]).is_ok());
        assert!(DropoutSpec::new(vec![1.0]).is_err());
        assert!(DropoutSpec::new(vec![-0.1]).is_err());
        assert!(DropoutSpec::new(vec![]).is_err());
        assert!(DropoutSpec::homogeneous(0.3, 4).unwrap().is_homogeneous());
        assert!(!DropoutSpec::new(vec![0.1, 0.2]).unwrap().is_homogeneous());
    }

    #[test]
    fn zero_delta_mask_is_all_ones() {
        let spec = DropoutSpec::homogeneous(0.0, 5).unwrap();
        let mut rng = stream(1, 0);
        for _ in 0..1000 {
            assert_eq!(sample_mask(&spec, &mut rng).values, vec![1.0; 5]);
        }
    }

    #[test]
    fn mask_nonzero_entries_are_exact_scale() {
        let spec = DropoutSpec::homogeneous(0.9, 3).unwrap();
        let mut rng = stream(2, 0);
        for _ in 0..1000 {
            for v in sample_mask(&spec, &mut rng).values {
                assert!(v == 0.0 || v == 1.0 / (1.0 - 0.9));
            }
        }
        assert_eq!(1.0 / (1.0 - 0.9), 10.000000000000002);
    }

    #[test]
    fn empirical_mean_is_one() {
        let d = 4;
        let spec = DropoutSpec::homogeneous(0.5, d).unwrap();
        let mut rng = stream(3, 0);
        let draws = 100_000;
        let mut sums = vec![0.0; d];
        for _ in 0..draws {
            for (s, v) in sums.iter_mut().zip(sample_mask(&spec, &mut rng).values) {
                *s += v;
            }
        }
        // each entry is 0 or 2 with equal odds: sd 1
        let three_se = 3.0 / (draws as f64).sqrt();
        for s in sums {
            assert!((s / draws as f64 - 1.0).abs() < three_se);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let spec = DropoutSpec::new(vec![0.2, 0.7, 0.4]).unwrap();
        let a: Vec<Mask> = {
            let mut r = stream(9, 1);
            (0..50).map(|_| sample_mask(&spec, &mut r)).collect()
        };
        let b: Vec<Mask> = {
            let mut r = stream(9, 1);
            (0..50).map(|_| sample_mask(&spec, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn enumeration_small_cases() {
        let e = enumerate_masks(&DropoutSpec::homogeneous(0.3, 1).unwrap()).unwrap();
        assert_eq!(e.masks.len(), 2);
        assert_eq!(e.masks[0].values, vec![0.0]);
        assert!((e.probs[0] - 0.3).abs() < 1e-15);
        assert_eq!(e.masks[1].values, vec![1.0 / 0.7]);
        assert!((e.probs[1] - 0.7).abs() < 1e-15);

        let e = enumerate_masks(&DropoutSpec::homogeneous(0.5, 2).unwrap()).unwrap();
        assert_eq!(e.masks.len(), 4);
        assert!(e.probs.iter().all(|p| *p == 0.25));
        assert!(e.masks.iter().flat_map(|m| &m.values).all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn enumeration_heterogeneous_product_probabilities() {
        let deltas = [0.1, 0.2, 0.3];
        let e = enumerate_masks(&DropoutSpec::new(deltas.to_vec()).unwrap()).unwrap();
        assert_eq!(e.masks.len(), 8);
        for (mask, p) in e.masks.iter().zip(&e.probs) {
            let mut oracle = 1.0;
            for (v, dl) in mask.values.iter().zip(deltas) {
                oracle *= if *v == 0.0 { dl } else { 1.0 - dl };
            }
            assert!((p - oracle).abs() < 1e-15);
        }
        assert!((e.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..3 {
            let m: f64 = e.masks.iter().zip(&e.probs).map(|(mk, p)| p * mk.values[j]).sum();
            assert!((m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_rejects_large_dimension() {
        let spec = DropoutSpec::homogeneous(0.1, 25).unwrap();
        assert!(matches!(enumerate_masks(&spec), Err(DroError::TooManyMasks { .. })));
    }

    #[test]
    fn one_zero_sets() {
        assert_eq!(one_zero_masks(1), vec![vec![0.0]]);
        assert_eq!(
            one_zero_masks(3),
            vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]
        );
        let a = one_zero_masks(8);
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|v| v.iter().sum::<f64>() == 7.0));
    }

    #[test]
    fn adversary_affine_and_quadratic() {
        let (v, dist) = adversary_value(|z| z, 0.4, 51).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        dist.check().unwrap();
        let (v, dist) = adversary_value(|z| z * z, 0.5, 11).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert_eq!(dist.support, vec![0.0, 2.0]);
    }

    #[test]
    fn adversary_softplus_matches_endpoint_law() {
        let f = |z: f64| (3.0 * z).exp().ln_1p();
        let delta = 0.3;
        let (v, _) = adversary_value(f, delta, 201).unwrap();
        let endpoint = delta * f(0.0) + (1.0 - delta) * f(1.0 / 0.7);
        assert!((v - endpoint).abs() < 1e-9);
    }

    #[test]
    fn adversary_degenerate_and_errors() {
        let (v, d) = adversary_value(|z| z * z * z, 0.0, 5).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(d.support, vec![1.0]);
        assert!(adversary_value(|z| z, 0.2, 2).is_err());
        assert!(adversary_value(|z| 1.0 / z, 0.2, 5).is_err());
    }

    #[test]
    fn certification_equality_cases() {
        let family = make_family(FamilyKind::Linear);
        let data = Dataset::from_rows(&[vec![1.0, -0.5], vec![0.3, 2.0]], vec![0.7, -1.2]).unwrap();
        let params = ModelParams::new(vec![0.4, -0.9], 1.3).unwrap();

        let spec = DropoutSpec::homogeneous(0.35, 2).unwrap();
        let star: Vec<_> = spec.deltas().iter().map(|d| FeasibleNoiseDist::dropout(*d)).collect();
        let a = product_expectation(&family, &data, &params, &star).unwrap();
        let rep = certify_least_favorable(&family, &data, &spec, &params, 0, &mut stream(0, 0)).unwrap();
        assert_eq!(a, rep.dropout_value);

        let spec0 = DropoutSpec::homogeneous(0.0, 2).unwrap();
        let rep = certify_least_favorable(&family, &data, &spec0, &params, 20, &mut stream(0, 0)).unwrap();
        assert_eq!(rep.max_violation, 0.0);
        assert_eq!(rep.violations, 0);
    }
}
