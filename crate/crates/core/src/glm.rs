//! Exponential-family machinery for canonical-link GLMs.
//!
//! A family is described by its log-partition function `Ψ`, the dispersion
//! map `a(φ)` and the base-measure term `ln h(y, φ)`. The per-observation
//! loss is the negative log-likelihood
//!
//! ```text
//! ℓ(x, y, θ) = −ln h(y, φ) + (Ψ(βᵀx) − y·βᵀx) / a(φ)
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DroError, Result};
use crate::optim::{minimize, GdConfig, SmoothObjective};

/// Smallest dispersion handed back by [`fit_mle`].
pub const PHI_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Linear,
    Logistic,
    Poisson,
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyKind::Linear => "linear",
            FamilyKind::Logistic => "logistic",
            FamilyKind::Poisson => "poisson",
        };
        f.write_str(s)
    }
}

impl FromStr for FamilyKind {
    type Err = DroError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "gaussian" => Ok(FamilyKind::Linear),
            "logistic" | "binomial" => Ok(FamilyKind::Logistic),
            "poisson" => Ok(FamilyKind::Poisson),
            other => Err(DroError::InvalidParameter(format!("unknown family '{other}'"))),
        }
    }
}

/// A canonical-link exponential family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlmFamily {
    kind: FamilyKind,
}

pub fn make_family(kind: FamilyKind) -> GlmFamily {
    GlmFamily { kind }
}

impl GlmFamily {
    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    /// Log-partition function `Ψ(η)`.
    pub fn psi(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Linear => 0.5 * eta * eta,
            // max(η,0) + ln(1 + e^{−|η|}) never overflows
            FamilyKind::Logistic => eta.max(0.0) + (-eta.abs()).exp().ln_1p(),
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// Conditional mean map `Ψ̇(η)`.
    pub fn psi_dot(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Linear => eta,
            FamilyKind::Logistic => sigmoid(eta),
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// Variance function `Ψ̈(η)`.
    pub fn psi_ddot(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Linear => 1.0,
            FamilyKind::Logistic => {
                let p = sigmoid(eta);
                p * (1.0 - p)
            }
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// Dispersion map `a(φ)`.
    pub fn dispersion(&self, phi: f64) -> f64 {
        match self.kind {
            FamilyKind::Linear => phi,
            FamilyKind::Logistic | FamilyKind::Poisson => 1.0,
        }
    }

    /// `ln h(y, φ)`.
    pub fn log_base(&self, y: f64, phi: f64) -> f64 {
        match self.kind {
            FamilyKind::Linear => -0.5 * (2.0 * std::f64::consts::PI * phi).ln() - y * y / (2.0 * phi),
            FamilyKind::Logistic => 0.0,
            FamilyKind::Poisson => -ln_factorial(y),
        }
    }

    /// Whether the dispersion is a free parameter estimated from data.
    pub fn has_free_dispersion(&self) -> bool {
        matches!(self.kind, FamilyKind::Linear)
    }

    /// Whether `Ψ̈` is bounded. Poisson is not, so results that rely on a
    /// bounded curvature are not guaranteed for it.
    pub fn has_bounded_curvature(&self) -> bool {
        !matches!(self.kind, FamilyKind::Poisson)
    }

    pub fn response_domain(&self) -> &'static str {
        match self.kind {
            FamilyKind::Linear => "real line",
            FamilyKind::Logistic => "{0, 1}",
            FamilyKind::Poisson => "nonnegative integers",
        }
    }

    pub fn check_response(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self.kind {
            FamilyKind::Linear => true,
            FamilyKind::Logistic => y == 0.0 || y == 1.0,
            FamilyKind::Poisson => y >= 0.0 && y.fract() == 0.0,
        }
    }

    /// β-dependent part of the loss with unit dispersion: `Ψ(η) − yη`.
    #[inline]
    pub fn canonical_loss(&self, eta: f64, y: f64) -> f64 {
        self.psi(eta) - y * eta
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn ln_factorial(y: f64) -> f64 {
    if y < 2.0 {
        return 0.0;
    }
    if y <= 170.0 {
        return (2..=y as u64).map(|k| (k as f64).ln()).sum();
    }
    // Stirling series for ln Γ(y + 1)
    let z = y + 1.0;
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * z)
        - 1.0 / (360.0 * z.powi(3))
        + 1.0 / (1260.0 * z.powi(5))
}

/// θ = (β, φ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub phi: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, phi: f64) -> Result<Self> {
        let p = ModelParams { beta, phi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0) || !self.phi.is_finite() {
            return Err(DroError::InvalidParameter(format!("phi must be positive, got {}", self.phi)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(DroError::InvalidParameter("beta has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }
}

/// `n × d` covariates stored row-major, plus the response vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(DroError::InvalidData("need at least one covariate".into()));
        }
        let n = y.len();
        if x.len() != n * d {
            return Err(DroError::DimensionMismatch { expected: n * d, got: x.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DroError::InvalidData("non-finite entry".into()));
        }
        Ok(Dataset { x, y, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(DroError::DimensionMismatch { expected: y.len(), got: rows.len() });
        }
        let mut x = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(DroError::DimensionMismatch { expected: d, got: r.len() });
            }
            x.extend_from_slice(r);
        }
        Dataset::new(x, y, d)
    }

    /// Checks the response against the family's support.
    pub fn validate_for(&self, family: &GlmFamily) -> Result<()> {
        if let Some(bad) = self.y.iter().find(|y| !family.check_response(**y)) {
            return Err(DroError::InvalidData(format!(
                "response {bad} outside {} for the {} family",
                family.response_domain(),
                family.kind()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.x.chunks_exact(self.d)
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.x)
    }

    pub fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(idx.len() * self.d);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset { x, y, n: idx.len(), d: self.d }
    }

    /// Reads `y,x1,…,xd` with a header row.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 {
            return Err(DroError::InvalidData("expected columns y,x1,...,xd".into()));
        }
        if headers.get(0) != Some("y") {
            return Err(DroError::InvalidData(format!(
                "first column must be 'y', found '{}'",
                headers.get(0).unwrap_or("")
            )));
        }
        let d = headers.len() - 1;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(DroError::InvalidData(format!("row {} has {} fields", line + 2, rec.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                if field.is_empty() {
                    return Err(DroError::InvalidData(format!("missing value in row {}", line + 2)));
                }
                let v: f64 = field
                    .parse()
                    .map_err(|_| DroError::InvalidData(format!("bad number '{field}' in row {}", line + 2)))?;
                if j == 0 {
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        Dataset::new(x, y, d)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.d).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec = Vec::with_capacity(self.d + 1);
            rec.push(fmt_f64(self.y[i]));
            rec.extend(self.row(i).iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[inline]
/// Inner product with four independent partial sums.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DroError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Negative log-likelihood of a single observation.
pub fn loss(family: &GlmFamily, x_row: &[f64], y: f64, params: &ModelParams) -> Result<f64> {
    check_dims(params.dim(), x_row.len())?;
    if !(params.phi > 0.0) {
        return Err(DroError::InvalidParameter(format!("phi must be positive, got {}", params.phi)));
    }
    Ok(loss_unchecked(family, x_row, y, &params.beta, params.phi))
}

#[inline]
pub(crate) fn loss_unchecked(family: &GlmFamily, x_row: &[f64], y: f64, beta: &[f64], phi: f64) -> f64 {
    let eta = dot(beta, x_row);
    -family.log_base(y, phi) + family.canonical_loss(eta, y) / family.dispersion(phi)
}

pub fn avg_neg_loglik(family: &GlmFamily, data: &Dataset, params: &ModelParams) -> Result<f64> {
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    check_dims(data.d(), params.dim())?;
    params.validate()?;
    let total: f64 = (0..data.n())
        .map(|i| loss_unchecked(family, data.row(i), data.y()[i], &params.beta, params.phi))
        .sum();
    Ok(total / data.n() as f64)
}

/// Gradient in β of [`avg_neg_loglik`].
pub fn avg_neg_loglik_grad(family: &GlmFamily, data: &Dataset, params: &ModelParams) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    check_dims(data.d(), params.dim())?;
    params.validate()?;
    let mut g = MleObjective { family: *family, data }.gradient(&params.beta);
    let a = family.dispersion(params.phi);
    g.iter_mut().for_each(|v| *v /= a);
    Ok(g)
}

/// `(1/n) Σ Ψ(xᵢᵀβ) − yᵢxᵢᵀβ`, the β-part of the average negative log-likelihood.
pub(crate) struct MleObjective<'a> {
    pub family: GlmFamily,
    pub data: &'a Dataset,
}

impl SmoothObjective for MleObjective<'_> {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let n = self.data.n() as f64;
        self.data
            .rows()
            .zip(self.data.y())
            .map(|(x, &y)| self.family.canonical_loss(dot(beta, x), y))
            .sum::<f64>()
            / n
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let n = self.data.n() as f64;
        let mut g = vec![0.0; self.data.d()];
        for (x, &y) in self.data.rows().zip(self.data.y()) {
            let r = self.family.psi_dot(dot(beta, x)) - y;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj;
            }
        }
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.data.d();
        let n = self.data.n() as f64;
        let mut h = DMatrix::zeros(d, d);
        for x in self.data.rows() {
            let w = self.family.psi_ddot(dot(beta, x)) / n;
            let xv = DVector::from_column_slice(x);
            h.ger(w, &xv, &xv, 1.0);
        }
        h
    }
}

/// Maximum likelihood fit (the δ = 0 baseline).
///
/// The linear family is solved from the normal equations with φ equal to the
/// mean squared residual, floored at [`PHI_FLOOR`]. Other families run the
/// configured gradient method on the average negative log-likelihood and
/// report φ = 1.
pub fn fit_mle(family: &GlmFamily, data: &Dataset, cfg: &GdConfig) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    data.validate_for(family)?;
    match family.kind() {
        FamilyKind::Linear => {
            let beta = ols(data)?;
            let phi = mean_squared_residual(data, &beta).max(PHI_FLOOR);
            Ok(ModelParams { beta, phi })
        }
        _ => {
            let obj = MleObjective { family: *family, data };
            let sol = minimize(&obj, cfg)?;
            Ok(ModelParams { beta: sol.beta, phi: 1.0 })
        }
    }
}

/// Least squares `(XᵀX)⁻¹XᵀY` via Cholesky.
pub fn ols(data: &Dataset) -> Result<Vec<f64>> {
    let x = data.x_matrix();
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(&data.y_vector());
    let chol = xtx
        .cholesky()
        .ok_or_else(|| DroError::Singular("XᵀX is not positive definite".into()))?;
    Ok(chol.solve(&xty).as_slice().to_vec())
}

pub fn mean_squared_residual(data: &Dataset, beta: &[f64]) -> f64 {
    data.rows()
        .zip(data.y())
        .map(|(x, &y)| {
            let r = y - dot(beta, x);
            r * r
        })
        .sum::<f64>()
        / data.n() as f64
}
