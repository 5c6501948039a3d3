//! Closed-form dropout solutions for the linear model.
//!
//! Under dropout noise the linear least-squares objective becomes a ridge
//! problem whose penalty is weighted by the diagonal of the Gram matrix:
//!
//! ```text
//! (1/n)[(Y − Xβ)ᵀ(Y − Xβ) + δ/(1−δ) · βᵀΛβ],   Λ = diag(XᵀX)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DroError, Result};
use crate::glm::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeDropoutSolution {
    pub beta: Vec<f64>,
    /// Diagonal of `Λ = diag(XᵀX)`.
    pub lambda_diag: Vec<f64>,
    pub delta: f64,
}

impl RidgeDropoutSolution {
    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.lambda_diag))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(DroError::InvalidParameter(format!("delta {delta} outside [0, 1)")));
    }
    Ok(())
}

/// `(G + δ/(1−δ)·diag(G))⁻¹ c` through a Cholesky factorization.
fn penalized_solve(gram: &DMatrix<f64>, cross: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    let k = delta / (1.0 - delta);
    let mut a = gram.clone();
    for j in 0..a.nrows() {
        a[(j, j)] *= 1.0 + k;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| DroError::Singular("penalized Gram matrix is not positive definite".into()))?;
    Ok(chol.solve(cross))
}

/// `β̂(δ) = (XᵀX + δ/(1−δ)·diag(XᵀX))⁻¹ XᵀY`.
pub fn dropout_ridge(data: &Dataset, delta: f64) -> Result<RidgeDropoutSolution> {
    check_delta(delta)?;
    if data.is_empty() {
        return Err(DroError::EmptyDataset);
    }
    let x = data.x_matrix();
    let gram = x.tr_mul(&x);
    let cross = x.tr_mul(&data.y_vector());
    let beta = penalized_solve(&gram, &cross, delta)?;
    Ok(RidgeDropoutSolution {
        beta: beta.as_slice().to_vec(),
        lambda_diag: gram.diagonal().as_slice().to_vec(),
        delta,
    })
}

/// Population limit `β*(δ) = (E[XXᵀ] + δ/(1−δ)·diag(E[XXᵀ]))⁻¹ E[YX]`.
pub fn population_limit_lr(second_moment: &DMatrix<f64>, cross_moment: &[f64], delta: f64) -> Result<Vec<f64>> {
    check_delta(delta)?;
    let d = cross_moment.len();
    if second_moment.nrows() != d || second_moment.ncols() != d {
        return Err(DroError::DimensionMismatch { expected: d, got: second_moment.nrows() });
    }
    if second_moment.clone().cholesky().is_none() {
        return Err(DroError::InvalidParameter("second moment matrix is not positive definite".into()));
    }
    let beta = penalized_solve(second_moment, &DVector::from_column_slice(cross_moment), delta)?;
    Ok(beta.as_slice().to_vec())
}

/// `(1/n)[(Y − Xβ)ᵀ(Y − Xβ) + δ/(1−δ)·βᵀΛβ]`.
pub fn penalized_objective(data: &Dataset, beta: &[f64], delta: f64) -> f64 {
    let k = delta / (1.0 - delta);
    let mut rss = 0.0;
    let mut pen = vec![0.0; data.d()];
    for (x, &y) in data.rows().zip(data.y()) {
        let r = y - crate::glm::dot(x, beta);
        rss += r * r;
        for (p, xj) in pen.iter_mut().zip(x) {
            *p += xj * xj;
        }
    }
    let quad: f64 = pen.iter().zip(beta).map(|(l, b)| l * b * b).sum();
    (rss + k * quad) / data.n() as f64
}
