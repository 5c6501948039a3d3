//! Full-batch first- and second-order minimization of smooth convex objectives.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DroError, Result};

/// A smooth objective in β.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&self, beta: &[f64]) -> f64;
    fn gradient(&self, beta: &[f64]) -> Vec<f64>;
    fn hessian(&self, beta: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    Fixed(f64),
    /// Armijo backtracking along the negative gradient.
    Backtracking,
    /// Damped Newton steps with Armijo backtracking.
    Newton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub step_rule: StepRule,
    /// Stop once the gradient ∞-norm is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Starting point; zeros when absent.
    pub init: Option<Vec<f64>>,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig { step_rule: StepRule::Backtracking, tol: 1e-8, max_iters: 100_000, init: None }
    }
}

impl GdConfig {
    pub fn newton() -> Self {
        GdConfig { step_rule: StepRule::Newton, tol: 1e-10, max_iters: 200, init: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(DroError::InvalidParameter("tol must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(DroError::InvalidParameter("max_iters must be at least 1".into()));
        }
        if let StepRule::Fixed(lr) = self.step_rule {
            if !(lr > 0.0) {
                return Err(DroError::InvalidParameter("learning rate must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub beta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-20;

pub fn minimize<O: SmoothObjective + ?Sized>(obj: &O, cfg: &GdConfig) -> Result<Minimum> {
    cfg.validate()?;
    let d = obj.dim();
    let mut beta = match &cfg.init {
        Some(b) if b.len() != d => return Err(DroError::DimensionMismatch { expected: d, got: b.len() }),
        Some(b) => b.clone(),
        None => vec![0.0; d],
    };
    let mut value = obj.value(&beta);
    if !value.is_finite() {
        return Err(DroError::NonFinite("initial point".into()));
    }
    let mut grad = obj.gradient(&beta);
    let mut step: f64 = 1.0;
    let mut trial = vec![0.0; d];

    'outer: for iter in 0..cfg.max_iters {
        let gnorm = inf_norm(&grad);
        if gnorm <= cfg.tol {
            return Ok(Minimum { beta, value, grad_norm: gnorm, iterations: iter });
        }
        match cfg.step_rule {
            StepRule::Fixed(lr) => {
                for (b, g) in beta.iter_mut().zip(&grad) {
                    *b -= lr * g;
                }
                if beta.iter().any(|b| !b.is_finite()) {
                    return Err(DroError::Diverged(f64::INFINITY));
                }
                value = obj.value(&beta);
            }
            StepRule::Backtracking => {
                let gg: f64 = grad.iter().map(|g| g * g).sum();
                // allow the step to grow back after a run of easy iterations
                step = (step * 2.0).min(1e6);
                loop {
                    for ((t, b), g) in trial.iter_mut().zip(&beta).zip(&grad) {
                        *t = b - step * g;
                    }
                    let v = obj.value(&trial);
                    let resolution = 1e-14 * value.abs().max(1.0);
                    if v.is_finite() && v <= value - ARMIJO_C * step * gg && value - v > resolution {
                        value = v;
                        std::mem::swap(&mut beta, &mut trial);
                        break;
                    }
                    // below rounding the values stop ordering iterates; use the gradient instead
                    if v.is_finite() && (v - value).abs() <= resolution {
                        let g = obj.gradient(&trial);
                        if inf_norm(&g) < gnorm {
                            value = v;
                            std::mem::swap(&mut beta, &mut trial);
                            grad = g;
                            continue 'outer;
                        }
                    }
                    step *= 0.5;
                    if step < MIN_STEP {
                        return Err(no_convergence(iter, gnorm, beta));
                    }
                }
            }
            StepRule::Newton => {
                let dir = newton_direction(obj, &beta, &grad);
                let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let mut t = 1.0;
                loop {
                    for ((tr, b), p) in trial.iter_mut().zip(&beta).zip(&dir) {
                        *tr = b + t * p;
                    }
                    let v = obj.value(&trial);
                    // near the optimum the decrease drowns in rounding; take the full step
                    let flat = t == 1.0 && v.is_finite() && (v - value).abs() <= 1e-14 * value.abs().max(1.0);
                    if v.is_finite() && (v <= value + ARMIJO_C * t * slope || flat) {
                        value = v;
                        std::mem::swap(&mut beta, &mut trial);
                        break;
                    }
                    t *= 0.5;
                    if t < MIN_STEP {
                        return Err(no_convergence(iter, gnorm, beta));
                    }
                }
            }
        }
        grad = obj.gradient(&beta);
    }
    let gnorm = inf_norm(&grad);
    if gnorm <= cfg.tol {
        return Ok(Minimum { beta, value, grad_norm: gnorm, iterations: cfg.max_iters });
    }
    Err(no_convergence(cfg.max_iters, gnorm, beta))
}

fn no_convergence(iterations: usize, grad_norm: f64, beta: Vec<f64>) -> DroError {
    DroError::NoConvergence { iterations, grad_norm, last_iterate: beta }
}

/// Newton direction, falling back to steepest descent when the Hessian is
/// not numerically positive definite.
fn newton_direction<O: SmoothObjective + ?Sized>(obj: &O, beta: &[f64], grad: &[f64]) -> Vec<f64> {
    let h = obj.hessian(beta);
    let g = DVector::from_column_slice(grad);
    if let Some(chol) = h.clone().cholesky() {
        let p = chol.solve(&g);
        if p.iter().all(|v| v.is_finite()) {
            return p.iter().map(|v| -v).collect();
        }
    }
    // Levenberg-style shift
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut shift = 1e-10 * scale;
    while shift < 1e10 * scale {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(chol) = hs.cholesky() {
            return chol.solve(&g).iter().map(|v| -v).collect();
        }
        shift *= 10.0;
    }
    grad.iter().map(|v| -v).collect()
}
