//! KL variant: with equal noise scales the KL between the sub-population's
//! Gaussian conditional and the pooled one reduces to a residual gap, so the
//! weight search alternates a linear w-step with a weighted least-squares fit.

use nalgebra::{DMatrix, DVector};

use super::{top_mass_weights, ExploitConfig, Exploitation};
use crate::error::{DilError, Result};
use crate::models::{Architecture, Predictor, Task};

const RIDGE: f64 = 1e-9;

/// Weighted least-squares fit of `y` on `[phi, 1]`; returns `[coef..., intercept]`
/// (the [`Architecture::Linear`] parameter layout). Weights need not be normalized.
pub fn weighted_least_squares(phi: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = phi.shape();
    if y.len() != n || w.len() != n {
        return Err(DilError::Dimension(format!("{n} rows, {} targets, {} weights", y.len(), w.len())));
    }
    let mut a = DMatrix::<f64>::zeros(p + 1, p + 1);
    let mut b = DVector::<f64>::zeros(p + 1);
    let mut row = DVector::<f64>::zeros(p + 1);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..p {
            row[j] = phi[(i, j)];
        }
        row[p] = 1.0;
        a.ger(w[i], &row, &row, 1.0);
        b.axpy(w[i] * y[i], &row, 1.0);
    }
    let scale = a.diagonal().amax().max(1e-300);
    for j in 0..p {
        a[(j, j)] += RIDGE * scale;
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| DilError::Singular { condition: scale / (RIDGE * scale) })?;
    Ok(chol.solve(&b).iter().copied().collect())
}

/// Per-sample scores `0.5 * [(y - f_ref)^2 - (y - f_q)^2]`.
pub fn kl_scores(y: &[f64], reference: &[f64], fitted: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(reference.iter().zip(fitted))
        .map(|(yi, (r, q))| 0.5 * ((yi - r).powi(2) - (yi - q).powi(2)))
        .collect()
}

fn linear_predictions(phi: &DMatrix<f64>, coef: &[f64]) -> Vec<f64> {
    let p = phi.ncols();
    (0..phi.nrows()).map(|i| (0..p).map(|j| phi[(i, j)] * coef[j]).sum::<f64>() + coef[p]).collect()
}

fn support(w: &[f64]) -> Vec<usize> {
    w.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| i).collect()
}

/// Sub-population maximizing the KL score against a reference regressor.
///
/// `reference` maps `phi` to predictions (regression). The selection starts
/// from the points the reference fits worst, then alternates the exact
/// top-mass w-step with a weighted linear refit until the support settles or
/// `cfg.steps` rounds have run.
pub fn exploit_kl(
    phi: &DMatrix<f64>,
    y: &[f64],
    alpha0: f64,
    reference: &Predictor,
    cfg: &ExploitConfig,
) -> Result<Exploitation> {
    cfg.validate()?;
    if reference.task() != Task::Regression {
        return Err(DilError::InvalidParam("the KL variant supports regression only".into()));
    }
    if phi.nrows() != y.len() {
        return Err(DilError::Dimension(format!("{} rows vs {} targets", phi.nrows(), y.len())));
    }
    let base = reference.forward(phi)?;
    let base: Vec<f64> = base.column(0).iter().copied().collect();

    let initial: Vec<f64> = y.iter().zip(&base).map(|(yi, r)| 0.5 * (yi - r).powi(2)).collect();
    let mut weights = top_mass_weights(&initial, alpha0)?;
    let mut objective = 0.0;
    let mut trace = Vec::new();
    for _ in 0..cfg.steps.max(1) {
        let coef = weighted_least_squares(phi, y, weights.as_slice())?;
        let scores = kl_scores(y, &base, &linear_predictions(phi, &coef));
        let next = top_mass_weights(&scores, alpha0)?;
        objective = next.as_slice().iter().zip(&scores).map(|(w, s)| w * s).sum();
        trace.push(objective);
        let settled = support(next.as_slice()) == support(weights.as_slice());
        weights = next;
        if settled {
            break;
        }
    }
    Ok(Exploitation { weights, objective, trace })
}

/// Least-squares reference regressor on `phi`, as a linear predictor.
pub fn reference_fit(phi: &DMatrix<f64>, y: &[f64]) -> Result<Predictor> {
    let coef = weighted_least_squares(phi, y, &vec![1.0; y.len()])?;
    Predictor::from_params(Architecture::Linear { d_in: phi.ncols() }, Task::Regression, coef)
}
