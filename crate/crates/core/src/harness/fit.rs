use serde::Serialize;

use super::sweep::SweepTable;
use crate::{Error, Result};

/// Cells with fewer errors are treated as bounds rather than fit points.
pub const MIN_ERRORS: usize = 5;

/// Least-squares fit of `-ln p_e = intercept + slope T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub algorithm: String,
    pub d: usize,
    pub slope: f64,
    pub slope_se: f64,
    pub intercept: f64,
    /// Budgets of the cells used in the fit.
    pub points: Vec<usize>,
    /// `(T, rule-of-three bound)` for cells with no errors.
    pub upper_bounds: Vec<(usize, f64)>,
    pub reduced_chi2: f64,
}

/// Weights are the error counts: `Var(ln p_hat) ~ 1 / errors`. The slope's
/// standard error is inflated by the reduced chi-square when that exceeds
/// one. `d = None` requires the algorithm's rows to share one dimension.
pub fn fit_exponent(table: &SweepTable, algorithm: &str, d: Option<usize>) -> Result<ExponentFit> {
    let rows: Vec<_> = table
        .for_algorithm(algorithm)
        .filter(|r| d.is_none_or(|d| r.d == d))
        .collect();
    let dims: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.d).collect();
    if dims.len() > 1 {
        return Err(Error::InvalidArgument(format!(
            "{algorithm} has rows for d in {dims:?}; pick one"
        )));
    }
    let upper_bounds = rows
        .iter()
        .filter(|r| r.errors == 0 && r.trials > 0)
        .map(|r| (r.t, 3.0 / r.trials as f64))
        .collect();
    let used: Vec<_> = rows.iter().filter(|r| r.errors >= MIN_ERRORS).collect();
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{algorithm}: {} cells with at least {MIN_ERRORS} errors, need 3",
            used.len()
        )));
    }
    let x: Vec<f64> = used.iter().map(|r| r.t as f64).collect();
    let y: Vec<f64> = used.iter().map(|r| -(r.errors as f64 / r.trials as f64).ln()).collect();
    let w: Vec<f64> = used.iter().map(|r| r.errors as f64).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(&x).zip(&y).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = w
        .iter()
        .zip(&x)
        .zip(&y)
        .map(|((w, x), y)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let reduced_chi2 = rss / (used.len() - 2) as f64;
    let slope_se = (1.0 / sxx).sqrt() * reduced_chi2.max(1.0).sqrt();
    Ok(ExponentFit {
        algorithm: algorithm.into(),
        d: used[0].d,
        slope,
        slope_se,
        intercept,
        points: used.iter().map(|r| r.t).collect(),
        upper_bounds,
        reduced_chi2,
    })
}
