//! Least squares in the span of the current candidate set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::instance::{rank_by_score, ArmId};
use crate::linalg;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationState {
    pub round: usize,
    /// Candidate set the round estimated over, sorted by id.
    pub candidates: Vec<ArmId>,
    /// Observations per candidate, by position.
    pub counts: Vec<usize>,
    /// Reduced-dimension information matrix `sum b b^T`.
    pub v: DMatrix<f64>,
    pub theta_hat: DVector<f64>,
    /// Estimated reward per candidate, by position.
    pub p_hat: Vec<f64>,
}

impl EstimationState {
    pub fn p_hat_of(&self, arm: ArmId) -> Option<f64> {
        self.candidates.iter().position(|&a| a == arm).map(|k| self.p_hat[k])
    }

    /// The `keep` best candidates (ties to the lower id), sorted by id.
    pub fn best(&self, keep: usize) -> Vec<ArmId> {
        let ranked = rank_by_score(&self.candidates, |a| self.p_hat_of(a).unwrap_or(f64::NEG_INFINITY));
        let mut out = ranked[..keep.min(ranked.len())].to_vec();
        out.sort_unstable();
        out
    }
}

/// Unregularised least squares over `basis^T a`.
///
/// `observations` holds `(candidate position, reward)` pairs; `arms` are the
/// full-dimension candidate vectors in the same order as `candidates`.
pub fn estimate(
    round: usize,
    candidates: &[ArmId],
    arms: &[DVector<f64>],
    basis: &DMatrix<f64>,
    observations: &[(usize, f64)],
) -> Result<EstimationState> {
    let p = basis.ncols();
    let reduced: Vec<DVector<f64>> = arms.iter().map(|a| basis.tr_mul(a)).collect();
    let mut counts = vec![0usize; candidates.len()];
    let mut sums = vec![0.0; candidates.len()];
    for &(k, x) in observations {
        counts[k] += 1;
        sums[k] += x;
    }
    let mut v = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (k, b) in reduced.iter().enumerate() {
        if counts[k] > 0 {
            v.ger(counts[k] as f64, b, b, 1.0);
            rhs.axpy(sums[k], b, 1.0);
        }
    }
    let chol = linalg::cholesky(&v).ok_or(Error::SingularV)?;
    let theta_hat = chol.solve(&rhs);
    let p_hat = reduced.iter().map(|b| b.dot(&theta_hat)).collect();
    Ok(EstimationState {
        round,
        candidates: candidates.to_vec(),
        counts,
        v,
        theta_hat,
        p_hat,
    })
}
