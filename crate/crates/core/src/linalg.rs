//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Relative singular-value tolerance used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Stack vectors as the columns of a `d x n` matrix.
pub fn column_matrix(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    let d = vectors.first().map_or(0, |v| v.len());
    DMatrix::from_fn(d, vectors.len(), |i, j| vectors[j][i])
}

/// Numerical rank of the span of `vectors`, relative to the largest
/// singular value.
pub fn rank(vectors: &[DVector<f64>]) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let sv = column_matrix(vectors).singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// `x^T M^{-1} x` for a factored `M`.
pub fn inverse_quadratic(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>) -> f64 {
    // ||L^{-1} x||^2
    let y = chol
        .l_dirty()
        .solve_lower_triangular(x)
        .expect("cholesky factor has a nonzero diagonal");
    y.norm_squared()
}

pub fn is_power_of_two(d: usize) -> bool {
    d != 0 && d & (d - 1) == 0
}

/// Base-2 logarithm of a power of two.
pub fn log2_exact(d: usize) -> usize {
    debug_assert!(is_power_of_two(d));
    d.trailing_zeros() as usize
}
