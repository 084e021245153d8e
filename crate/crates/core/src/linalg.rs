//! Small dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{HrmError, Result};

/// Weighted least squares with an unpenalized intercept:
/// minimizes `Σ w_i (y_i - xᵢᵀθ - b)²`.
///
/// Solves the normal equations by Cholesky and falls back to an SVD
/// minimum-norm solve when the system is rank deficient (e.g. columns that
/// a mask has zeroed out).
pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<(DVector<f64>, f64)> {
    let (n, d) = x.shape();
    if y.len() != n || w.len() != n {
        return Err(HrmError::data("least squares: row counts disagree"));
    }
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(HrmError::data("least squares: weights must be nonnegative"));
    }
    let mut a = DMatrix::zeros(d + 1, d + 1);
    let mut rhs = DVector::zeros(d + 1);
    let mut row = DVector::zeros(d + 1);
    for i in 0..n {
        if w[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            row[j] = x[(i, j)];
        }
        row[d] = 1.0;
        a.ger(w[i], &row, &row, 1.0);
        rhs.axpy(w[i] * y[i], &row, 1.0);
    }
    let beta = solve_symmetric(a, rhs)?;
    Ok((beta.rows(0, d).into_owned(), beta[d]))
}

/// Ordinary least squares with intercept.
pub fn ordinary_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    weighted_least_squares(x, y, &DVector::from_element(x.nrows(), 1.0))
}

/// Solves a symmetric positive semi-definite system, minimum-norm when singular.
pub fn solve_symmetric(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let scale = a.diagonal().amax().max(1.0);
    if let Some(chol) = a.clone().cholesky() {
        let sol = chol.solve(&b);
        // reject numerically meaningless solutions from near-singular factors
        if sol.iter().all(|v| v.is_finite())
            && (&a * &sol - &b).amax() <= 1e-8 * scale * (1.0 + b.amax())
        {
            return Ok(sol);
        }
    }
    let svd = a.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(&b, eps)
        .map_err(|e| HrmError::data(format!("least squares solve failed: {e}")))
}
