//! Small dense helpers shared by the model layers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization that reports failure as an error.
///
/// `what` names the matrix in the error message; `input` selects whether a
/// failure is the caller's fault or an internal invariant violation.
pub(crate) fn cholesky(m: &DMatrix<f64>, what: &str, input: bool) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        let msg = format!("{what} has non-finite entries");
        return Err(if input { Error::Input(msg) } else { Error::Internal(msg) });
    }
    Cholesky::new(m.clone()).ok_or_else(|| {
        let msg = format!("{what} is not positive definite");
        if input {
            Error::Input(msg)
        } else {
            Error::Internal(msg)
        }
    })
}

/// `ln det(A)` from a Cholesky factor of `A`.
pub(crate) fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub(crate) fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// `tr(A B)` for same-shaped square matrices without forming the product.
pub(crate) fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(AB) = sum_ij A_ij B_ji
    a.component_mul(&b.transpose()).sum()
}

/// Numerical rank test on the singular values of `x`.
pub(crate) fn has_full_column_rank(x: &DMatrix<f64>) -> bool {
    let p = x.ncols();
    if p == 0 || x.nrows() < p {
        return false;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > max * 1e-10 * (x.nrows().max(p) as f64)
}

pub(crate) fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
