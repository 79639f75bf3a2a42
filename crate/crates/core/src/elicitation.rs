//! OLS-based prior elicitation: regress `y` on `X`, then use the fit as the
//! informative prior for `beta` and `sigma^2`, with a vague prior on `tau`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, InformativePrior, PriorSpec};
use crate::serde_util;

/// Scale of the vague `tau` prior.
pub const ELICITED_TAU0: f64 = 1.0;
/// Degrees of freedom of the vague `tau` prior.
pub const ELICITED_NU_TAU: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsSummary {
    #[serde(with = "serde_util::dvector")]
    pub coef: DVector<f64>,
    #[serde(with = "serde_util::dmatrix")]
    pub vcov: DMatrix<f64>,
    pub resid_df: usize,
    pub sigma2_hat: f64,
}

/// Ordinary least squares of `y` on `X` via a thin QR factorization.
pub fn ols(data: &Dataset) -> Result<OlsSummary> {
    let (n, p) = (data.n(), data.p());
    if n <= p {
        return Err(Error::input(format!("OLS needs n > p, got n = {n}, p = {p}")));
    }
    let (coef, xtx_inv) = least_squares(data.x(), data.y())?;
    let resid = data.y() - data.x() * &coef;
    let resid_df = n - p;
    let sigma2_hat = resid.norm_squared() / resid_df as f64;
    Ok(OlsSummary {
        coef,
        vcov: xtx_inv * sigma2_hat,
        resid_df,
        sigma2_hat,
    })
}

/// `((X'X)^-1 X'y, (X'X)^-1)` for a full-column-rank `X`.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max.max(f64::MIN_POSITIVE)) {
        return Err(Error::input("design matrix is rank deficient"));
    }
    let qty = qr.q().tr_mul(y);
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::input("design matrix is rank deficient"))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::input("design matrix is rank deficient"))?;
    let mut xtx_inv = &r_inv * r_inv.transpose();
    linalg::symmetrize_in_place(&mut xtx_inv);
    Ok((coef, xtx_inv))
}

/// Informative prior from the OLS fit of `y` on `X`.
///
/// Fails when the residual variance is zero (a noiseless fit), in which case
/// the caller should use flat priors instead.
pub fn elicit_priors(data: &Dataset) -> Result<PriorSpec> {
    let fit = ols(data)?;
    let y_scale = data.y().norm_squared() / data.n() as f64;
    if !(fit.sigma2_hat > 1e-20 * y_scale.max(1.0)) {
        return Err(Error::Elicitation(
            "OLS residual variance is zero; the sigma^2 prior cannot be elicited, use flat priors"
                .into(),
        ));
    }
    let mut sigma = fit.vcov.clone();
    if linalg::cholesky(&sigma, "OLS covariance", true).is_err() {
        let p = sigma.nrows();
        let jitter = 1e-8 * sigma.trace() / p as f64;
        log::warn!("OLS covariance is numerically singular; adding {jitter:e} to its diagonal");
        for i in 0..p {
            sigma[(i, i)] += jitter;
        }
    }
    Ok(PriorSpec::Informative(InformativePrior {
        mu: fit.coef,
        sigma,
        nu_sigma: fit.resid_df as f64,
        sigma0_sq: fit.sigma2_hat,
        nu_tau: ELICITED_NU_TAU,
        tau0: ELICITED_TAU0,
    }))
}
