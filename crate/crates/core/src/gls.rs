//! GLS re-estimation of the covariate effects.
//!
//! Holding `mu_h` fixed and treating `Sigma_y = Sigma_h + sigma2_map I` as
//! the known covariance of `y`, `z = y - mu_h` is regressed on `X` by
//! generalized least squares. The GLS covariance replaces `Sigma_q(beta)`
//! when building intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::FitResult;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{wald_intervals, Dataset, Interval};
use crate::serde_util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsResult {
    #[serde(with = "serde_util::dvector")]
    pub beta_gls: DVector<f64>,
    #[serde(with = "serde_util::dmatrix")]
    pub cov_gls: DMatrix<f64>,
    #[serde(with = "serde_util::dmatrix")]
    pub sigma_y: DMatrix<f64>,
}

/// GLS estimate from a fitted model, using its `q(h)` and `sigma^2` mode.
pub fn gls_correct(fit: &FitResult, data: &Dataset) -> Result<GlsResult> {
    if !fit.trace.converged {
        log::debug!(
            "GLS correction applied to a fit that stopped after {} iterations without converging",
            fit.trace.iterations
        );
    }
    gls_estimate(data, &fit.posterior.mu_h, &fit.posterior.sigma_h, fit.sigma2_map)
}

/// `beta = (X' Sy^-1 X)^-1 X' Sy^-1 (y - mu_h)` and its covariance
/// `(X' Sy^-1 X)^-1`, with `Sy = sigma_h + sigma2 I`.
pub fn gls_estimate(
    data: &Dataset,
    mu_h: &DVector<f64>,
    sigma_h: &DMatrix<f64>,
    sigma2: f64,
) -> Result<GlsResult> {
    let n = data.n();
    if mu_h.len() != n || sigma_h.shape() != (n, n) {
        return Err(Error::input(format!("q(h) does not match a dataset of {n} subjects")));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::input(format!("sigma^2 estimate must be positive, got {sigma2}")));
    }
    let mut sigma_y = sigma_h.clone();
    for i in 0..n {
        sigma_y[(i, i)] += sigma2;
    }
    linalg::symmetrize_in_place(&mut sigma_y);
    let chol_y = linalg::cholesky(&sigma_y, "Sigma_q(y)", false)?;

    let x = data.x();
    let whitened_x = chol_y.solve(x);
    let info = x.transpose() * &whitened_x;
    let chol_info = linalg::cholesky(&info, "X' Sigma_q(y)^-1 X", true)
        .map_err(|_| Error::input("design matrix is rank deficient under the GLS weight"))?;
    let z = data.y() - mu_h;
    let beta_gls = chol_info.solve(&whitened_x.tr_mul(&z));
    let mut cov_gls = chol_info.inverse();
    linalg::symmetrize_in_place(&mut cov_gls);
    Ok(GlsResult {
        beta_gls,
        cov_gls,
        sigma_y,
    })
}

/// Wald intervals from the GLS estimate and covariance.
pub fn gls_intervals(res: &GlsResult, level: f64) -> Result<Vec<Interval>> {
    wald_intervals(&res.beta_gls, &res.cov_gls, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::ols;
    use crate::kernel::ExposureMatrix;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn data() -> Dataset {
        let x = dmatrix![
            1.0, 0.3;
            1.0, -1.2;
            1.0, 0.8;
            1.0, 2.1;
            1.0, -0.4;
            1.0, 1.0
        ];
        let y = dvector![1.1, -0.7, 2.0, 3.9, 0.2, 1.8];
        let z = ExposureMatrix::new(DMatrix::from_fn(6, 2, |i, j| (i + j) as f64 * 0.5)).unwrap();
        Dataset::new(y, x, z).unwrap()
    }

    #[test]
    fn identity_weight_reproduces_ols() {
        let d = data();
        let res = gls_estimate(&d, &DVector::zeros(6), &DMatrix::zeros(6, 6), 1.0).unwrap();
        let o = ols(&d).unwrap();
        let xtx_inv = o.vcov.clone() / o.sigma2_hat;
        assert_relative_eq!(res.beta_gls, o.coef, epsilon = 1e-12);
        assert_relative_eq!(res.cov_gls, xtx_inv, epsilon = 1e-12);
    }

    #[test]
    fn scalar_weight_cancels_in_estimate() {
        let d = data();
        let base = gls_estimate(&d, &DVector::zeros(6), &DMatrix::zeros(6, 6), 1.0).unwrap();
        let four = gls_estimate(&d, &DVector::zeros(6), &(DMatrix::identity(6, 6) * 3.0), 1.0).unwrap();
        assert_relative_eq!(four.beta_gls, base.beta_gls, epsilon = 1e-12);
        assert_relative_eq!(four.cov_gls, base.cov_gls * 4.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        let d = data();
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 5 + j * 3) % 7) as f64 / 7.0 - 0.4);
        let sigma_h = &a * a.transpose();
        let mu_h = dvector![0.3, -0.1, 0.4, 0.0, -0.2, 0.1];
        let res = gls_estimate(&d, &mu_h, &sigma_h, 0.7).unwrap();

        let sy_inv = (sigma_h + DMatrix::identity(6, 6) * 0.7).try_inverse().unwrap();
        let x = d.x();
        let info_inv = (x.transpose() * &sy_inv * x).try_inverse().unwrap();
        let beta = &info_inv * x.transpose() * &sy_inv * (d.y() - &mu_h);
        assert_relative_eq!(res.beta_gls, beta, max_relative = 1e-10);
        assert_relative_eq!(res.cov_gls, info_inv, max_relative = 1e-10);
    }

    #[test]
    fn interval_examples() {
        let res = GlsResult {
            beta_gls: dvector![0.0, 0.0],
            cov_gls: DMatrix::identity(2, 2),
            sigma_y: DMatrix::identity(2, 2),
        };
        let iv = gls_intervals(&res, 0.95).unwrap();
        assert_eq!(iv[0], Interval::new(-1.96, 1.96));

        let wide = GlsResult {
            cov_gls: DMatrix::identity(2, 2) * 4.0,
            ..res.clone()
        };
        let iv4 = gls_intervals(&wide, 0.95).unwrap();
        assert_relative_eq!(iv4[1].half_width(), 2.0 * iv[1].half_width());

        let degenerate = GlsResult {
            cov_gls: DMatrix::zeros(2, 2),
            ..res
        };
        let iv0 = gls_intervals(&degenerate, 0.95).unwrap();
        assert_eq!(iv0[0].half_width(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = data();
        assert!(gls_estimate(&d, &DVector::zeros(5), &DMatrix::zeros(6, 6), 1.0).is_err());
        assert!(gls_estimate(&d, &DVector::zeros(6), &DMatrix::zeros(6, 6), 0.0).is_err());
        let indefinite = DMatrix::identity(6, 6) * -2.0;
        assert!(matches!(
            gls_estimate(&d, &DVector::zeros(6), &indefinite, 1.0),
            Err(Error::Internal(_))
        ));
    }
}
