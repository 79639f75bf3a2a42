//! Exact Gaussian posterior of `(h, beta)` for known `sigma^2` and `tau`.
//!
//! With both variances fixed the model is jointly Gaussian, so the
//! conditional posterior of `(h, beta)` can be found by solving one dense
//! `(n + p)`-dimensional linear system. Used as a test oracle for the
//! mean-field fixed point; it inverts `K` by LU rather than through the
//! kernel's Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::model::{Dataset, PriorSpec};

/// Largest problem the dense oracle accepts.
pub const ORACLE_MAX_N: usize = 50;

#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub h_mean: DVector<f64>,
    pub beta_mean: DVector<f64>,
    /// Joint covariance, `h` block first.
    pub covariance: DMatrix<f64>,
}

impl ExactPosterior {
    pub fn h_variances(&self) -> DVector<f64> {
        let n = self.h_mean.len();
        DVector::from_fn(n, |i, _| self.covariance[(i, i)])
    }

    pub fn beta_variances(&self) -> DVector<f64> {
        let n = self.h_mean.len();
        DVector::from_fn(self.beta_mean.len(), |j, _| self.covariance[(n + j, n + j)])
    }
}

/// Posterior mean of `(h, beta)` under a flat prior on `beta`.
pub fn exact_gaussian_oracle(
    data: &Dataset,
    k: &KernelMatrix,
    sigma2: f64,
    tau: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let post = exact_gaussian_posterior(data, k, sigma2, tau, &PriorSpec::Flat)?;
    Ok((post.h_mean, post.beta_mean))
}

/// Full joint posterior of `(h, beta)`; an informative prior contributes
/// its Gaussian `beta` term, a flat prior none.
pub fn exact_gaussian_posterior(
    data: &Dataset,
    k: &KernelMatrix,
    sigma2: f64,
    tau: f64,
    prior: &PriorSpec,
) -> Result<ExactPosterior> {
    let (n, p) = (data.n(), data.p());
    if n > ORACLE_MAX_N {
        return Err(Error::input(format!(
            "dense oracle limited to n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    if !(sigma2 > 0.0 && tau > 0.0) {
        return Err(Error::input("oracle variances must be positive"));
    }
    let k_inv = k
        .matrix()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::internal("oracle: kernel is singular"))?;
    let x = data.x();
    let y = data.y();

    let dim = n + p;
    let mut precision = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);

    let hh = DMatrix::identity(n, n) / sigma2 + k_inv / tau;
    precision.view_mut((0, 0), (n, n)).copy_from(&hh);
    let hb = x / sigma2;
    precision.view_mut((0, n), (n, p)).copy_from(&hb);
    precision.view_mut((n, 0), (p, n)).copy_from(&hb.transpose());
    let mut bb = x.transpose() * x / sigma2;
    rhs.rows_mut(0, n).copy_from(&(y / sigma2));
    let mut rb = x.transpose() * y / sigma2;
    if let PriorSpec::Informative(pr) = prior {
        let prior_prec = pr
            .sigma
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::input("oracle: prior covariance is singular"))?;
        rb += &prior_prec * &pr.mu;
        bb += prior_prec;
    }
    precision.view_mut((n, n), (p, p)).copy_from(&bb);
    rhs.rows_mut(n, p).copy_from(&rb);

    let lu = precision.lu();
    let mean = lu
        .solve(&rhs)
        .ok_or_else(|| Error::internal("oracle: joint precision is singular"))?;
    let covariance = lu
        .try_inverse()
        .ok_or_else(|| Error::internal("oracle: joint precision is singular"))?;
    Ok(ExactPosterior {
        h_mean: mean.rows(0, n).into_owned(),
        beta_mean: mean.rows(n, p).into_owned(),
        covariance,
    })
}
