//! The tracked KL objective `E_q[ln q] - E_q[ln p(theta, y)]`, up to an
//! additive constant. All terms that depend only on the (fixed) degrees of
//! freedom are dropped.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernel::KernelMatrix;
use crate::linalg;
use crate::model::{Dataset, PriorSpec, VariationalPosterior};

use super::updates;

/// Scalar summaries of a state from which the objective is assembled.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ObjectiveTerms {
    pub n: f64,
    pub logdet_sigma_beta: f64,
    pub logdet_sigma_h: f64,
    pub scale_sigma: f64,
    pub scale_tau: f64,
    /// `tr(Sigma_h + X Sigma_beta X') + |y - mu_h - X mu_beta|^2`
    pub d_sigma: f64,
    /// `tr(K^-1 Sigma_h) + mu_h' K^-1 mu_h`
    pub d_tau: f64,
    /// `tr(Sigma^-1 Sigma_beta) + (mu_beta - mu)' Sigma^-1 (mu_beta - mu)`; zero for flat priors.
    pub prior_quad: f64,
}

pub(crate) fn assemble(terms: &ObjectiveTerms, prior: &PriorSpec) -> f64 {
    let ObjectiveTerms {
        n,
        logdet_sigma_beta,
        logdet_sigma_h,
        scale_sigma: s,
        scale_tau: t,
        d_sigma,
        d_tau,
        prior_quad,
    } = *terms;

    let neg_entropy = -0.5 * logdet_sigma_beta - 0.5 * logdet_sigma_h - s.ln() - t.ln();
    let expected_log_post = match prior {
        PriorSpec::Informative(pr) => {
            -(1.0 + 0.5 * (pr.nu_sigma + n)) * s.ln()
                - (1.0 + 0.5 * (pr.nu_tau + n)) * t.ln()
                - 0.5
                    * (d_sigma / s
                        + prior_quad
                        + d_tau / t
                        + pr.nu_sigma * pr.sigma0_sq / s
                        + pr.nu_tau * pr.tau0 / t)
        }
        PriorSpec::Flat => -0.5 * n * s.ln() - 0.5 * n * t.ln() - 0.5 * (d_sigma / s + d_tau / t),
    };
    neg_entropy - expected_log_post
}

/// `tr(Sigma^-1 Sigma_beta) + (mu_beta - mu)' Sigma^-1 (mu_beta - mu)`, or 0 for flat priors.
pub(crate) fn prior_quadratic(
    mu_beta: &DVector<f64>,
    sigma_beta: &DMatrix<f64>,
    prior: &PriorSpec,
) -> Result<f64> {
    match prior {
        PriorSpec::Flat => Ok(0.0),
        PriorSpec::Informative(pr) => {
            let chol = linalg::cholesky(&pr.sigma, "prior covariance", true)?;
            let diff = mu_beta - &pr.mu;
            let solved = chol.solve(&diff);
            let tr = chol.solve(sigma_beta).trace();
            Ok(tr + diff.dot(&solved))
        }
    }
}

/// KL objective of a dense state, with every `K^-1` product routed through
/// Cholesky solves and log-determinants taken from Cholesky pivots.
pub fn kl_objective(
    state: &VariationalPosterior,
    data: &Dataset,
    prior: &PriorSpec,
    k: &KernelMatrix,
) -> Result<f64> {
    let chol_beta = linalg::cholesky(&state.sigma_beta, "Sigma_q(beta)", false)?;
    let chol_h = linalg::cholesky(&state.sigma_h, "Sigma_q(h)", false)?;
    let terms = ObjectiveTerms {
        n: data.n() as f64,
        logdet_sigma_beta: linalg::chol_logdet(&chol_beta),
        logdet_sigma_h: linalg::chol_logdet(&chol_h),
        scale_sigma: state.scale_sigma_q,
        scale_tau: state.scale_tau_q,
        d_sigma: updates::sigma2_discrepancy(state, data)?,
        d_tau: updates::tau_discrepancy(state, k)?,
        prior_quad: prior_quadratic(&state.mu_beta, &state.sigma_beta, prior)?,
    };
    Ok(assemble(&terms, prior))
}

/// `tr(X S X')` without forming the `n x n` product.
pub(crate) fn trace_xsxt(x: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    (x * s).component_mul(x).sum()
}
