//! Closed-form coordinate updates on a dense state.
//!
//! These are the reference implementations: every `K^-1` product goes
//! through [`KernelMatrix::solve`] and every other inverse through a
//! Cholesky factorization. [`super::fit`] runs the same updates in the
//! eigenbasis of `K`; the two routes are checked against each other.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg;
use crate::model::{Dataset, PriorSpec, VariationalPosterior};

use super::objective::trace_xsxt;

/// `tr(Sigma_h + X Sigma_beta X') + r'r` with `r = y - mu_h - X mu_beta`.
pub(crate) fn sigma2_discrepancy(state: &VariationalPosterior, data: &Dataset) -> Result<f64> {
    check_shapes(state, data)?;
    let r = data.y() - &state.mu_h - data.x() * &state.mu_beta;
    Ok(state.sigma_h.trace() + trace_xsxt(data.x(), &state.sigma_beta) + r.norm_squared())
}

/// `tr(K^-1 Sigma_h) + mu_h' K^-1 mu_h`.
pub(crate) fn tau_discrepancy(state: &VariationalPosterior, k: &KernelMatrix) -> Result<f64> {
    let tr = k.solve(&state.sigma_h)?.trace();
    let quad = state.mu_h.dot(&k.solve(&state.mu_h)?);
    Ok(tr + quad)
}

pub(crate) fn sigma2_scale_from(d: f64, n: usize, prior: &PriorSpec) -> Result<f64> {
    let (nu_q, _) = prior.posterior_dof(n)?;
    Ok(match prior {
        PriorSpec::Informative(pr) => (d + pr.nu_sigma * pr.sigma0_sq) / nu_q,
        PriorSpec::Flat => d / nu_q,
    })
}

pub(crate) fn tau_scale_from(d: f64, n: usize, prior: &PriorSpec) -> Result<f64> {
    let (_, nu_q) = prior.posterior_dof(n)?;
    Ok(match prior {
        PriorSpec::Informative(pr) => (d + pr.nu_tau * pr.tau0) / nu_q,
        PriorSpec::Flat => d / nu_q,
    })
}

/// New scale of `q(sigma^2)`.
pub fn update_sigma2(state: &VariationalPosterior, data: &Dataset, prior: &PriorSpec) -> Result<f64> {
    let d = sigma2_discrepancy(state, data)?;
    sigma2_scale_from(d, data.n(), prior)
}

/// New scale of `q(tau)`.
pub fn update_tau(
    state: &VariationalPosterior,
    data: &Dataset,
    prior: &PriorSpec,
    k: &KernelMatrix,
) -> Result<f64> {
    if k.dim() != data.n() {
        return Err(Error::input(format!(
            "kernel is {}x{} but the dataset has {} subjects",
            k.dim(),
            k.dim(),
            data.n()
        )));
    }
    let d = tau_discrepancy(state, k)?;
    tau_scale_from(d, data.n(), prior)
}

/// New `(mu_h, Sigma_h)`:
/// `Sigma_h = (I / s + K^-1 / t)^-1`, `mu_h = Sigma_h (y - X mu_beta) / s`.
pub fn update_h(
    state: &VariationalPosterior,
    data: &Dataset,
    k: &KernelMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (s, t) = positive_scales(state)?;
    let n = data.n();
    if k.dim() != n {
        return Err(Error::input("kernel and dataset sizes differ"));
    }
    let mut k_inv = k.solve(&DMatrix::identity(n, n))?;
    linalg::symmetrize_in_place(&mut k_inv);
    let mut precision = k_inv / t;
    for i in 0..n {
        precision[(i, i)] += 1.0 / s;
    }
    let chol = linalg::cholesky(&precision, "q(h) precision", false)?;
    let resid = data.y() - data.x() * &state.mu_beta;
    let mu_h = chol.solve(&resid) / s;
    let mut sigma_h = chol.inverse();
    linalg::symmetrize_in_place(&mut sigma_h);
    Ok((mu_h, sigma_h))
}

/// New `(mu_beta, Sigma_beta)` given the current `mu_h` and `q(sigma^2)` scale.
pub fn update_beta(
    state: &VariationalPosterior,
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (s, _) = positive_scales(state)?;
    check_shapes(state, data)?;
    let xtx = data.x().transpose() * data.x();
    beta_update(&xtx, data.x(), data.y(), &state.mu_h, s, prior)
}

/// Shared `q(beta)` update; `xtx` is `X'X`.
pub(crate) fn beta_update(
    xtx: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    mu_h: &DVector<f64>,
    s: f64,
    prior: &PriorSpec,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let xtd = x.transpose() * (y - mu_h);
    match prior {
        PriorSpec::Informative(pr) => {
            let prior_chol = linalg::cholesky(&pr.sigma, "prior covariance", true)?;
            let prior_prec = {
                let mut m = prior_chol.inverse();
                linalg::symmetrize_in_place(&mut m);
                m
            };
            let precision = xtx / s + &prior_prec;
            let chol = linalg::cholesky(&precision, "q(beta) precision", false)?;
            let rhs = xtd / s + prior_chol.solve(&pr.mu);
            let mu = chol.solve(&rhs);
            let mut sigma = chol.inverse();
            linalg::symmetrize_in_place(&mut sigma);
            Ok((mu, sigma))
        }
        PriorSpec::Flat => {
            let chol = linalg::cholesky(xtx, "X'X", true)?;
            let mu = chol.solve(&xtd);
            let mut sigma = chol.inverse() * s;
            linalg::symmetrize_in_place(&mut sigma);
            Ok((mu, sigma))
        }
    }
}

/// Applies `update_h` then `update_beta` repeatedly with the scales of
/// `q(sigma^2)` and `q(tau)` held fixed, until the largest relative change
/// in either mean drops below `tol`. Returns the state and the number of
/// sweeps taken.
pub fn iterate_means(
    mut state: VariationalPosterior,
    data: &Dataset,
    prior: &PriorSpec,
    k: &KernelMatrix,
    tol: f64,
    max_sweeps: usize,
) -> Result<(VariationalPosterior, usize)> {
    for sweep in 1..=max_sweeps {
        let (mu_h, sigma_h) = update_h(&state, data, k)?;
        let change_h = rel_change(&state.mu_h, &mu_h);
        state.mu_h = mu_h;
        state.sigma_h = sigma_h;
        let (mu_beta, sigma_beta) = update_beta(&state, data, prior)?;
        let change_b = rel_change(&state.mu_beta, &mu_beta);
        state.mu_beta = mu_beta;
        state.sigma_beta = sigma_beta;
        if change_h.max(change_b) < tol {
            return Ok((state, sweep));
        }
    }
    Ok((state, max_sweeps))
}

fn rel_change(old: &DVector<f64>, new: &DVector<f64>) -> f64 {
    (old - new).amax() / new.amax().max(1e-300)
}

fn positive_scales(state: &VariationalPosterior) -> Result<(f64, f64)> {
    let (s, t) = (state.scale_sigma_q, state.scale_tau_q);
    if !(s > 0.0 && s.is_finite() && t > 0.0 && t.is_finite()) {
        return Err(Error::input(format!(
            "variational scales must be positive, got sigma^2 scale {s}, tau scale {t}"
        )));
    }
    Ok((s, t))
}

fn check_shapes(state: &VariationalPosterior, data: &Dataset) -> Result<()> {
    let (n, p) = (data.n(), data.p());
    if state.mu_h.len() != n
        || state.sigma_h.shape() != (n, n)
        || state.mu_beta.len() != p
        || state.sigma_beta.shape() != (p, p)
    {
        return Err(Error::input(format!(
            "state shapes do not match data with n = {n}, p = {p}"
        )));
    }
    Ok(())
}
