//! Model data, priors, variational state and the scaled-inverse-chi-squared
//! helpers shared by both prior flavors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernel::ExposureMatrix;
use crate::linalg;
use crate::serde_util;

/// One cross-sectional dataset: response, covariate design and exposures.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: ExposureMatrix,
}

impl Dataset {
    /// Validates dimensions, finiteness and full column rank of `x`.
    ///
    /// The design matrix is used as given; callers that want an intercept
    /// must include the column of ones themselves.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: ExposureMatrix) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        if x.nrows() != n || z.n_subjects() != n {
            return Err(Error::input(format!(
                "row mismatch: y has {n}, X has {}, Z has {}",
                x.nrows(),
                z.n_subjects()
            )));
        }
        if p == 0 {
            return Err(Error::input("design matrix has no columns"));
        }
        if n < p + 2 {
            return Err(Error::input(format!("need n >= p + 2, got n = {n}, p = {p}")));
        }
        if !linalg::all_finite_vec(&y) {
            return Err(Error::input("response has non-finite values"));
        }
        if !linalg::all_finite_mat(&x) {
            return Err(Error::input("design matrix has non-finite values"));
        }
        if !linalg::has_full_column_rank(&x) {
            return Err(Error::input("design matrix is not of full column rank"));
        }
        Ok(Self { y, x, z })
    }

    /// Skips validation; for hand-sized unit checks (e.g. `n = 1`).
    #[cfg(test)]
    pub(crate) fn new_unchecked(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Self {
        Self {
            y,
            x,
            z: ExposureMatrix::from_raw(z),
        }
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &ExposureMatrix {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.y.select_rows(indices),
            self.x.select_rows(indices),
            self.z.select_rows(indices)?,
        )
    }
}

/// Prior hyperparameters for the informative flavor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformativePrior {
    /// Prior mean of the coefficients.
    #[serde(with = "serde_util::dvector")]
    pub mu: DVector<f64>,
    /// Prior covariance of the coefficients; must be positive definite.
    #[serde(with = "serde_util::dmatrix")]
    pub sigma: DMatrix<f64>,
    pub nu_sigma: f64,
    pub sigma0_sq: f64,
    pub nu_tau: f64,
    pub tau0: f64,
}

impl InformativePrior {
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.mu.len() != p || self.sigma.nrows() != p || self.sigma.ncols() != p {
            return Err(Error::input(format!(
                "prior has dimension {} (Sigma {}x{}) but the design has {p} columns",
                self.mu.len(),
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        for (name, v) in [
            ("nu_sigma", self.nu_sigma),
            ("sigma0_sq", self.sigma0_sq),
            ("nu_tau", self.nu_tau),
            ("tau0", self.tau0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("prior {name} must be positive, got {v}")));
            }
        }
        if !linalg::all_finite_vec(&self.mu) {
            return Err(Error::input("prior mean has non-finite entries"));
        }
        linalg::cholesky(&self.sigma, "prior covariance", true)?;
        Ok(())
    }
}

/// Prior specification. The flat flavor carries no hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flavor", rename_all = "lowercase")]
pub enum PriorSpec {
    Informative(InformativePrior),
    Flat,
}

impl PriorSpec {
    pub fn is_flat(&self) -> bool {
        matches!(self, PriorSpec::Flat)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorSpec::Informative(_) => "informative",
            PriorSpec::Flat => "flat",
        }
    }

    /// Degrees of freedom of `q(sigma^2)` and `q(tau)` for `n` subjects.
    pub fn posterior_dof(&self, n: usize) -> Result<(f64, f64)> {
        let n = n as f64;
        match self {
            PriorSpec::Informative(pr) => Ok((n + pr.nu_sigma, n + pr.nu_tau)),
            PriorSpec::Flat => {
                if n <= 2.0 {
                    return Err(Error::input(format!(
                        "flat priors need n > 2 for positive degrees of freedom, got n = {n}"
                    )));
                }
                Ok((n - 2.0, n - 2.0))
            }
        }
    }
}

/// Parameters of the factored approximation
/// `q(beta) q(h) q(sigma^2) q(tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalPosterior {
    #[serde(with = "serde_util::dvector")]
    pub mu_beta: DVector<f64>,
    #[serde(with = "serde_util::dmatrix")]
    pub sigma_beta: DMatrix<f64>,
    #[serde(with = "serde_util::dvector")]
    pub mu_h: DVector<f64>,
    #[serde(with = "serde_util::dmatrix")]
    pub sigma_h: DMatrix<f64>,
    pub nu_sigma_q: f64,
    pub scale_sigma_q: f64,
    pub nu_tau_q: f64,
    pub scale_tau_q: f64,
}

impl VariationalPosterior {
    pub fn beta_sd(&self) -> DVector<f64> {
        self.sigma_beta.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn h_sd(&self) -> DVector<f64> {
        self.sigma_h.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// History of the tracked KL objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// Objective after each completed iteration, up to an additive constant.
    pub objective_values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub criterion: f64,
    pub burn_in: usize,
    pub max_iterations: usize,
}

/// Mode of Scale-Inv-chi^2(nu, scale): `nu * scale / (nu + 2)`.
pub fn sinvchi2_mode(nu: f64, scale: f64) -> Result<f64> {
    check_sinvchi2(nu, scale)?;
    if nu.is_infinite() {
        return Ok(scale);
    }
    Ok(nu * scale / (nu + 2.0))
}

/// `E[1/x]` under the update convention used by the coordinate ascent:
/// the reciprocal of the scale, whatever the degrees of freedom.
pub fn sinvchi2_mean_inverse(nu: f64, scale: f64) -> Result<f64> {
    check_sinvchi2(nu, scale)?;
    Ok(1.0 / scale)
}

fn check_sinvchi2(nu: f64, scale: f64) -> Result<()> {
    if !(nu > 0.0) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::input(format!(
            "scaled-inverse-chi^2 needs nu > 0 and scale > 0, got nu = {nu}, scale = {scale}"
        )));
    }
    Ok(())
}

/// Closed interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn unbounded() -> Self {
        Self::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Two-sided normal multiplier for `level`. 95% uses 1.96 exactly.
pub fn z_multiplier(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::input(format!("level must be in (0, 1), got {level}")));
    }
    if level == 0.95 {
        return Ok(1.96);
    }
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std_normal.inverse_cdf(0.5 * (1.0 + level)))
}

/// Per-coordinate Wald intervals `mean_j +- z * sqrt(cov_jj)`.
///
/// `cov` must be symmetric positive semi-definite; a zero covariance gives
/// zero-width intervals.
pub fn wald_intervals(mean: &DVector<f64>, cov: &DMatrix<f64>, level: f64) -> Result<Vec<Interval>> {
    let z = z_multiplier(level)?;
    let p = mean.len();
    if cov.nrows() != p || cov.ncols() != p {
        return Err(Error::input(format!(
            "mean has length {p} but covariance is {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    check_psd(cov)?;
    Ok((0..p)
        .map(|j| {
            let hw = z * cov[(j, j)].sqrt();
            Interval::new(mean[j] - hw, mean[j] + hw)
        })
        .collect())
}

fn check_psd(cov: &DMatrix<f64>) -> Result<()> {
    if !linalg::all_finite_mat(cov) {
        return Err(Error::input("covariance has non-finite entries"));
    }
    if cov.diagonal().iter().any(|&d| d < 0.0) {
        return Err(Error::input("covariance has a negative variance"));
    }
    if nalgebra::Cholesky::new(cov.clone()).is_some() {
        return Ok(());
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    let mut sym = cov.clone();
    linalg::symmetrize_in_place(&mut sym);
    if (cov - &sym).amax() > 1e-8 * scale {
        return Err(Error::input("covariance is not symmetric"));
    }
    let min_eig = sym.symmetric_eigenvalues().min();
    if min_eig < -1e-10 * scale {
        return Err(Error::input(format!(
            "covariance is not positive semi-definite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}
