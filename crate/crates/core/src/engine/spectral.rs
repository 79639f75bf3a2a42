//! Coordinate updates carried out in the eigenbasis of `K`.
//!
//! With `K = U diag(lambda) U'` and `Sigma_h` initialized to the identity,
//! every `Sigma_h` produced by the `h` update shares the eigenvectors of
//! `K`: `Sigma_h = U diag(g) U'` with `g_i = 1 / (1/s + 1/(t lambda_i))`.
//! Traces, log-determinants and `K^-1` quadratic forms then reduce to sums
//! over `g` and `w = U' mu_h`, so an iteration costs two `n x n`
//! matrix-vector products instead of a factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kernel::KernelMatrix;
use crate::linalg;
use crate::model::{Dataset, PriorSpec, VariationalPosterior};

use super::objective::{self, ObjectiveTerms};
use super::updates;
use super::CoordinateState;

pub(crate) struct SpectralState<'a> {
    data: &'a Dataset,
    prior: &'a PriorSpec,
    u: &'a DMatrix<f64>,
    lambda: &'a DVector<f64>,
    xtx: DMatrix<f64>,
    mu_beta: DVector<f64>,
    sigma_beta: DMatrix<f64>,
    mu_h: DVector<f64>,
    /// `U' mu_h`
    w: DVector<f64>,
    /// Eigenvalues of `Sigma_h` in the basis `U`.
    g: DVector<f64>,
    nu_sigma: f64,
    nu_tau: f64,
    s: f64,
    t: f64,
}

impl<'a> SpectralState<'a> {
    /// Starts from `Sigma_h = I`, `mu_h = 0` and the given `q(beta)`.
    pub(crate) fn new(
        data: &'a Dataset,
        prior: &'a PriorSpec,
        k: &'a KernelMatrix,
        mu_beta: DVector<f64>,
        sigma_beta: DMatrix<f64>,
    ) -> Result<Self> {
        let n = data.n();
        let (nu_sigma, nu_tau) = prior.posterior_dof(n)?;
        Ok(Self {
            data,
            prior,
            u: k.eigenvectors(),
            lambda: k.eigenvalues(),
            xtx: data.x().transpose() * data.x(),
            mu_beta,
            sigma_beta,
            mu_h: DVector::zeros(n),
            w: DVector::zeros(n),
            g: DVector::from_element(n, 1.0),
            nu_sigma,
            nu_tau,
            s: 1.0,
            t: 1.0,
        })
    }

    fn d_sigma(&self) -> f64 {
        let r = self.data.y() - &self.mu_h - self.data.x() * &self.mu_beta;
        self.g.sum() + linalg::trace_of_product(&self.sigma_beta, &self.xtx) + r.norm_squared()
    }

    fn d_tau(&self) -> f64 {
        self.g
            .iter()
            .zip(self.w.iter())
            .zip(self.lambda.iter())
            .map(|((g, w), l)| (g + w * w) / l)
            .sum()
    }
}

impl CoordinateState for SpectralState<'_> {
    fn update_sigma2(&mut self) -> Result<()> {
        self.s = updates::sigma2_scale_from(self.d_sigma(), self.data.n(), self.prior)?;
        Ok(())
    }

    fn update_tau(&mut self) -> Result<()> {
        self.t = updates::tau_scale_from(self.d_tau(), self.data.n(), self.prior)?;
        Ok(())
    }

    fn update_h(&mut self) -> Result<()> {
        let (s, t) = (self.s, self.t);
        self.g = self.lambda.map(|l| 1.0 / (1.0 / s + 1.0 / (t * l)));
        let resid = self.data.y() - self.data.x() * &self.mu_beta;
        let rotated = self.u.tr_mul(&resid);
        self.w = self.g.component_mul(&rotated) / s;
        self.mu_h = self.u * &self.w;
        Ok(())
    }

    fn update_beta(&mut self) -> Result<()> {
        let (mu, sigma) = updates::beta_update(
            &self.xtx,
            self.data.x(),
            self.data.y(),
            &self.mu_h,
            self.s,
            self.prior,
        )?;
        self.mu_beta = mu;
        self.sigma_beta = sigma;
        Ok(())
    }

    fn objective(&self) -> Result<f64> {
        let chol_beta = linalg::cholesky(&self.sigma_beta, "Sigma_q(beta)", false)?;
        let terms = ObjectiveTerms {
            n: self.data.n() as f64,
            logdet_sigma_beta: linalg::chol_logdet(&chol_beta),
            logdet_sigma_h: self.g.iter().map(|g| g.ln()).sum(),
            scale_sigma: self.s,
            scale_tau: self.t,
            d_sigma: self.d_sigma(),
            d_tau: self.d_tau(),
            prior_quad: objective::prior_quadratic(&self.mu_beta, &self.sigma_beta, self.prior)?,
        };
        Ok(objective::assemble(&terms, self.prior))
    }

    fn into_posterior(self) -> VariationalPosterior {
        let mut scaled = self.u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.g[j];
        }
        let mut sigma_h = scaled * self.u.transpose();
        linalg::symmetrize_in_place(&mut sigma_h);
        VariationalPosterior {
            mu_beta: self.mu_beta,
            sigma_beta: self.sigma_beta,
            mu_h: self.mu_h,
            sigma_h,
            nu_sigma_q: self.nu_sigma,
            scale_sigma_q: self.s,
            nu_tau_q: self.nu_tau,
            scale_tau_q: self.t,
        }
    }
}
