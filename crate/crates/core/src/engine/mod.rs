//! Coordinate-ascent mean-field VI for both prior flavors.
//!
//! Each iteration updates, in order, the scale of `q(sigma^2)`, the scale of
//! `q(tau)`, `q(h)` and `q(beta)`, then records the KL objective. Every
//! update is the exact minimizer of the objective over its block, so the
//! recorded sequence is non-increasing.

mod objective;
mod spectral;
mod updates;


use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::elicitation;
use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::model::{
    sinvchi2_mode, wald_intervals, ConvergenceTrace, Dataset, Interval, PriorSpec, VariationalPosterior,
};

pub use objective::kl_objective;
pub use updates::{iterate_means, update_beta, update_h, update_sigma2, update_tau};

/// Starting values for `q(beta)`; `q(h)` always starts at `N(0, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `mu_beta = 0`, `Sigma_beta = I`.
    Zeros,
    /// Prior mean and covariance (informative) or the OLS fit (flat).
    #[default]
    OlsStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Absolute change in the objective below which the loop stops.
    pub tolerance: f64,
    /// Iterations completed before the convergence test is first applied.
    pub burn_in: usize,
    pub init_strategy: InitStrategy,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-2,
            burn_in: 10,
            init_strategy: InitStrategy::OlsStart,
        }
    }
}

impl FitConfig {
    /// Settings used for the run-time comparison (`tolerance = 1e-6`).
    pub fn timing() -> Self {
        Self {
            tolerance: 1e-6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::input("max_iterations must be positive"));
        }
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::input(format!("tolerance must be non-negative, got {}", self.tolerance)));
        }
        if self.burn_in >= self.max_iterations {
            return Err(Error::input(format!(
                "burn_in ({}) must be less than max_iterations ({})",
                self.burn_in, self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub posterior: VariationalPosterior,
    pub trace: ConvergenceTrace,
    /// Mode of the fitted `q(sigma^2)`.
    pub sigma2_map: f64,
    pub prior_used: PriorSpec,
}

impl FitResult {
    pub fn beta_intervals(&self, level: f64) -> Result<Vec<Interval>> {
        wald_intervals(&self.posterior.mu_beta, &self.posterior.sigma_beta, level)
    }

    /// Pointwise intervals for `h` from the marginal variances of `q(h)`.
    pub fn h_intervals(&self, level: f64) -> Result<Vec<Interval>> {
        let z = crate::model::z_multiplier(level)?;
        let sd = self.posterior.h_sd();
        Ok(self
            .posterior
            .mu_h
            .iter()
            .zip(sd.iter())
            .map(|(m, s)| Interval::new(m - z * s, m + z * s))
            .collect())
    }
}

/// Which implementation of the coordinate updates drives the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitRoute {
    /// Updates in the eigenbasis of `K`; `O(n^2)` per iteration.
    Spectral,
    /// Dense Cholesky-based updates; `O(n^3)` per iteration.
    Dense,
}

pub(crate) trait CoordinateState {
    fn update_sigma2(&mut self) -> Result<()>;
    fn update_tau(&mut self) -> Result<()>;
    fn update_h(&mut self) -> Result<()>;
    fn update_beta(&mut self) -> Result<()>;
    fn objective(&self) -> Result<f64>;
    fn into_posterior(self) -> VariationalPosterior;
}

/// Fits the model by coordinate ascent until the objective changes by less
/// than `config.tolerance` (tested only after `config.burn_in` iterations)
/// or `config.max_iterations` is reached.
pub fn fit(data: &Dataset, prior: &PriorSpec, k: &KernelMatrix, config: &FitConfig) -> Result<FitResult> {
    fit_detailed(data, prior, k, config, FitRoute::Spectral, false).map(|(res, _)| res)
}

/// [`fit`] with a choice of route. With `record_blocks`, also returns the
/// objective at the initial state and after every single block update.
pub fn fit_detailed(
    data: &Dataset,
    prior: &PriorSpec,
    k: &KernelMatrix,
    config: &FitConfig,
    route: FitRoute,
    record_blocks: bool,
) -> Result<(FitResult, Vec<f64>)> {
    config.validate()?;
    check_inputs(data, prior, k)?;
    let (mu_beta, sigma_beta) = initial_beta(data, prior, config.init_strategy)?;
    match route {
        FitRoute::Spectral => {
            let state = spectral::SpectralState::new(data, prior, k, mu_beta, sigma_beta)?;
            run(state, prior, config, record_blocks)
        }
        FitRoute::Dense => {
            let state = DenseState::new(data, prior, k, mu_beta, sigma_beta)?;
            run(state, prior, config, record_blocks)
        }
    }
}

fn run<S: CoordinateState>(
    mut state: S,
    prior: &PriorSpec,
    config: &FitConfig,
    record_blocks: bool,
) -> Result<(FitResult, Vec<f64>)> {
    let mut trace = ConvergenceTrace {
        objective_values: Vec::new(),
        iterations: 0,
        converged: false,
        criterion: config.tolerance,
        burn_in: config.burn_in,
        max_iterations: config.max_iterations,
    };
    let mut blocks = Vec::new();
    if record_blocks {
        blocks.push(state.objective()?);
    }

    for iteration in 1..=config.max_iterations {
        let steps: [fn(&mut S) -> Result<()>; 4] =
            [S::update_sigma2, S::update_tau, S::update_h, S::update_beta];
        for step in steps {
            step(&mut state).map_err(|e| with_trace(e, &trace))?;
            if record_blocks {
                blocks.push(state.objective().map_err(|e| with_trace(e, &trace))?);
            }
        }
        let value = state.objective().map_err(|e| with_trace(e, &trace))?;
        trace.iterations = iteration;
        trace.objective_values.push(value);
        if !value.is_finite() {
            return Err(Error::Fit {
                message: format!("objective became non-finite at iteration {iteration}"),
                trace: Box::new(trace),
            });
        }
        if iteration > config.burn_in && iteration >= 2 {
            let prev = trace.objective_values[iteration - 2];
            if (value - prev).abs() < config.tolerance {
                trace.converged = true;
                break;
            }
        }
    }

    let posterior = state.into_posterior();
    let sigma2_map = sinvchi2_mode(posterior.nu_sigma_q, posterior.scale_sigma_q)
        .map_err(|e| with_trace(e, &trace))?;
    Ok((
        FitResult {
            posterior,
            trace,
            sigma2_map,
            prior_used: prior.clone(),
        },
        blocks,
    ))
}

/// Numerical failures inside the loop surface as fit errors with the trace so far.
fn with_trace(err: Error, trace: &ConvergenceTrace) -> Error {
    match err {
        Error::Internal(message) => Error::Fit {
            message,
            trace: Box::new(trace.clone()),
        },
        other => other,
    }
}

fn check_inputs(data: &Dataset, prior: &PriorSpec, k: &KernelMatrix) -> Result<()> {
    if k.dim() != data.n() {
        return Err(Error::input(format!(
            "kernel is {}x{} but the dataset has {} subjects",
            k.dim(),
            k.dim(),
            data.n()
        )));
    }
    if let PriorSpec::Informative(pr) = prior {
        pr.validate(data.p())?;
    }
    prior.posterior_dof(data.n())?;
    Ok(())
}

fn initial_beta(
    data: &Dataset,
    prior: &PriorSpec,
    strategy: InitStrategy,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = data.p();
    match (strategy, prior) {
        (InitStrategy::Zeros, _) => Ok((DVector::zeros(p), DMatrix::identity(p, p))),
        (InitStrategy::OlsStart, PriorSpec::Informative(pr)) => Ok((pr.mu.clone(), pr.sigma.clone())),
        (InitStrategy::OlsStart, PriorSpec::Flat) => {
            let (coef, xtx_inv) = elicitation::least_squares(data.x(), data.y())?;
            let resid = data.y() - data.x() * &coef;
            let s2 = resid.norm_squared() / (data.n() - p) as f64;
            // A noiseless fit would give a zero covariance; keep it PD.
            let cov = if s2 > 0.0 { xtx_inv * s2 } else { xtx_inv };
            Ok((coef, cov))
        }
    }
}

/// Initial dense state: `q(h) = N(0, I)`, scales at 1 until the first
/// `sigma^2` and `tau` updates overwrite them.
pub fn initial_state(
    data: &Dataset,
    prior: &PriorSpec,
    config: &FitConfig,
) -> Result<VariationalPosterior> {
    let (mu_beta, sigma_beta) = initial_beta(data, prior, config.init_strategy)?;
    let (nu_sigma_q, nu_tau_q) = prior.posterior_dof(data.n())?;
    let n = data.n();
    Ok(VariationalPosterior {
        mu_beta,
        sigma_beta,
        mu_h: DVector::zeros(n),
        sigma_h: DMatrix::identity(n, n),
        nu_sigma_q,
        scale_sigma_q: 1.0,
        nu_tau_q,
        scale_tau_q: 1.0,
    })
}

struct DenseState<'a> {
    data: &'a Dataset,
    prior: &'a PriorSpec,
    k: &'a KernelMatrix,
    state: VariationalPosterior,
}

impl<'a> DenseState<'a> {
    fn new(
        data: &'a Dataset,
        prior: &'a PriorSpec,
        k: &'a KernelMatrix,
        mu_beta: DVector<f64>,
        sigma_beta: DMatrix<f64>,
    ) -> Result<Self> {
        let n = data.n();
        let (nu_sigma_q, nu_tau_q) = prior.posterior_dof(n)?;
        Ok(Self {
            data,
            prior,
            k,
            state: VariationalPosterior {
                mu_beta,
                sigma_beta,
                mu_h: DVector::zeros(n),
                sigma_h: DMatrix::identity(n, n),
                nu_sigma_q,
                scale_sigma_q: 1.0,
                nu_tau_q,
                scale_tau_q: 1.0,
            },
        })
    }
}

impl CoordinateState for DenseState<'_> {
    fn update_sigma2(&mut self) -> Result<()> {
        self.state.scale_sigma_q = update_sigma2(&self.state, self.data, self.prior)?;
        Ok(())
    }

    fn update_tau(&mut self) -> Result<()> {
        self.state.scale_tau_q = update_tau(&self.state, self.data, self.prior, self.k)?;
        Ok(())
    }

    fn update_h(&mut self) -> Result<()> {
        let (mu, sigma) = update_h(&self.state, self.data, self.k)?;
        self.state.mu_h = mu;
        self.state.sigma_h = sigma;
        Ok(())
    }

    fn update_beta(&mut self) -> Result<()> {
        let (mu, sigma) = update_beta(&self.state, self.data, self.prior)?;
        self.state.mu_beta = mu;
        self.state.sigma_beta = sigma;
        Ok(())
    }

    fn objective(&self) -> Result<f64> {
        kl_objective(&self.state, self.data, self.prior, self.k)
    }

    fn into_posterior(self) -> VariationalPosterior {
        self.state
    }
}
