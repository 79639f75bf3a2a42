//! Synthetic population with a known, strongly non-Gaussian pollutant effect.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ExposureMatrix;
use crate::serde_util;

/// Pollutant columns, in exposure-matrix order.
pub const POLLUTANTS: [&str; 4] = ["Se", "Cd", "Pb", "Hg"];

/// Draws of a single pollutant that failed the positivity check before a
/// valid value was produced; beyond this the `PopulationSpec` is rejected.
const MAX_REDRAWS: usize = 1000;

/// The true pollutant effect `Se/100 + Cd*Pb + 1/Hg - 3`.
pub fn pollutant_effect(se: f64, cd: f64, pb: f64, hg: f64) -> f64 {
    se / 100.0 + cd * pb + 1.0 / hg - 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    /// Population size `N`.
    pub size: usize,
    /// Standard-normal covariates besides the intercept.
    pub n_covariates: usize,
    /// Target marginal means of (Se, Cd, Pb, Hg).
    pub pollutant_means: [f64; 4],
    /// Standard deviation of each log-pollutant.
    pub pollutant_log_sds: [f64; 4],
    /// Length `n_covariates + 1`; the first entry is the intercept.
    #[serde(with = "serde_util::dvector")]
    pub beta_true: DVector<f64>,
    pub sigma_true: f64,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            size: 5000,
            n_covariates: 5,
            pollutant_means: [190.0, 0.45, 1.1, 1.2],
            pollutant_log_sds: [1.0; 4],
            beta_true: DVector::from_vec(vec![120.0, 1.0, -1.0, 0.5, -0.5, 2.0]),
            sigma_true: 18.25,
            seed: 20190101,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beta_true.len() != self.n_covariates + 1 {
            return Err(Error::input(format!(
                "beta_true has {} entries but there are {} covariates plus an intercept",
                self.beta_true.len(),
                self.n_covariates
            )));
        }
        if self.size < self.n_covariates + 3 {
            return Err(Error::input(format!("population size {} is too small", self.size)));
        }
        if self.pollutant_means.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::input("pollutant means must be positive"));
        }
        if self.pollutant_log_sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::input("pollutant log standard deviations must be positive"));
        }
        if !(self.sigma_true > 0.0 && self.sigma_true.is_finite()) {
            return Err(Error::input("sigma_true must be positive"));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::input("beta_true has non-finite entries"));
        }
        Ok(())
    }

    /// Log-scale location giving the requested marginal mean.
    fn log_location(mean: f64, log_sd: f64) -> f64 {
        mean.ln() - 0.5 * log_sd * log_sd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// `N x (n_covariates + 1)`, intercept first.
    pub x: DMatrix<f64>,
    /// `N x 4` raw pollutant levels.
    pub z: DMatrix<f64>,
    pub h: DVector<f64>,
    pub y: DVector<f64>,
    pub beta_true: DVector<f64>,
    pub sigma_true: f64,
    /// Pollutant draws rejected by the positivity check.
    pub redraws: usize,
}

impl Population {
    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn exposures(&self, rows: &[usize]) -> Result<ExposureMatrix> {
        ExposureMatrix::new(self.z.select_rows(rows))
    }
}

pub fn generate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let n = spec.size;
    let p = spec.n_covariates + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dists: Vec<LogNormal<f64>> = spec
        .pollutant_means
        .iter()
        .zip(&spec.pollutant_log_sds)
        .map(|(&m, &sd)| LogNormal::new(PopulationSpec::log_location(m, sd), sd))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::input(format!("pollutant distribution: {e}")))?;

    let mut x = DMatrix::zeros(n, p);
    let mut z = DMatrix::zeros(n, 4);
    let mut h = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut redraws = 0;
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 1..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
        for (j, dist) in dists.iter().enumerate() {
            z[(i, j)] = draw_positive(dist, &mut rng, &mut redraws)?;
        }
        h[i] = pollutant_effect(z[(i, 0)], z[(i, 1)], z[(i, 2)], z[(i, 3)]);
        let eps: f64 = rng.sample(StandardNormal);
        y[i] = h[i] + (x.row(i) * &spec.beta_true)[0] + spec.sigma_true * eps;
    }
    if redraws > 0 {
        log::info!("{redraws} non-positive pollutant draws were regenerated");
    }
    Ok(Population {
        x,
        z,
        h,
        y,
        beta_true: spec.beta_true.clone(),
        sigma_true: spec.sigma_true,
        redraws,
    })
}

/// Redraws until the value is strictly positive with a finite reciprocal.
fn draw_positive<D: Distribution<f64>>(dist: &D, rng: &mut ChaCha8Rng, redraws: &mut usize) -> Result<f64> {
    for _ in 0..=MAX_REDRAWS {
        let v = dist.sample(rng);
        if v > 0.0 && v.is_finite() && (1.0 / v).is_finite() {
            return Ok(v);
        }
        *redraws += 1;
    }
    Err(Error::input("pollutant generator keeps producing non-positive values"))
}

/// Equal-width histogram of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::input("histogram needs at least one bin"));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("histogram needs finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|b| if b == bins { hi } else { lo + b as f64 * width })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}
