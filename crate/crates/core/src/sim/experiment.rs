//! Replicated subsample-and-fit experiment.

use std::time::Instant;

use nalgebra::DVector;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elicitation::elicit_priors;
use crate::engine::{fit, FitConfig, FitResult};
use crate::error::{Error, Result};
use crate::gls::{gls_correct, gls_intervals};
use crate::kernel::{build_kernel, DEFAULT_EPS_FLOOR};
use crate::model::{Dataset, Interval, PriorSpec};
use crate::sim::population::Population;
use crate::sim::report::{CoverageReport, TimingReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// VI with OLS-elicited informative priors.
    #[serde(rename = "VI1")]
    Vi1,
    /// VI with flat priors.
    #[serde(rename = "VI2")]
    Vi2,
    /// GLS correction of VI1.
    #[serde(rename = "GLS1")]
    Gls1,
    /// GLS correction of VI2.
    #[serde(rename = "GLS2")]
    Gls2,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vi1, Method::Vi2, Method::Gls1, Method::Gls2];

    pub fn label(self) -> &'static str {
        match self {
            Method::Vi1 => "VI1",
            Method::Vi2 => "VI2",
            Method::Gls1 => "GLS1",
            Method::Gls2 => "GLS2",
        }
    }

    pub fn is_gls(self) -> bool {
        matches!(self, Method::Gls1 | Method::Gls2)
    }

    pub fn is_flat(self) -> bool {
        matches!(self, Method::Vi2 | Method::Gls2)
    }
}

/// Wall-clock stages recorded for each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Kernel construction (with PD repair) plus prior elicitation.
    Elicitation,
    Vi1,
    Vi2,
    Gls1,
    Gls2,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Elicitation => "elicitation",
            Stage::Vi1 => "vi1",
            Stage::Vi2 => "vi2",
            Stage::Gls1 => "gls1",
            Stage::Gls2 => "gls2",
        }
    }
}

/// How raw pollutant levels enter the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureScaling {
    /// Pollutant levels as generated.
    #[default]
    Raw,
    /// Column z-scores computed within each subsample.
    Standardized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub fit: FitConfig,
    pub seed: u64,
    /// Nominal interval level.
    pub level: f64,
    pub exposure_scaling: ExposureScaling,
    pub eps_floor: f64,
    /// Bins of the population `h` histogram.
    pub histogram_bins: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            sample_sizes: vec![100, 200, 300, 400, 500],
            replications: 200,
            methods: Method::ALL.to_vec(),
            fit: FitConfig::default(),
            seed: 1,
            level: 0.95,
            exposure_scaling: ExposureScaling::default(),
            eps_floor: DEFAULT_EPS_FLOOR,
            histogram_bins: 50,
            threads: None,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self, pop: &Population) -> Result<()> {
        self.fit.validate()?;
        if self.methods.is_empty() {
            return Err(Error::input("plan lists no methods"));
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(Error::input("plan lists a method twice"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::input(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if self.histogram_bins == 0 {
            return Err(Error::input("histogram_bins must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::input("threads must be positive"));
        }
        let p = pop.x.ncols();
        for &n in &self.sample_sizes {
            if n > pop.size() {
                return Err(Error::input(format!(
                    "sample size {n} exceeds the population size {}",
                    pop.size()
                )));
            }
            if n < p + 2 {
                return Err(Error::input(format!("sample size {n} is too small for {p} covariates")));
            }
        }
        Ok(())
    }

    /// The sample sizes in run order, duplicates removed.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = self.sample_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

/// One subsample with its known truth.
pub struct ReplicationInput<'a> {
    pub data: Dataset,
    pub h_true: DVector<f64>,
    pub beta_true: &'a DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub beta_intervals: Vec<Interval>,
    /// Pointwise `h` intervals; GLS methods have none.
    pub h_intervals: Option<Vec<Interval>>,
    pub sigma2_hat: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicationOutcome {
    /// One entry per requested method; `Err` holds the failure message.
    pub methods: Vec<(Method, std::result::Result<MethodOutcome, String>)>,
    pub timings: Vec<(Stage, f64)>,
}

/// Produces the per-method intervals for one replication. The default is
/// [`BkmrRunner`]; tests substitute stubs.
pub trait ReplicationRunner: Sync {
    fn run(&self, input: &ReplicationInput<'_>, plan: &ExperimentPlan, rng: &mut ChaCha8Rng) -> ReplicationOutcome;
}

/// Elicits priors, builds the kernel and fits each requested method.
#[derive(Debug, Clone, Copy, Default)]
pub struct BkmrRunner;

impl ReplicationRunner for BkmrRunner {
    fn run(&self, input: &ReplicationInput<'_>, plan: &ExperimentPlan, _rng: &mut ChaCha8Rng) -> ReplicationOutcome {
        let data = &input.data;
        let wants = |m: Method| plan.methods.contains(&m);
        let mut out = ReplicationOutcome::default();

        let started = Instant::now();
        let informative = wants(Method::Vi1) || wants(Method::Gls1);
        let prepared = build_kernel(data.z(), plan.eps_floor).and_then(|k| {
            let prior = if informative { Some(elicit_priors(data)?) } else { None };
            Ok((k, prior))
        });
        out.timings.push((Stage::Elicitation, started.elapsed().as_secs_f64()));
        let (k, prior) = match prepared {
            Ok(v) => v,
            Err(e) => {
                let msg = e.to_string();
                out.methods = plan.methods.iter().map(|&m| (m, Err(msg.clone()))).collect();
                return out;
            }
        };

        let mut run_pair = |prior: &PriorSpec, vi: Method, gls: Method, vi_stage: Stage, gls_stage: Stage| {
            if !(wants(vi) || wants(gls)) {
                return;
            }
            let started = Instant::now();
            let fitted = fit(data, prior, &k, &plan.fit);
            out.timings.push((vi_stage, started.elapsed().as_secs_f64()));
            let fitted = match fitted {
                Ok(f) => f,
                Err(e) => {
                    for m in [vi, gls] {
                        if wants(m) {
                            out.methods.push((m, Err(e.to_string())));
                        }
                    }
                    return;
                }
            };
            if wants(vi) {
                out.methods.push((vi, vi_outcome(&fitted, plan.level)));
            }
            if wants(gls) {
                let started = Instant::now();
                let res = gls_outcome(&fitted, data, plan.level);
                out.timings.push((gls_stage, started.elapsed().as_secs_f64()));
                out.methods.push((gls, res));
            }
        };
        if let Some(prior) = &prior {
            run_pair(prior, Method::Vi1, Method::Gls1, Stage::Vi1, Stage::Gls1);
        }
        run_pair(&PriorSpec::Flat, Method::Vi2, Method::Gls2, Stage::Vi2, Stage::Gls2);
        out
    }
}

fn vi_outcome(fitted: &FitResult, level: f64) -> std::result::Result<MethodOutcome, String> {
    let beta_intervals = fitted.beta_intervals(level).map_err(|e| e.to_string())?;
    let h_intervals = fitted.h_intervals(level).map_err(|e| e.to_string())?;
    Ok(MethodOutcome {
        beta_intervals,
        h_intervals: Some(h_intervals),
        sigma2_hat: Some(fitted.sigma2_map),
        iterations: Some(fitted.trace.iterations),
        converged: fitted.trace.converged,
    })
}

fn gls_outcome(fitted: &FitResult, data: &Dataset, level: f64) -> std::result::Result<MethodOutcome, String> {
    let res = gls_correct(fitted, data).map_err(|e| e.to_string())?;
    let beta_intervals = gls_intervals(&res, level).map_err(|e| e.to_string())?;
    Ok(MethodOutcome {
        beta_intervals,
        h_intervals: None,
        sigma2_hat: None,
        iterations: Some(fitted.trace.iterations),
        converged: fitted.trace.converged,
    })
}

/// Closed-interval hit indicators.
pub fn interval_coverage(intervals: &[Interval], truth: &[f64]) -> Result<Vec<bool>> {
    if intervals.len() != truth.len() {
        return Err(Error::input(format!(
            "{} intervals but {} true values",
            intervals.len(),
            truth.len()
        )));
    }
    Ok(intervals.iter().zip(truth).map(|(iv, t)| iv.contains(*t)).collect())
}

/// Finished replication, tagged with its grid position.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub n: usize,
    pub replication: usize,
    /// Covariate hit indicators (or failure) per method, in plan order.
    pub methods: Vec<(Method, std::result::Result<MethodHits, String>)>,
    pub timings: Vec<(Stage, f64)>,
}

/// Coverage indicators and point summaries extracted from one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodHits {
    pub beta: Vec<bool>,
    /// `(hits, total)` over the subsampled subjects.
    pub h: Option<(usize, usize)>,
    pub sigma2_hat: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: bool,
}

/// Independent stream for each `(n, replication)`, so parallel and serial
/// runs draw identical subsamples.
pub fn replication_rng(seed: u64, n: usize, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) ^ replication as u64);
    rng
}

pub fn run_experiment(pop: &Population, plan: &ExperimentPlan) -> Result<(CoverageReport, TimingReport)> {
    run_experiment_with(pop, plan, &BkmrRunner)
}

pub fn run_experiment_with<R: ReplicationRunner>(
    pop: &Population,
    plan: &ExperimentPlan,
    runner: &R,
) -> Result<(CoverageReport, TimingReport)> {
    plan.validate(pop)?;
    let grid: Vec<(usize, usize)> = plan
        .sizes()
        .into_iter()
        .flat_map(|n| (0..plan.replications).map(move |r| (n, r)))
        .collect();

    let work = || -> Vec<ReplicationRecord> {
        grid.par_iter()
            .map(|&(n, r)| run_one(pop, plan, runner, n, r))
            .collect()
    };
    let records = match plan.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::input(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let coverage = CoverageReport::aggregate(pop, plan, &records)?;
    let timing = TimingReport::aggregate(plan, &records);
    Ok((coverage, timing))
}

fn run_one<R: ReplicationRunner>(
    pop: &Population,
    plan: &ExperimentPlan,
    runner: &R,
    n: usize,
    replication: usize,
) -> ReplicationRecord {
    let mut rng = replication_rng(plan.seed, n, replication);
    let mut rows = index::sample(&mut rng, pop.size(), n).into_vec();
    rows.sort_unstable();

    let mut record = ReplicationRecord {
        n,
        replication,
        methods: Vec::new(),
        timings: Vec::new(),
    };
    let data = pop.exposures(&rows).and_then(|z| {
        let z = match plan.exposure_scaling {
            ExposureScaling::Raw => z,
            ExposureScaling::Standardized => z.standardized(),
        };
        Dataset::new(pop.y.select_rows(&rows), pop.x.select_rows(&rows), z)
    });
    let data = match data {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            record.methods = plan.methods.iter().map(|&m| (m, Err(msg.clone()))).collect();
            return record;
        }
    };
    let input = ReplicationInput {
        data,
        h_true: pop.h.select_rows(&rows),
        beta_true: &pop.beta_true,
    };
    let outcome = runner.run(&input, plan, &mut rng);
    record.timings = outcome.timings;
    for &m in &plan.methods {
        let found = outcome.methods.iter().find(|(om, _)| *om == m);
        let hits = match found {
            None => Err("runner produced no result".to_string()),
            Some((_, Err(e))) => Err(e.clone()),
            Some((_, Ok(o))) => score(o, &input),
        };
        if let Err(e) = &hits {
            log::debug!("{} failed at n = {n}, replication {replication}: {e}", m.label());
        }
        record.methods.push((m, hits));
    }
    record
}

fn score(o: &MethodOutcome, input: &ReplicationInput<'_>) -> std::result::Result<MethodHits, String> {
    let beta = interval_coverage(&o.beta_intervals, input.beta_true.as_slice()).map_err(|e| e.to_string())?;
    let h = match &o.h_intervals {
        Some(iv) => {
            let hits = interval_coverage(iv, input.h_true.as_slice()).map_err(|e| e.to_string())?;
            Some((hits.iter().filter(|b| **b).count(), hits.len()))
        }
        None => None,
    };
    Ok(MethodHits {
        beta,
        h,
        sigma2_hat: o.sigma2_hat,
        iterations: o.iterations,
        converged: o.converged,
    })
}
