//! Aggregated coverage, bias and timing summaries, with flat CSV renderers.
//!
//! [`CoverageReport`] holds only quantities that are a deterministic
//! function of (population, plan), so it serializes to identical bytes on
//! every run with the same seeds. Wall-clock timings live in the separate
//! [`TimingReport`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::experiment::{ExperimentPlan, Method, ReplicationRecord, Stage};
use crate::sim::population::{histogram, Histogram, Population};

/// Mean, sample SD, type-7 percentiles and MSE of `100 * sigma2_hat / sigma2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Summary {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub p025: f64,
    pub median: f64,
    pub p975: f64,
    /// Mean of `(sigma2_hat - sigma2)^2` on the variance scale.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub n: usize,
    /// Replications attempted.
    pub replications: usize,
    /// Replications whose fit failed; excluded from every rate below.
    pub failures: usize,
    /// Successful fits that stopped at the iteration cap.
    pub non_converged: usize,
    pub mean_iterations: Option<f64>,
    pub covariate_hits: Vec<usize>,
    /// Per-coefficient coverage; `None` when no replication succeeded.
    pub covariate_coverage: Vec<Option<f64>>,
    /// Hits and trials over all subsampled subjects (VI methods only).
    pub pollutant_hits: Option<usize>,
    pub pollutant_trials: Option<usize>,
    pub pollutant_coverage: Option<f64>,
    pub sigma2: Option<Sigma2Summary>,
    /// First few failure messages, for diagnosis.
    pub failure_examples: Vec<String>,
}

impl CellReport {
    pub fn successes(&self) -> usize {
        self.replications - self.failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub size: usize,
    pub redraws: usize,
    pub sigma_true: f64,
    pub beta_true: Vec<f64>,
    pub h_mean: f64,
    pub h_sd: f64,
    pub h_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub seed: u64,
    pub level: f64,
    pub replications: usize,
    pub sample_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    pub population: PopulationSummary,
    /// Ordered by sample size, then by plan method order.
    pub cells: Vec<CellReport>,
}

const FAILURE_EXAMPLES: usize = 5;

impl CoverageReport {
    pub fn aggregate(pop: &Population, plan: &ExperimentPlan, records: &[ReplicationRecord]) -> Result<Self> {
        let p = pop.beta_true.len();
        let sigma2_true = pop.sigma_true * pop.sigma_true;
        let mut cells = Vec::new();
        for n in plan.sizes() {
            for &method in &plan.methods {
                let mut cell = CellReport {
                    method,
                    n,
                    replications: 0,
                    failures: 0,
                    non_converged: 0,
                    mean_iterations: None,
                    covariate_hits: vec![0; p],
                    covariate_coverage: vec![None; p],
                    pollutant_hits: None,
                    pollutant_trials: None,
                    pollutant_coverage: None,
                    sigma2: None,
                    failure_examples: Vec::new(),
                };
                let mut ratios = Vec::new();
                let mut sq_err = Vec::new();
                let mut iterations = Vec::new();
                for rec in records.iter().filter(|r| r.n == n) {
                    let Some((_, res)) = rec.methods.iter().find(|(m, _)| *m == method) else {
                        continue;
                    };
                    cell.replications += 1;
                    let hits = match res {
                        Ok(h) => h,
                        Err(msg) => {
                            cell.failures += 1;
                            if cell.failure_examples.len() < FAILURE_EXAMPLES {
                                cell.failure_examples.push(format!("replication {}: {msg}", rec.replication));
                            }
                            continue;
                        }
                    };
                    for (acc, hit) in cell.covariate_hits.iter_mut().zip(&hits.beta) {
                        *acc += usize::from(*hit);
                    }
                    if let Some((h, t)) = hits.h {
                        *cell.pollutant_hits.get_or_insert(0) += h;
                        *cell.pollutant_trials.get_or_insert(0) += t;
                    }
                    if let Some(s2) = hits.sigma2_hat {
                        ratios.push(100.0 * s2 / sigma2_true);
                        sq_err.push((s2 - sigma2_true).powi(2));
                    }
                    if let Some(it) = hits.iterations {
                        iterations.push(it as f64);
                    }
                    if !hits.converged {
                        cell.non_converged += 1;
                    }
                }
                let ok = cell.successes();
                if ok > 0 {
                    cell.covariate_coverage = cell
                        .covariate_hits
                        .iter()
                        .map(|&h| Some(h as f64 / ok as f64))
                        .collect();
                }
                if let (Some(h), Some(t)) = (cell.pollutant_hits, cell.pollutant_trials) {
                    if t > 0 {
                        cell.pollutant_coverage = Some(h as f64 / t as f64);
                    }
                }
                if !ratios.is_empty() {
                    let (mean, sd) = mean_sd(&ratios);
                    let mut sorted = ratios.clone();
                    sorted.sort_by(f64::total_cmp);
                    cell.sigma2 = Some(Sigma2Summary {
                        count: ratios.len(),
                        mean,
                        sd,
                        p025: quantile(&sorted, 0.025),
                        median: quantile(&sorted, 0.5),
                        p975: quantile(&sorted, 0.975),
                        mse: mean_sd(&sq_err).0,
                    });
                }
                if !iterations.is_empty() {
                    cell.mean_iterations = Some(mean_sd(&iterations).0);
                }
                cells.push(cell);
            }
        }

        let h = pop.h.as_slice();
        let (h_mean, h_sd) = mean_sd(h);
        Ok(Self {
            seed: plan.seed,
            level: plan.level,
            replications: plan.replications,
            sample_sizes: plan.sizes(),
            methods: plan.methods.clone(),
            population: PopulationSummary {
                size: pop.size(),
                redraws: pop.redraws,
                sigma_true: pop.sigma_true,
                beta_true: pop.beta_true.iter().copied().collect(),
                h_mean,
                h_sd,
                h_histogram: histogram(h, plan.histogram_bins)?,
            },
            cells,
        })
    }

    pub fn cell(&self, method: Method, n: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }

    /// Per-coefficient covariate coverage, one row per (n, method).
    pub fn table1_csv(&self) -> String {
        let p = self.population.beta_true.len();
        let mut out = String::from("n,method");
        for j in 0..p {
            let _ = write!(out, ",beta{j}");
        }
        out.push_str(",replications,failures,non_converged\n");
        for c in &self.cells {
            let _ = write!(out, "{},{}", c.n, c.method.label());
            for v in &c.covariate_coverage {
                let _ = write!(out, ",{}", fmt_opt(*v));
            }
            let _ = writeln!(out, ",{},{},{}", c.replications, c.failures, c.non_converged);
        }
        out
    }

    /// Aggregated pollutant-effect coverage for the VI methods.
    pub fn table2_csv(&self) -> String {
        let mut out = String::from("n,method,coverage,hits,trials,replications,failures\n");
        for c in self.cells.iter().filter(|c| !c.method.is_gls()) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.n,
                c.method.label(),
                fmt_opt(c.pollutant_coverage),
                c.pollutant_hits.unwrap_or(0),
                c.pollutant_trials.unwrap_or(0),
                c.replications,
                c.failures
            );
        }
        out
    }

    /// `sigma^2` MAP bias summary for the VI methods.
    pub fn table3_csv(&self) -> String {
        let mut out = String::from("n,method,mean,sd,p2.5,median,p97.5,mse,count\n");
        for c in self.cells.iter().filter(|c| !c.method.is_gls()) {
            let s = c.sigma2.as_ref();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.n,
                c.method.label(),
                fmt_opt(s.map(|s| s.mean)),
                fmt_opt(s.map(|s| s.sd)),
                fmt_opt(s.map(|s| s.p025)),
                fmt_opt(s.map(|s| s.median)),
                fmt_opt(s.map(|s| s.p975)),
                fmt_opt(s.map(|s| s.mse)),
                s.map_or(0, |s| s.count)
            );
        }
        out
    }

    /// Histogram of the population `h`.
    pub fn figure1_csv(&self) -> String {
        let hist = &self.population.h_histogram;
        let mut out = String::from("lower,upper,count\n");
        for (b, count) in hist.counts.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", fmt(hist.edges[b]), fmt(hist.edges[b + 1]), count);
        }
        out
    }

    /// Long-format covariate coverage against `n`.
    pub fn figure2_csv(&self) -> String {
        let mut out = String::from("method,coefficient,n,coverage\n");
        for &method in &self.methods {
            for j in 0..self.population.beta_true.len() {
                for c in self.cells.iter().filter(|c| c.method == method) {
                    let _ = writeln!(
                        out,
                        "{},beta{j},{},{}",
                        method.label(),
                        c.n,
                        fmt_opt(c.covariate_coverage[j])
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub stage: Stage,
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Wall-clock seconds per stage and sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingSummary>,
}

impl TimingReport {
    pub fn aggregate(plan: &ExperimentPlan, records: &[ReplicationRecord]) -> Self {
        let stages = [Stage::Elicitation, Stage::Vi1, Stage::Gls1, Stage::Vi2, Stage::Gls2];
        let mut rows = Vec::new();
        for n in plan.sizes() {
            for stage in stages {
                let secs: Vec<f64> = records
                    .iter()
                    .filter(|r| r.n == n)
                    .flat_map(|r| r.timings.iter().filter(|(s, _)| *s == stage).map(|(_, t)| *t))
                    .collect();
                if secs.is_empty() {
                    continue;
                }
                rows.push(summarize_timings(stage, n, &secs));
            }
        }
        Self { rows }
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("stage,n,count,mean,sd,min,max\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.stage.label(),
                r.n,
                r.count,
                fmt(r.mean),
                fmt(r.sd),
                fmt(r.min),
                fmt(r.max)
            );
        }
        out
    }
}

pub fn summarize_timings(stage: Stage, n: usize, secs: &[f64]) -> TimingSummary {
    let (mean, sd) = mean_sd(secs);
    TimingSummary {
        stage,
        n,
        count: secs.len(),
        mean,
        sd,
        min: secs.iter().copied().fold(f64::INFINITY, f64::min),
        max: secs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Linear-interpolation quantile of sorted data (the R default, type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_r_type_7() {
        // R: quantile(1:10, c(.025, .5, .975)) = 1.225 5.5 9.775
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile(&v, 0.025) - 1.225).abs() < 1e-12);
        assert!((quantile(&v, 0.5) - 5.5).abs() < 1e-12);
        assert!((quantile(&v, 0.975) - 9.775).abs() < 1e-12);
        assert_eq!(quantile(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn mean_sd_small_cases() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
