use std::path::Path;
use std::time::Instant;

use bkmr_vi::elicitation::elicit_priors;
use bkmr_vi::model::ConvergenceTrace;
use bkmr_vi::{build_kernel, fit, Dataset, ExposureMatrix, FitConfig, FitResult, PriorSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_level, out_dir, secs, vector, Rows, FIT_STATE};
use crate::config::{load_or_default, ColumnRoles, FitFileConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, num};
use crate::{FitArgs, PriorFlavor};

pub const INTERCEPT: &str = "intercept";

/// Everything `gls` and `report` need to pick up a finished fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub response: String,
    /// Design column names, including the intercept when one was added.
    pub covariates: Vec<String>,
    pub exposures: Vec<String>,
    pub level: f64,
    pub eps_floor: f64,
    pub y: Vec<f64>,
    pub x: Rows,
    pub z: Rows,
    pub result: FitResult,
}

impl FitState {
    pub fn dataset(&self) -> CliResult<Dataset> {
        let x = self.x.to_matrix(self.covariates.len())?;
        let z = ExposureMatrix::new(self.z.to_matrix(self.exposures.len())?)?;
        Ok(Dataset::new(DVector::from_vec(self.y.clone()), x, z)?)
    }
}

#[derive(Debug, Serialize)]
struct CoefficientSummary<'a> {
    name: &'a str,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    input: String,
    prior: &'static str,
    seed: u64,
    n: usize,
    p: usize,
    m: usize,
    level: f64,
    config: &'a FitConfig,
    kernel_repaired: bool,
    iterations: usize,
    converged: bool,
    final_objective: Option<f64>,
    final_change: f64,
    sigma2_map: f64,
    sigma2_scale: f64,
    tau_scale: f64,
    nu_sigma_q: f64,
    nu_tau_q: f64,
    beta: Vec<CoefficientSummary<'a>>,
}

#[derive(Debug, Serialize)]
struct FitTiming {
    /// Kernel construction, repair and factorization plus prior elicitation.
    elicitation_secs: f64,
    fit_secs: f64,
}

/// Reads the CSV and assembles the dataset according to the column roles.
pub fn load_dataset(path: &Path, roles: Option<&ColumnRoles>, intercept: bool) -> CliResult<(Dataset, ColumnRoles)> {
    let table = io::read_table(path)?;
    let mut roles = match roles {
        Some(r) => r.clone(),
        None => ColumnRoles::infer(&table.header)?,
    };
    if roles.exposures.is_empty() {
        return Err(CliError::input("at least one exposure column is required"));
    }
    let mut seen: Vec<&String> = vec![&roles.response];
    for c in roles.covariates.iter().chain(&roles.exposures) {
        if seen.contains(&c) {
            return Err(CliError::input(format!("column `{c}` is assigned more than one role")));
        }
        seen.push(c);
    }
    let y = table.columns(std::slice::from_ref(&roles.response))?.column(0).into_owned();
    let mut x = table.columns(&roles.covariates)?;
    if intercept {
        if roles.covariates.iter().any(|c| c == INTERCEPT) {
            return Err(CliError::input(format!("a column is already named `{INTERCEPT}`")));
        }
        x = x.insert_column(0, 1.0);
        roles.covariates.insert(0, INTERCEPT.into());
    }
    if x.ncols() == 0 {
        return Err(CliError::input("the design has no columns; enable the intercept or add covariates"));
    }
    let z = ExposureMatrix::new(table.columns(&roles.exposures)?)?;
    let data = Dataset::new(y, x, z)?;
    Ok((data, roles))
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    let mut cfg: FitFileConfig = load_or_default(args.common.config.as_deref())?;
    if let Some(p) = args.prior {
        cfg.prior = p;
    }
    if let Some(t) = args.tol {
        cfg.fit.tolerance = t;
    }
    if let Some(m) = args.max_iter {
        cfg.fit.max_iterations = m;
    }
    if let Some(b) = args.burn_in {
        cfg.fit.burn_in = b;
    }
    if let Some(s) = args.common.seed {
        cfg.seed = s;
    }
    let level = check_level(cfg.level)?;
    cfg.fit.validate()?;
    let input = args
        .input
        .clone()
        .or_else(|| cfg.input.clone())
        .ok_or_else(|| CliError::input("no input file; pass --input or set `input` in the config"))?;
    let out = io::ensure_dir(&out_dir(args.common.out.as_deref(), cfg.out.as_deref(), "bkmr-fit"))?;

    let (data, roles) = load_dataset(&input, cfg.columns.as_ref(), cfg.intercept)?;
    log::info!("loaded {} subjects, {} design columns, {} exposures", data.n(), data.p(), roles.exposures.len());

    let start = Instant::now();
    let k = build_kernel(data.z(), cfg.eps_floor)?;
    let prior = match (cfg.prior, &cfg.informative_prior) {
        (PriorFlavor::Flat, _) => PriorSpec::Flat,
        (PriorFlavor::Informative, Some(p)) => PriorSpec::Informative(p.clone()),
        (PriorFlavor::Informative, None) => elicit_priors(&data)?,
    };
    let elicitation_secs = secs(start);

    let start = Instant::now();
    let result = match fit(&data, &prior, &k, &cfg.fit) {
        Ok(r) => r,
        Err(e) => {
            if let bkmr_vi::Error::Fit { trace, .. } = &e {
                write_trace(&out.join("trace.csv"), trace)?;
            }
            return Err(e.into());
        }
    };
    let fit_secs = secs(start);

    let beta_iv = result.beta_intervals(level)?;
    let beta_sd = result.posterior.beta_sd();
    let rows: Vec<Vec<String>> = roles
        .covariates
        .iter()
        .enumerate()
        .map(|(j, name)| {
            vec![
                name.clone(),
                num(result.posterior.mu_beta[j]),
                num(beta_sd[j]),
                num(beta_iv[j].lower),
                num(beta_iv[j].upper),
            ]
        })
        .collect();
    io::write_csv(&out.join("posterior_beta.csv"), &["name", "mean", "sd", "lower", "upper"], &rows)?;

    let h_iv = result.h_intervals(level)?;
    let h_sd = result.posterior.h_sd();
    let rows: Vec<Vec<String>> = (0..data.n())
        .map(|i| {
            vec![
                (i + 1).to_string(),
                num(result.posterior.mu_h[i]),
                num(h_sd[i]),
                num(h_iv[i].lower),
                num(h_iv[i].upper),
            ]
        })
        .collect();
    io::write_csv(&out.join("posterior_h.csv"), &["subject", "mean", "sd", "lower", "upper"], &rows)?;
    write_trace(&out.join("trace.csv"), &result.trace)?;

    let post = &result.posterior;
    let summary = FitSummary {
        input: input.display().to_string(),
        prior: prior.name(),
        seed: cfg.seed,
        n: data.n(),
        p: data.p(),
        m: roles.exposures.len(),
        level,
        config: &cfg.fit,
        kernel_repaired: k.was_repaired(),
        iterations: result.trace.iterations,
        converged: result.trace.converged,
        final_objective: result.trace.objective_values.last().copied(),
        final_change: result.trace.criterion,
        sigma2_map: result.sigma2_map,
        sigma2_scale: post.scale_sigma_q,
        tau_scale: post.scale_tau_q,
        nu_sigma_q: post.nu_sigma_q,
        nu_tau_q: post.nu_tau_q,
        beta: roles
            .covariates
            .iter()
            .enumerate()
            .map(|(j, name)| CoefficientSummary {
                name,
                mean: post.mu_beta[j],
                sd: beta_sd[j],
                lower: beta_iv[j].lower,
                upper: beta_iv[j].upper,
            })
            .collect(),
    };
    io::write_json(&out.join("summary.json"), &summary)?;

    let state = FitState {
        response: roles.response.clone(),
        covariates: roles.covariates.clone(),
        exposures: roles.exposures.clone(),
        level,
        eps_floor: cfg.eps_floor,
        y: vector(data.y()),
        x: Rows::from_matrix(data.x()),
        z: Rows::from_matrix(&DMatrix::clone(data.z().as_matrix())),
        result,
    };
    io::write_json_compact(&out.join(FIT_STATE), &state)?;
    io::write_json(
        &out.join("timing.json"),
        &FitTiming {
            elicitation_secs,
            fit_secs,
        },
    )?;

    let r = &state.result;
    if !r.trace.converged {
        log::warn!(
            "fit stopped at the iteration cap ({}) without meeting the tolerance",
            r.trace.max_iterations
        );
    }
    println!(
        "{} fit: n = {}, {} iterations ({}), sigma^2 MAP {:.4}; wrote {}",
        prior.name(),
        data.n(),
        r.trace.iterations,
        if r.trace.converged { "converged" } else { "not converged" },
        r.sigma2_map,
        out.display()
    );
    Ok(())
}

fn write_trace(path: &Path, trace: &ConvergenceTrace) -> CliResult<()> {
    let rows: Vec<Vec<String>> = trace
        .objective_values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let change = if i == 0 { String::new() } else { num(trace.objective_values[i - 1] - v) };
            vec![(i + 1).to_string(), num(*v), change]
        })
        .collect();
    io::write_csv(path, &["iteration", "objective", "decrease"], &rows)
}
