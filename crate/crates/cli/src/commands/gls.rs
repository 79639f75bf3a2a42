use std::time::Instant;

use bkmr_vi::gls::{gls_correct, gls_intervals};
use bkmr_vi::model::wald_intervals;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::FitState;
use super::{check_level, secs, vector, Rows, FIT_STATE, GLS_STATE};
use crate::error::CliResult;
use crate::io::{self, num};
use crate::GlsArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsState {
    pub covariates: Vec<String>,
    pub level: f64,
    pub beta_gls: Vec<f64>,
    /// Row-major `(X' Sigma_y^-1 X)^-1`.
    pub cov_gls: Rows,
}

impl GlsState {
    pub fn intervals(&self) -> CliResult<Vec<bkmr_vi::Interval>> {
        let p = self.beta_gls.len();
        let beta = DVector::from_vec(self.beta_gls.clone());
        let cov: DMatrix<f64> = self.cov_gls.to_matrix(p)?;
        Ok(wald_intervals(&beta, &cov, self.level)?)
    }
}

pub fn run(args: &GlsArgs) -> CliResult<()> {
    let fit_dir = &args.input;
    let state: FitState = io::read_json(&fit_dir.join(FIT_STATE))?;
    let level = check_level(args.level.unwrap_or(state.level))?;
    let out = io::ensure_dir(args.common.out.as_deref().unwrap_or(fit_dir))?;
    let data = state.dataset()?;

    let start = Instant::now();
    let result = gls_correct(&state.result, &data)?;
    let gls_secs = secs(start);

    let gls_iv = gls_intervals(&result, level)?;
    let vi_iv = state.result.beta_intervals(level)?;
    let rows: Vec<Vec<String>> = state
        .covariates
        .iter()
        .enumerate()
        .map(|(j, name)| {
            vec![
                name.clone(),
                num(result.beta_gls[j]),
                num(result.cov_gls[(j, j)].max(0.0).sqrt()),
                num(gls_iv[j].lower),
                num(gls_iv[j].upper),
                num(gls_iv[j].half_width()),
                num(vi_iv[j].half_width()),
            ]
        })
        .collect();
    io::write_csv(
        &out.join("gls_beta.csv"),
        &["name", "estimate", "se", "lower", "upper", "gls_half_width", "vi_half_width"],
        &rows,
    )?;
    io::write_json_compact(
        &out.join(GLS_STATE),
        &GlsState {
            covariates: state.covariates.clone(),
            level,
            beta_gls: vector(&result.beta_gls),
            cov_gls: Rows::from_matrix(&result.cov_gls),
        },
    )?;
    io::write_json(&out.join("gls_timing.json"), &serde_json::json!({ "gls_secs": gls_secs }))?;
    println!("GLS correction for {} coefficients; wrote {}", state.covariates.len(), out.display());
    Ok(())
}
