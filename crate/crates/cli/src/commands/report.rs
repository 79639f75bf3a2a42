use bkmr_vi::sim::CoverageReport;

use super::fit::FitState;
use super::gls::GlsState;
use super::simulate::write_tables;
use super::{FIT_STATE, GLS_STATE, REPORT_JSON};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::ReportArgs;

pub fn run(args: &ReportArgs) -> CliResult<()> {
    let dir = &args.input;
    let report_path = dir.join(REPORT_JSON);
    if report_path.exists() {
        let report: CoverageReport = io::read_json(&report_path)?;
        let out = io::ensure_dir(args.common.out.as_deref().unwrap_or(dir))?;
        write_tables(&out, &report)?;
        print_summary(&report);
        return Ok(());
    }
    let fit_path = dir.join(FIT_STATE);
    if fit_path.exists() {
        let state: FitState = io::read_json(&fit_path)?;
        let gls_path = dir.join(GLS_STATE);
        let gls: Option<GlsState> = if gls_path.exists() { Some(io::read_json(&gls_path)?) } else { None };
        print_fit(&state, gls.as_ref())?;
        return Ok(());
    }
    Err(CliError::input(format!(
        "{} contains neither {REPORT_JSON} nor {FIT_STATE}",
        dir.display()
    )))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "   -  ".into(), |v| format!("{:6.3}", v))
}

pub fn print_summary(report: &CoverageReport) {
    println!(
        "{} replications per cell, level {}, seed {}",
        report.replications, report.level, report.seed
    );
    println!("covariate coverage (per coefficient):");
    for c in &report.cells {
        let cov: Vec<String> = c.covariate_coverage.iter().map(|v| pct(*v)).collect();
        println!(
            "  n={:<5} {:<5} {}  [{} failed, {} not converged]",
            c.n,
            c.method.label(),
            cov.join(" "),
            c.failures,
            c.non_converged
        );
    }
    println!("pollutant coverage / sigma^2 MAP ratio (%):");
    for c in report.cells.iter().filter(|c| !c.method.is_gls()) {
        println!(
            "  n={:<5} {:<5} {}  {}",
            c.n,
            c.method.label(),
            pct(c.pollutant_coverage),
            c.sigma2.as_ref().map_or_else(|| "-".into(), |s| format!("{:.1} (sd {:.1})", s.mean, s.sd))
        );
    }
    if report.replications == 0 {
        println!("  (no replications were run)");
    }
}

fn print_fit(state: &FitState, gls: Option<&GlsState>) -> CliResult<()> {
    let r = &state.result;
    let vi = r.beta_intervals(state.level)?;
    println!(
        "{} fit on {} subjects: {} iterations ({}), sigma^2 MAP {:.4}, tau scale {:.4}",
        r.prior_used.name(),
        state.y.len(),
        r.trace.iterations,
        if r.trace.converged { "converged" } else { "not converged" },
        r.sigma2_map,
        r.posterior.scale_tau_q
    );
    let gls_iv = gls.map(GlsState::intervals).transpose()?;
    for (j, name) in state.covariates.iter().enumerate() {
        print!(
            "  {:<12} {:>12.5} [{:.5}, {:.5}]",
            name, r.posterior.mu_beta[j], vi[j].lower, vi[j].upper
        );
        if let (Some(g), Some(iv)) = (gls, &gls_iv) {
            print!("   GLS {:>12.5} [{:.5}, {:.5}]", g.beta_gls[j], iv[j].lower, iv[j].upper);
        }
        println!();
    }
    Ok(())
}
