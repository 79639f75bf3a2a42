use std::path::Path;
use std::time::Instant;

use bkmr_vi::sim::population::POLLUTANTS;
use bkmr_vi::sim::{generate_population, run_experiment, CoverageReport, Population};
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{out_dir, secs, REPORT_JSON};
use crate::config::{load_or_default, SimFileConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, num};
use crate::SimulateArgs;

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    library_version: &'static str,
    seed: u64,
    population_seed: u64,
    /// SHA-256 of `config.json`.
    config_sha256: String,
    files: &'a [&'a str],
}

pub const TABLE_FILES: [&str; 5] = [
    "table1_covariate_coverage.csv",
    "table2_pollutant_coverage.csv",
    "table3_sigma2_bias.csv",
    "figure1_h_histogram.csv",
    "figure2_coverage.csv",
];

pub fn write_tables(dir: &Path, report: &CoverageReport) -> CliResult<()> {
    let bodies = [
        report.table1_csv(),
        report.table2_csv(),
        report.table3_csv(),
        report.figure1_csv(),
        report.figure2_csv(),
    ];
    for (name, body) in TABLE_FILES.iter().zip(bodies) {
        io::write_text(&dir.join(name), &body)?;
    }
    Ok(())
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let mut cfg: SimFileConfig = load_or_default(args.common.config.as_deref())?;
    if let Some(s) = args.common.seed {
        cfg.plan.seed = s;
        cfg.population.seed = s;
    }
    if let Some(t) = args.tol {
        cfg.plan.fit.tolerance = t;
    }
    if let Some(m) = args.max_iter {
        cfg.plan.fit.max_iterations = m;
    }
    if let Some(b) = args.burn_in {
        cfg.plan.fit.burn_in = b;
    }
    // Thread count never changes results, so it is left out of the replay config.
    cfg.plan.threads = None;
    let out = io::ensure_dir(&out_dir(args.common.out.as_deref(), cfg.out.as_deref(), "bkmr-sim"))?;
    cfg.out = None;

    let config_json = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::input(e.to_string()))? + "\n";
    io::write_text(&out.join("config.json"), &config_json)?;
    let hash: String = Sha256::digest(config_json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();

    if let Some(t) = args.common.threads {
        if t == 0 {
            return Err(CliError::input("--threads must be positive"));
        }
        cfg.plan.threads = Some(t);
    }

    let start = Instant::now();
    let pop = generate_population(&cfg.population)?;
    log::info!("generated population of {} in {:.2}s", pop.size(), secs(start));
    if cfg.export_population {
        write_population(&out.join("population.csv"), &pop)?;
    }

    let start = Instant::now();
    let (report, timing) = run_experiment(&pop, &cfg.plan)?;
    log::info!("experiment finished in {:.1}s", secs(start));

    write_tables(&out, &report)?;
    io::write_json(&out.join(REPORT_JSON), &report)?;
    io::write_text(&out.join("timing.csv"), &timing.csv())?;

    let mut files: Vec<&str> = TABLE_FILES.to_vec();
    files.extend([REPORT_JSON, "config.json", "timing.csv"]);
    if cfg.export_population {
        files.push("population.csv");
    }
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            library_version: bkmr_vi::VERSION,
            seed: cfg.plan.seed,
            population_seed: cfg.population.seed,
            config_sha256: hash,
            files: &files,
        },
    )?;

    super::report::print_summary(&report);
    println!("wrote {}", out.display());
    Ok(())
}

/// `y, x1.., z_Se..`; the intercept column is implied. This is the layout
/// `fit` reads without a column-role config.
pub fn write_population(path: &Path, pop: &Population) -> CliResult<()> {
    let p = pop.x.ncols();
    let mut header: Vec<String> = vec!["y".into()];
    header.extend((1..p).map(|j| format!("x{j}")));
    header.extend(POLLUTANTS.iter().map(|s| format!("z_{s}")));
    let rows: Vec<Vec<String>> = (0..pop.size())
        .map(|i| {
            let mut r = vec![num(pop.y[i])];
            r.extend((1..p).map(|j| num(pop.x[(i, j)])));
            r.extend((0..pop.z.ncols()).map(|j| num(pop.z[(i, j)])));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_csv(path, &header, &rows)
}
