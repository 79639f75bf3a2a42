use std::path::{Path, PathBuf};

use bkmr_vi::sim::{ExperimentPlan, PopulationSpec};
use bkmr_vi::{FitConfig, InformativePrior};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::PriorFlavor;

/// Which CSV columns play which part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRoles {
    pub response: String,
    pub covariates: Vec<String>,
    pub exposures: Vec<String>,
}

impl ColumnRoles {
    /// `y` is the response, `z_*` columns are exposures, everything else is
    /// a covariate. This is the layout the simulator exports.
    pub fn infer(header: &[String]) -> CliResult<Self> {
        if !header.iter().any(|h| h == "y") {
            return Err(CliError::input(
                "no column roles configured and the input has no `y` column",
            ));
        }
        let exposures: Vec<String> = header.iter().filter(|h| h.starts_with("z_")).cloned().collect();
        let covariates = header
            .iter()
            .filter(|h| *h != "y" && !h.starts_with("z_"))
            .cloned()
            .collect();
        Ok(Self {
            response: "y".into(),
            covariates,
            exposures,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitFileConfig {
    pub input: Option<PathBuf>,
    pub columns: Option<ColumnRoles>,
    /// Prepend an intercept column to the covariates.
    pub intercept: bool,
    pub prior: PriorFlavor,
    /// Explicit hyperparameters; when absent the informative prior is
    /// elicited from an OLS fit.
    pub informative_prior: Option<InformativePrior>,
    pub fit: FitConfig,
    pub eps_floor: f64,
    pub level: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for FitFileConfig {
    fn default() -> Self {
        Self {
            input: None,
            columns: None,
            intercept: true,
            prior: PriorFlavor::Informative,
            informative_prior: None,
            fit: FitConfig::default(),
            eps_floor: bkmr_vi::kernel::DEFAULT_EPS_FLOOR,
            level: 0.95,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimFileConfig {
    pub population: PopulationSpec,
    pub plan: ExperimentPlan,
    /// Also write the full synthetic population as `population.csv`.
    pub export_population: bool,
    pub out: Option<PathBuf>,
}

impl Default for SimFileConfig {
    fn default() -> Self {
        Self {
            population: PopulationSpec::default(),
            plan: ExperimentPlan {
                sample_sizes: vec![100, 300, 500],
                ..ExperimentPlan::default()
            },
            export_population: false,
            out: None,
        }
    }
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), load_json)
}
