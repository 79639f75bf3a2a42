pub mod fit;
pub mod gls;
pub mod report;
pub mod simulate;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const FIT_STATE: &str = "fit_state.json";
pub const GLS_STATE: &str = "gls_state.json";
pub const REPORT_JSON: &str = "report.json";

/// Output directory: flag, then config, then `default`.
pub fn out_dir(flag: Option<&Path>, config: Option<&Path>, default: &str) -> PathBuf {
    flag.or(config).map_or_else(|| PathBuf::from(default), Path::to_path_buf)
}

/// Row-major matrix in a form that serializes compactly and round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rows(pub Vec<Vec<f64>>);

impl Rows {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    pub fn to_matrix(&self, ncols: usize) -> CliResult<DMatrix<f64>> {
        if self.0.iter().any(|r| r.len() != ncols) {
            return Err(CliError::input(format!("stored matrix rows do not all have {ncols} columns")));
        }
        Ok(DMatrix::from_fn(self.0.len(), ncols, |i, j| self.0[i][j]))
    }
}

pub fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn secs(start: std::time::Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

pub fn check_level(level: f64) -> CliResult<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(CliError::input(format!("interval level must lie in (0, 1), got {level}")))
    }
}
