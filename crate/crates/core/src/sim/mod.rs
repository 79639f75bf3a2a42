//! Simulation study: population generation, replicated fits, summaries.

pub mod experiment;
pub mod oracle;
pub mod population;
pub mod report;

pub use experiment::{
    interval_coverage, run_experiment, run_experiment_with, BkmrRunner, ExperimentPlan, ExposureScaling, Method,
    MethodOutcome, ReplicationInput, ReplicationOutcome, ReplicationRunner, Stage,
};
pub use population::{generate_population, pollutant_effect, Population, PopulationSpec};
pub use report::{CoverageReport, TimingReport};
