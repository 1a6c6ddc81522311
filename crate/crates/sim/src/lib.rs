//! Monte Carlo study harness for the two-stage dose-optimization design.
//!
//! Scenarios are TOML documents (see `scenarios/`); the covariate coding the
//! design uses is a separate schema document (see `schemas/`), so reference
//! levels can be changed without touching the simulated world.

pub mod error;
pub mod generate;
pub mod metrics;
pub mod output;
pub mod scenario;
pub mod study;
pub mod trial;

use std::path::Path;

use doseopt_core::efficacy::CovariateSchema;

pub use error::{Result, SimError};
pub use metrics::{ReplicateSummary, StudyMetrics};
pub use scenario::{Scenario, Truth};
pub use study::{run_study, Study, StudyOptions};
pub use trial::{design_config, run_trial, DesignVariant, TrialResult, INTERIM_MCMC};

/// Reads a covariate schema document.
pub fn load_schema(path: impl AsRef<Path>) -> Result<CovariateSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    toml::from_str(&text).map_err(|e| SimError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}
