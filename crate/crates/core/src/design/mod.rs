//! Two-stage dose-optimization design: the configuration, per-patient rules
//! and the trial state machine.

mod config;
mod engine;
mod rules;
mod state;

pub use config::{DesignConfig, LevelRestriction, REFERENCE_AUC_THRESHOLD};
pub use rules::{admissible_set, optimization_dose, randomization_probs, randomize_dose};
pub use state::*;
