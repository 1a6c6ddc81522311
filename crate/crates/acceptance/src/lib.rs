//! Support code for the acceptance suite: independent numerical oracles and
//! the pass/fail report.
//!
//! The oracles are written straight from the model likelihoods and share no
//! code with the production samplers they check.

pub mod oracle;
pub mod report;

pub use report::{Check, Criterion, Report};
