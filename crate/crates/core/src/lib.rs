//! Bayesian two-stage dose optimization with covariate-specific optimal doses.
//!
//! Probability kernels are generic over [`Real`]; the samplers and the trial
//! engine work in `f64`. The aliases below fix the scalar for typical use.

pub mod design;
pub mod dose;
pub mod efficacy;
pub mod error;
pub mod mcmc;
pub mod numerics;
pub mod pk;
pub mod rng;
pub mod scalar;
pub mod toxicity;

pub use error::{CoreError, Result};
pub use scalar::Real;

pub type DoseGrid = dose::DoseGrid<f64>;
pub type ToxObservation = toxicity::ToxObservation<f64>;
pub type ToxPosterior = toxicity::ToxPosterior<f64>;
pub use dose::DoseLevel;
