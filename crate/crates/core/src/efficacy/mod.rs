//! Plateau dose-efficacy model with sparse group selection of categorical
//! covariates.

mod model;
mod posterior;
mod sampler;
mod schema;

pub use model::{eff_prob, eff_weight, plateau, EffObservation, Theta};
pub use posterior::{
    eff_draws_conditional, select_covariates, ConditionalDraws, EffPosterior, MIN_CONDITIONAL_DRAWS,
};
pub use sampler::{fit_eff_posterior, EffModel, EffPriors};
pub use schema::{Characteristic, CovMask, Covariate, CovariateSchema, LevelOverride, Pattern, SlabKind};
