//! Plateau dose–efficacy curve.
//!
//! `pi_E = exp(-exp(alpha0)) * (1 - exp(-exp(alpha1 + sum(gamma * z)) * p))`,
//! where `p` is the scaled dose in (0,1). The first factor is the plateau
//! shared by every covariate pattern.

use serde::{Deserialize, Serialize};

use super::schema::CovMask;
use crate::dose::DoseLevel;
use crate::error::Result;
use crate::scalar::Real;
use crate::toxicity::follow_up_weight;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffObservation {
    pub dose: DoseLevel,
    /// Dummy-coded covariates.
    pub z: CovMask,
    pub y_eff: bool,
    pub follow_time: f64,
    pub window: f64,
}

/// 1 for an observed response, otherwise the observed fraction of the window.
pub fn eff_weight(obs: &EffObservation) -> Result<f64> {
    follow_up_weight(obs.y_eff, obs.follow_time, obs.window)
}

/// Plateau height `exp(-exp(alpha0))`.
#[inline]
pub fn plateau<T: Real>(alpha0: T) -> T {
    (-alpha0.exp()).exp()
}

/// Efficacy probability for linear predictor `alpha1 + gamma'z` (`slope_term`)
/// at scaled dose `p`. Evaluated through `log p` so large predictors saturate
/// instead of overflowing.
#[inline]
pub fn eff_prob<T: Real>(alpha0: T, slope_term: T, p: T) -> T {
    let log_rate = slope_term + p.ln();
    let rate = log_rate.exp();
    let rise = if rate.is_infinite() { T::one() } else { -(-rate).exp_m1() };
    plateau(alpha0) * rise
}

/// Parameter values of one posterior draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta<'a> {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma: &'a [f64],
}

impl Theta<'_> {
    pub fn slope_term(&self, z: CovMask) -> f64 {
        self.alpha1 + z.iter().take_while(|m| *m < self.gamma.len()).map(|m| self.gamma[m]).sum::<f64>()
    }

    pub fn prob(&self, p: f64, z: CovMask) -> f64 {
        eff_prob(self.alpha0, self.slope_term(z), p)
    }
}
