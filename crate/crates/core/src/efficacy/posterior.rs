use serde::{Deserialize, Serialize};

use super::model::eff_prob;
use super::schema::CovMask;
use crate::dose::DoseLevel;
use crate::error::{CoreError, Result};
use crate::mcmc::SamplerConfig;

/// Below this many qualifying draws a conditional summary falls back to all draws.
pub const MIN_CONDITIONAL_DRAWS: usize = 50;

/// Retained MCMC draws, stored column-wise. `gamma` is row-major, one row of
/// length `m` per draw. Indicator vectors are bit masks; `eta` equals `nu`
/// because the sampler clears level indicators whenever their group is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffPosterior {
    pub m: usize,
    pub h: usize,
    pub n_chains: usize,
    pub burn_in: usize,
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi: Vec<u64>,
    pub nu: Vec<u64>,
    pub inclusion_probs: Vec<f64>,
}

/// Conditional draws plus whether the fallback to all draws was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDraws {
    pub probs: Vec<f64>,
    pub fell_back: bool,
}

impl ConditionalDraws {
    pub fn mean(&self) -> f64 {
        self.probs.iter().sum::<f64>() / self.probs.len() as f64
    }
}

impl EffPosterior {
    pub(crate) fn with_capacity(m: usize, h: usize, mcmc: &SamplerConfig) -> Self {
        let n = mcmc.total_kept();
        EffPosterior {
            m,
            h,
            n_chains: mcmc.chains,
            burn_in: mcmc.burn_in,
            alpha0: Vec::with_capacity(n),
            alpha1: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n * m),
            xi: Vec::with_capacity(n),
            nu: Vec::with_capacity(n),
            inclusion_probs: vec![0.0; m],
        }
    }

    pub(crate) fn push(&mut self, alpha0: f64, alpha1: f64, gamma: &[f64], xi: u64, nu: u64) {
        self.alpha0.push(alpha0);
        self.alpha1.push(alpha1);
        self.gamma.extend_from_slice(gamma);
        self.xi.push(xi);
        self.nu.push(nu);
    }

    pub(crate) fn finish(&mut self) {
        let n = self.n_draws().max(1) as f64;
        let mut counts = vec![0usize; self.m];
        for &mask in &self.nu {
            for (k, c) in counts.iter_mut().enumerate() {
                *c += (mask >> k & 1) as usize;
            }
        }
        self.inclusion_probs = counts.into_iter().map(|c| c as f64 / n).collect();
    }

    pub fn n_draws(&self) -> usize {
        self.alpha0.len()
    }

    pub fn gamma_row(&self, draw: usize) -> &[f64] {
        &self.gamma[draw * self.m..(draw + 1) * self.m]
    }

    pub fn eta(&self, draw: usize) -> CovMask {
        CovMask(self.nu[draw])
    }

    /// Linear predictor offset `sum gamma * z` for one draw.
    pub fn slope_shift(&self, draw: usize, z: CovMask) -> f64 {
        let row = self.gamma_row(draw);
        z.iter().filter(|&k| k < self.m).map(|k| row[k]).sum()
    }

    /// Efficacy probability under draw `draw` at scaled dose `p`.
    pub fn prob(&self, draw: usize, p: f64, z: CovMask) -> f64 {
        eff_prob(self.alpha0[draw], self.alpha1[draw] + self.slope_shift(draw, z), p)
    }

    /// Indices of draws whose indicators include every covariate in `condition_on`.
    pub fn qualifying(&self, condition_on: CovMask) -> Vec<usize> {
        (0..self.n_draws())
            .filter(|&d| self.eta(d).contains_all(condition_on))
            .collect()
    }

    /// Draws to use when conditioning on `condition_on`: the qualifying ones, or
    /// every draw when fewer than [`MIN_CONDITIONAL_DRAWS`] qualify.
    pub fn conditional_indices(&self, condition_on: CovMask) -> Result<(Vec<usize>, bool)> {
        if condition_on.is_empty() {
            return Ok(((0..self.n_draws()).collect(), false));
        }
        if condition_on.iter().any(|k| k >= self.m) {
            return Err(CoreError::input("condition_on", "covariate index out of range"));
        }
        let idx = self.qualifying(condition_on);
        if idx.is_empty() {
            return Err(CoreError::Conditioning(condition_on.iter().collect()));
        }
        if idx.len() < MIN_CONDITIONAL_DRAWS {
            tracing::warn!(
                qualifying = idx.len(),
                "few draws include the conditioning covariates; using all draws"
            );
            return Ok(((0..self.n_draws()).collect(), true));
        }
        Ok((idx, false))
    }
}

/// Covariates whose inclusion probability strictly exceeds `threshold`.
pub fn select_covariates(post: &EffPosterior, threshold: f64) -> CovMask {
    CovMask::from_indices(
        post.inclusion_probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > threshold)
            .map(|(k, _)| k),
    )
}

/// Efficacy probability at `dose` for pattern `z` across draws that include
/// every covariate in `condition_on`.
pub fn eff_draws_conditional(
    post: &EffPosterior,
    scaled_dose: &[f64],
    z: CovMask,
    dose: DoseLevel,
    condition_on: CovMask,
) -> Result<ConditionalDraws> {
    if dose.0 == 0 || dose.0 > scaled_dose.len() {
        return Err(CoreError::input("dose", "dose level outside grid"));
    }
    let p = scaled_dose[dose.index()];
    let (idx, fell_back) = post.conditional_indices(condition_on)?;
    Ok(ConditionalDraws {
        probs: idx.into_iter().map(|d| post.prob(d, p, z)).collect(),
        fell_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(probs: Vec<f64>) -> EffPosterior {
        EffPosterior {
            m: probs.len(),
            h: 1,
            n_chains: 1,
            burn_in: 0,
            alpha0: vec![],
            alpha1: vec![],
            gamma: vec![],
            xi: vec![],
            nu: vec![],
            inclusion_probs: probs,
        }
    }

    #[test]
    fn selection_threshold_is_strict() {
        assert_eq!(select_covariates(&toy(vec![0.9, 0.1]), 0.5), CovMask::single(0));
        assert!(select_covariates(&toy(vec![0.5, 0.5]), 0.5).is_empty());
        assert_eq!(select_covariates(&toy(vec![0.66, 0.64]), 0.65), CovMask::single(0));
    }

    fn draws(nu: Vec<u64>) -> EffPosterior {
        let n = nu.len();
        let mut post = toy(vec![0.0; 2]);
        post.alpha0 = vec![0.0; n];
        post.alpha1 = vec![0.0; n];
        post.gamma = nu
            .iter()
            .flat_map(|&mask| [if mask & 1 == 1 { 1.0 } else { 0.0 }, 0.0])
            .collect();
        post.xi = vec![1; n];
        post.nu = nu;
        post.finish();
        post
    }

    #[test]
    fn conditioning_uses_qualifying_draws() {
        let post = draws([vec![1u64; 60], vec![0u64; 40]].concat());
        assert!((post.inclusion_probs[0] - 0.6).abs() < 1e-12);
        let grid = [0.5, 0.7];
        let all = eff_draws_conditional(&post, &grid, CovMask::single(0), DoseLevel(1), CovMask(0)).unwrap();
        assert_eq!(all.probs.len(), 100);
        let cond = eff_draws_conditional(&post, &grid, CovMask::single(0), DoseLevel(1), CovMask::single(0)).unwrap();
        assert_eq!(cond.probs.len(), 60);
        assert!(!cond.fell_back);
        assert!(cond.mean() > all.mean());
    }

    #[test]
    fn conditioning_falls_back_or_fails() {
        let post = draws([vec![1u64; 10], vec![0u64; 90]].concat());
        let grid = [0.5, 0.7];
        let few = eff_draws_conditional(&post, &grid, CovMask(0), DoseLevel(2), CovMask::single(0)).unwrap();
        assert!(few.fell_back);
        assert_eq!(few.probs.len(), 100);
        let none = eff_draws_conditional(&post, &grid, CovMask(0), DoseLevel(2), CovMask::single(1));
        assert!(matches!(none, Err(CoreError::Conditioning(v)) if v == vec![1]));
    }

    #[test]
    fn all_qualifying_matches_unconditional() {
        let post = draws(vec![1u64; 80]);
        let grid = [0.3, 0.6];
        let a = eff_draws_conditional(&post, &grid, CovMask::single(0), DoseLevel(2), CovMask(0)).unwrap();
        let b = eff_draws_conditional(&post, &grid, CovMask::single(0), DoseLevel(2), CovMask::single(0)).unwrap();
        assert_eq!(a, b);
    }
}
