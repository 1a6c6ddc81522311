//! TITE-CRM with the one-parameter power model.
//!
//! Toxicity at level `j` is `p_j^exp(a)` where `p_j` is the skeleton. The
//! posterior mean of `a` under a weighted binomial likelihood and a centred
//! normal prior is computed by adaptive Gauss–Legendre quadrature on
//! `a in [-10, 10]`, so fits are exactly reproducible.

use serde::{Deserialize, Serialize};

use crate::dose::{DoseGrid, DoseLevel};
use crate::error::{CoreError, Result};
use crate::numerics::{adaptive_integrate, GaussLegendre};
use crate::scalar::{lit, Real};

/// Prior variance of `a` used in the reference design.
pub const DEFAULT_PRIOR_VAR: f64 = 1.34;

/// Integration range for the model parameter.
pub const A_BOUND: f64 = 10.0;

/// Two probabilities closer than this count as tied.
const TIE_EPS: f64 = 1e-12;

/// One patient's toxicity information at a decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToxObservation<T> {
    pub dose: DoseLevel,
    pub y_tox: bool,
    /// Weeks of follow-up so far.
    pub follow_time: T,
    /// Length of the toxicity observation window, weeks.
    pub window: T,
}

/// Follow-up weight: 1 for an observed toxicity, otherwise the observed
/// fraction of the window capped at 1.
pub fn tox_weight<T: Real>(obs: &ToxObservation<T>) -> Result<T> {
    follow_up_weight(obs.y_tox, obs.follow_time, obs.window)
}

pub(crate) fn follow_up_weight<T: Real>(event: bool, follow_time: T, window: T) -> Result<T> {
    if !(window > T::zero()) {
        return Err(CoreError::input("window", "observation window must be positive"));
    }
    if follow_time < T::zero() || follow_time.is_nan() {
        return Err(CoreError::input("follow_time", "follow-up time must be non-negative"));
    }
    if event {
        return Ok(T::one());
    }
    Ok((follow_time / window).min(T::one()))
}

/// Power-model toxicity probability `p^exp(a)`.
#[inline]
pub fn tox_prob<T: Real>(p: T, a: T) -> T {
    (a.exp() * p.ln()).exp()
}

/// Posterior summary of the power-model parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct ToxPosterior<T> {
    pub post_mean_a: T,
    pub post_sd_a: T,
    /// `p_j^exp(a_hat)` per level.
    pub post_probs: Vec<T>,
    pub n_used: usize,
}

/// Observations collapsed to distinct `(level, outcome, weight)` cells.
struct Cell<T> {
    level: usize,
    event: bool,
    weight: T,
    count: T,
}

fn collapse<T: Real>(data: &[ToxObservation<T>], levels: usize) -> Result<Vec<Cell<T>>> {
    let mut cells: Vec<Cell<T>> = Vec::new();
    for (i, obs) in data.iter().enumerate() {
        if obs.dose.0 == 0 || obs.dose.0 > levels {
            return Err(CoreError::input(format!("data[{i}].dose"), "dose level outside grid"));
        }
        let w = tox_weight(obs)?;
        let level = obs.dose.index();
        match cells
            .iter_mut()
            .find(|c| c.level == level && c.event == obs.y_tox && c.weight == w)
        {
            Some(c) => c.count = c.count + T::one(),
            None => cells.push(Cell {
                level,
                event: obs.y_tox,
                weight: w,
                count: T::one(),
            }),
        }
    }
    Ok(cells)
}

fn log_likelihood<T: Real>(cells: &[Cell<T>], log_skeleton: &[T], a: T) -> T {
    let scale = a.exp();
    let mut ll = T::zero();
    for c in cells {
        let log_pi = scale * log_skeleton[c.level];
        let term = if c.event {
            c.weight.ln() + log_pi
        } else {
            (-(c.weight * log_pi.exp())).ln_1p()
        };
        ll = ll + c.count * term;
    }
    ll
}

/// Posterior mean of `a` given weighted toxicity data and an `N(0, prior_sd^2)` prior.
pub fn fit_tox_posterior<T: Real>(
    data: &[ToxObservation<T>],
    grid: &DoseGrid<T>,
    prior_sd: T,
) -> Result<ToxPosterior<T>> {
    if !(prior_sd > T::zero()) {
        return Err(CoreError::input("prior_sd", "must be positive"));
    }
    let cells = collapse(data, grid.len())?;
    let log_skeleton: Vec<T> = grid.skeleton.iter().map(|p| p.ln()).collect();
    let half: T = lit(0.5);
    let log_post = |a: T| log_likelihood(&cells, &log_skeleton, a) - half * (a / prior_sd).powi(2);

    // Shift by the maximum over a coarse scan so the integrand peaks near 1.
    let bound: T = lit(A_BOUND);
    let scan = 400;
    let mut shift = T::neg_infinity();
    for i in 0..=scan {
        let a = -bound + (bound + bound) * lit::<T>(i as f64 / scan as f64);
        let v = log_post(a);
        if v > shift {
            shift = v;
        }
    }
    if !shift.is_finite() {
        return Err(CoreError::numerical(
            "toxicity posterior",
            format!("log-posterior not finite on the integration range (max = {shift:?})"),
        ));
    }

    let rule = GaussLegendre::<T>::new(10);
    let tol = (lit::<T>(1e-13)).max(T::epsilon() * lit(64.0));
    let [z, m1, m2] = adaptive_integrate(&rule, -bound, bound, 20, tol, 24, &mut |a: T| {
        let f = (log_post(a) - shift).exp();
        [f, a * f, a * a * f]
    });
    if !(z > T::zero()) || !m1.is_finite() {
        return Err(CoreError::numerical(
            "toxicity posterior",
            format!("normalising integral {z:?}, first moment {m1:?}"),
        ));
    }
    let mean = m1 / z;
    let var = (m2 / z - mean * mean).max(T::zero());
    Ok(ToxPosterior {
        post_mean_a: mean,
        post_sd_a: var.sqrt(),
        post_probs: grid.skeleton.iter().map(|p| tox_prob(*p, mean)).collect(),
        n_used: data.len(),
    })
}

/// Index of the probability closest to `target`; ties go to the lower index.
pub fn closest_to_target<T: Real>(probs: &[T], target: T) -> usize {
    let eps: T = lit(TIE_EPS);
    let mut best = 0;
    let mut best_gap = (probs[0] - target).abs();
    for (j, p) in probs.iter().enumerate().skip(1) {
        let gap = (*p - target).abs();
        if gap < best_gap - eps {
            best = j;
            best_gap = gap;
        }
    }
    best
}

/// CRM recommendation: level whose posterior toxicity is closest to `p_t`,
/// never more than one level above the highest level tried so far.
pub fn next_dose_tox<T: Real>(post: &ToxPosterior<T>, p_t: T, highest_tried: DoseLevel) -> DoseLevel {
    let j = closest_to_target(&post.post_probs, p_t);
    let cap = (highest_tried.0 + 1).min(post.post_probs.len());
    DoseLevel::from_index(j).min(DoseLevel(cap))
}

/// All levels at or below the estimated MTD.
pub fn acceptable_set<T: Real>(mtd: DoseLevel, grid: &DoseGrid<T>) -> Vec<DoseLevel> {
    (1..=mtd.0.min(grid.len())).map(DoseLevel).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> DoseGrid<f64> {
        DoseGrid::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.05, 0.12, 0.25, 0.38]).unwrap()
    }

    fn obs(level: usize, y: bool) -> ToxObservation<f64> {
        ToxObservation {
            dose: DoseLevel(level),
            y_tox: y,
            follow_time: 4.0,
            window: 4.0,
        }
    }

    #[test]
    fn weights() {
        let mk = |y, t| ToxObservation { dose: DoseLevel(1), y_tox: y, follow_time: t, window: 4.0 };
        assert_eq!(tox_weight(&mk(true, 0.5)).unwrap(), 1.0);
        assert_eq!(tox_weight(&mk(false, 2.0)).unwrap(), 0.5);
        assert_eq!(tox_weight(&mk(false, 6.0)).unwrap(), 1.0);
        assert!(tox_weight(&mk(false, -1.0)).is_err());
        let bad = ToxObservation { dose: DoseLevel(1), y_tox: false, follow_time: 1.0, window: 0.0 };
        assert!(tox_weight(&bad).is_err());
    }

    #[test]
    fn power_model_values() {
        assert_eq!(tox_prob(0.25, 0.0), 0.25);
        assert!((tox_prob(0.25f64, 2f64.ln()) - 0.0625).abs() < 1e-15);
        // 0.12^(e^0.3) evaluated with 30-digit arithmetic: 0.0571511132939...
        assert!((tox_prob(0.12f64, 0.3) - 0.057_151_113_293_951).abs() < 1e-14);
        assert!((tox_prob(0.12f32, 0.3) - 0.057_151_11).abs() < 1e-6);
    }

    #[test]
    fn prior_only_posterior_is_centred() {
        let post = fit_tox_posterior(&[], &grid(), DEFAULT_PRIOR_VAR.sqrt()).unwrap();
        assert!(post.post_mean_a.abs() < 1e-12);
        assert!((post.post_sd_a - DEFAULT_PRIOR_VAR.sqrt()).abs() < 1e-9);
        for (a, b) in post.post_probs.iter().zip(&grid().skeleton) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn toxic_outcomes_pull_a_down() {
        let data = vec![obs(3, true), obs(3, true), obs(3, true)];
        let post = fit_tox_posterior(&data, &grid(), DEFAULT_PRIOR_VAR.sqrt()).unwrap();
        assert!(post.post_mean_a < 0.0);
        assert!(post.post_probs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn next_dose_rules() {
        let post = |probs: Vec<f64>| ToxPosterior { post_mean_a: 0.0, post_sd_a: 1.0, post_probs: probs, n_used: 0 };
        let p = post(vec![0.05, 0.12, 0.25, 0.38]);
        assert_eq!(next_dose_tox(&p, 0.25, DoseLevel(3)), DoseLevel(3));
        assert_eq!(next_dose_tox(&p, 0.25, DoseLevel(1)), DoseLevel(2));
        let tie = post(vec![0.10, 0.20, 0.30, 0.40]);
        assert_eq!(next_dose_tox(&tie, 0.25, DoseLevel(4)), DoseLevel(2));
    }

    #[test]
    fn acceptable_sets() {
        let g = grid();
        assert_eq!(acceptable_set(DoseLevel(3), &g), vec![DoseLevel(1), DoseLevel(2), DoseLevel(3)]);
        assert_eq!(acceptable_set(DoseLevel(1), &g), vec![DoseLevel(1)]);
        assert_eq!(acceptable_set(DoseLevel(4), &g).len(), 4);
    }

    #[test]
    fn rejects_out_of_grid_levels() {
        let err = fit_tox_posterior(&[obs(5, false)], &grid(), 1.0).unwrap_err();
        assert!(matches!(err, CoreError::InvalidInput { .. }));
    }
}
