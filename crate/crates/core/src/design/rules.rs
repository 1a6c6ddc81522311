//! Per-patient dose rules used during dose ranging.

use rand::Rng;

use crate::dose::DoseLevel;
use crate::error::{CoreError, Result};

/// Acceptable doses minus those with estimated efficacy below `kappa` at
/// which at least `s_min` patients have already been treated.
///
/// `est_eff` and `treated` are indexed by grid position.
pub fn admissible_set(
    acceptable: &[DoseLevel],
    est_eff: &[f64],
    treated: &[usize],
    kappa: f64,
    s_min: usize,
) -> Vec<DoseLevel> {
    acceptable
        .iter()
        .copied()
        .filter(|d| est_eff[d.index()] >= kappa || treated[d.index()] < s_min)
        .collect()
}

/// Randomization probabilities proportional to estimated efficacy, uniform
/// when every estimate is zero.
pub fn randomization_probs(eff: &[f64]) -> Result<Vec<f64>> {
    if eff.is_empty() {
        return Err(CoreError::input("eff", "no admissible dose to randomize over"));
    }
    if eff.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(CoreError::input("eff", "efficacy estimates must be finite and non-negative"));
    }
    let total: f64 = eff.iter().sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / eff.len() as f64; eff.len()]);
    }
    Ok(eff.iter().map(|p| p / total).collect())
}

/// Draws a level from `levels` with probability proportional to `eff`.
pub fn randomize_dose<R: Rng + ?Sized>(levels: &[DoseLevel], eff: &[f64], rng: &mut R) -> Result<DoseLevel> {
    if levels.len() != eff.len() {
        return Err(CoreError::input("eff", "one estimate per admissible level is required"));
    }
    let probs = randomization_probs(eff)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (level, p) in levels.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return Ok(*level);
        }
    }
    Ok(*levels.last().expect("non-empty"))
}

/// Lowest level whose estimate lies strictly within `alpha` of the best.
pub fn optimization_dose(levels: &[DoseLevel], eff: &[f64], alpha: f64) -> Result<DoseLevel> {
    if levels.is_empty() || levels.len() != eff.len() {
        return Err(CoreError::input("eff", "one estimate per admissible level is required"));
    }
    let best = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pos = eff.iter().position(|p| (p - best).abs() < alpha).unwrap_or_else(|| {
        eff.iter().position(|p| *p == best).expect("maximum is attained")
    });
    Ok(levels[pos])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn lv(v: &[usize]) -> Vec<DoseLevel> {
        v.iter().map(|&d| DoseLevel(d)).collect()
    }

    #[test]
    fn admissible_examples() {
        let acc = lv(&[1, 2, 3]);
        assert_eq!(admissible_set(&acc, &[0.3, 0.4, 0.5, 0.1], &[5, 5, 5, 0], 0.2, 3), acc);
        assert_eq!(admissible_set(&acc, &[0.05, 0.4, 0.5, 0.1], &[5, 5, 5, 0], 0.2, 3), lv(&[2, 3]));
        assert_eq!(admissible_set(&acc, &[0.3, 0.4, 0.05, 0.1], &[5, 5, 2, 0], 0.2, 3), acc);
    }

    #[test]
    fn randomization_examples() {
        let mut rng = stream(1, Purpose::Scratch, 0, 0);
        assert_eq!(randomize_dose(&lv(&[2]), &[0.4], &mut rng).unwrap(), DoseLevel(2));
        assert_eq!(randomization_probs(&[0.2, 0.2]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(randomization_probs(&[0.0, 0.0, 0.0]).unwrap(), vec![1.0 / 3.0; 3]);
        let levels = lv(&[1, 2]);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| randomize_dose(&levels, &[0.1, 0.3], &mut rng).unwrap() == DoseLevel(1))
            .count();
        assert!((hits as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn optimization_examples() {
        let levels = lv(&[1, 2, 3]);
        assert_eq!(optimization_dose(&levels, &[0.50, 0.70, 0.72], 0.20).unwrap(), DoseLevel(2));
        assert_eq!(optimization_dose(&levels, &[0.10, 0.40, 0.70], 0.20).unwrap(), DoseLevel(3));
        assert_eq!(optimization_dose(&levels, &[0.5, 0.5, 0.5], 0.0).unwrap(), DoseLevel(1));
    }
}
