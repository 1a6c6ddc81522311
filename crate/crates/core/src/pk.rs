//! Exposure model: log-AUC regressed on log-dose, with a conjugate normal
//! prior on the coefficients given `sigma` and a Beta prior on `sigma`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dose::{DoseGrid, DoseLevel};
use crate::error::{CoreError, Result};
use crate::mcmc::{RwScale, SamplerConfig};
use crate::numerics::norm_sf;
use crate::toxicity::closest_to_target;

/// Mean clearance (L/h) behind the reference prior mean.
pub const REFERENCE_CLEARANCE: f64 = 19.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkObservation {
    pub dose: DoseLevel,
    /// Area under the concentration curve, mg·L⁻¹·h.
    pub auc: f64,
}

impl PkObservation {
    pub fn log_auc(&self) -> f64 {
        self.auc.ln()
    }
}

/// `beta | sigma ~ N2(mean, sigma^2 * cov_scale)`, `sigma ~ Beta(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkPrior {
    pub mean: [f64; 2],
    pub cov_scale: [[f64; 2]; 2],
    pub a_beta: f64,
    pub b_beta: f64,
}

impl PkPrior {
    /// `m = (-log CL, 1)`, `G = diag(1000, 1000)`, `sigma ~ Beta(1, 1)`.
    pub fn reference(clearance_mean: f64) -> Self {
        PkPrior {
            mean: [-clearance_mean.ln(), 1.0],
            cov_scale: [[1000.0, 0.0], [0.0, 1000.0]],
            a_beta: 1.0,
            b_beta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.cov_scale;
        if (g[0][1] - g[1][0]).abs() > 1e-12 * (g[0][1].abs() + 1.0) {
            return Err(CoreError::input("pk_prior.cov_scale", "must be symmetric"));
        }
        if !(g[0][0] > 0.0 && g[0][0] * g[1][1] - g[0][1] * g[1][0] > 0.0) {
            return Err(CoreError::input("pk_prior.cov_scale", "must be positive definite"));
        }
        if !(self.a_beta > 0.0 && self.b_beta > 0.0) {
            return Err(CoreError::input("pk_prior.a_beta", "Beta parameters must be positive"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(CoreError::input("pk_prior.mean", "must be finite"));
        }
        Ok(())
    }
}

impl Default for PkPrior {
    fn default() -> Self {
        PkPrior::reference(REFERENCE_CLEARANCE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkDraw {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PkPosterior {
    pub draws: Vec<PkDraw>,
}

impl PkPosterior {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn mean(&self) -> PkDraw {
        let n = self.draws.len() as f64;
        let (mut b0, mut b1, mut s) = (0.0, 0.0, 0.0);
        for d in &self.draws {
            b0 += d.beta0;
            b1 += d.beta1;
            s += d.sigma;
        }
        PkDraw {
            beta0: b0 / n,
            beta1: b1 / n,
            sigma: s / n,
        }
    }
}

type Mat2 = [[f64; 2]; 2];

fn inv2(m: Mat2) -> Mat2 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

fn chol2(m: Mat2) -> Mat2 {
    let l00 = m[0][0].sqrt();
    let l10 = m[1][0] / l00;
    let l11 = (m[1][1] - l10 * l10).max(0.0).sqrt();
    [[l00, 0.0], [l10, l11]]
}

/// Gibbs sampler: conjugate normal update of `beta | sigma`, then a reflecting
/// random-walk Metropolis step for `sigma | beta` on (0, 1).
pub fn fit_pk_posterior<R: Rng + ?Sized>(
    data: &[PkObservation],
    grid: &DoseGrid<f64>,
    prior: &PkPrior,
    mcmc: &SamplerConfig,
    rng: &mut R,
) -> Result<PkPosterior> {
    prior.validate()?;
    mcmc.validate()?;
    let mut xs = Vec::with_capacity(data.len());
    let mut vs = Vec::with_capacity(data.len());
    for (i, obs) in data.iter().enumerate() {
        if !grid.contains(obs.dose) {
            return Err(CoreError::input(format!("pk[{i}].dose"), "dose level outside grid"));
        }
        if !(obs.auc > 0.0 && obs.auc.is_finite()) {
            return Err(CoreError::input(format!("pk[{i}].auc"), "AUC must be positive"));
        }
        xs.push(grid.dosage[obs.dose.index()].ln());
        vs.push(obs.log_auc());
    }
    let mut levels: Vec<DoseLevel> = data.iter().map(|o| o.dose).collect();
    levels.sort();
    levels.dedup();
    if !data.is_empty() && levels.len() < 2 {
        tracing::warn!("PK data cover a single dose level; slope is prior-dominated");
    }

    let n = data.len() as f64;
    let g_inv = inv2(prior.cov_scale);
    let (sx, sxx, sv, sxv) = xs.iter().zip(&vs).fold((0.0, 0.0, 0.0, 0.0), |acc, (x, v)| {
        (acc.0 + x, acc.1 + x * x, acc.2 + v, acc.3 + x * v)
    });
    let precision = [[g_inv[0][0] + n, g_inv[0][1] + sx], [g_inv[1][0] + sx, g_inv[1][1] + sxx]];
    let post_cov = inv2(precision);
    let chol = chol2(post_cov);
    let gm = [
        g_inv[0][0] * prior.mean[0] + g_inv[0][1] * prior.mean[1],
        g_inv[1][0] * prior.mean[0] + g_inv[1][1] * prior.mean[1],
    ];
    let rhs = [gm[0] + sv, gm[1] + sxv];
    let mu = [
        post_cov[0][0] * rhs[0] + post_cov[0][1] * rhs[1],
        post_cov[1][0] * rhs[0] + post_cov[1][1] * rhs[1],
    ];

    let quad = |b0: f64, b1: f64| -> f64 {
        let ssr: f64 = xs.iter().zip(&vs).map(|(x, v)| (v - b0 - b1 * x).powi(2)).sum();
        let d = [b0 - prior.mean[0], b1 - prior.mean[1]];
        let pen = d[0] * (g_inv[0][0] * d[0] + g_inv[0][1] * d[1]) + d[1] * (g_inv[1][0] * d[0] + g_inv[1][1] * d[1]);
        ssr + pen
    };
    let log_cond_sigma = |s: f64, q: f64| -> f64 {
        -(n + 2.0) * s.ln() - q / (2.0 * s * s) + (prior.a_beta - 1.0) * s.ln() + (prior.b_beta - 1.0) * (-s).ln_1p()
    };

    let mut draws = Vec::with_capacity(mcmc.total_kept());
    for _chain in 0..mcmc.chains {
        let mut sigma: f64 = 0.5;
        let mut step = RwScale::new(0.1);
        for it in 0..mcmc.iterations {
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = StandardNormal.sample(rng);
            let b0 = mu[0] + sigma * chol[0][0] * z0;
            let b1 = mu[1] + sigma * (chol[1][0] * z0 + chol[1][1] * z1);
            let q = quad(b0, b1);
            // Several cheap sigma updates per sweep keep the 1-D chain mixing.
            let adapting = it < mcmc.burn_in;
            for _ in 0..3 {
                let z: f64 = StandardNormal.sample(rng);
                let mut prop = sigma + step.scale * z;
                while !(prop > 0.0 && prop < 1.0) {
                    prop = if prop <= 0.0 { -prop } else { 2.0 - prop };
                    if prop == 0.0 || prop == 1.0 {
                        prop = sigma;
                    }
                }
                let log_ratio = log_cond_sigma(prop, q) - log_cond_sigma(sigma, q);
                let u: f64 = rng.random();
                let accept = u.ln() < log_ratio;
                if accept {
                    sigma = prop;
                }
                step.record(accept, adapting);
            }
            if !(b0.is_finite() && b1.is_finite() && sigma.is_finite()) {
                return Err(CoreError::numerical(
                    "pk sampler",
                    format!("non-finite state beta=({b0}, {b1}) sigma={sigma} at iteration {it}"),
                ));
            }
            if mcmc.keeps(it) {
                draws.push(PkDraw { beta0: b0, beta1: b1, sigma });
            }
        }
    }
    Ok(PkPosterior { draws })
}

/// Posterior probability that AUC exceeds `threshold` at `level`.
pub fn pk_exceed_prob(post: &PkPosterior, level: DoseLevel, grid: &DoseGrid<f64>, threshold: f64) -> f64 {
    let log_l = threshold.ln();
    let log_d = grid.dosage[level.index()].ln();
    let total: f64 = post
        .draws
        .iter()
        .map(|d| norm_sf((log_l - d.beta0 - d.beta1 * log_d) / d.sigma))
        .sum();
    total / post.draws.len() as f64
}

/// Exceedance probability at every level of the grid.
pub fn exceed_probs(post: &PkPosterior, grid: &DoseGrid<f64>, threshold: f64) -> Vec<f64> {
    grid.levels().map(|l| pk_exceed_prob(post, l, grid, threshold)).collect()
}

/// Level whose exceedance probability is closest to `p_t` (ties to the lower level).
pub fn mtd_pk(post: &PkPosterior, grid: &DoseGrid<f64>, threshold: f64, p_t: f64) -> DoseLevel {
    mtd_from_exceedance(&exceed_probs(post, grid, threshold), p_t)
}

pub fn mtd_from_exceedance(probs: &[f64], p_t: f64) -> DoseLevel {
    DoseLevel::from_index(closest_to_target(probs, p_t))
}

/// PK-adjusted MTD: the more conservative of the two estimates.
pub fn adjust_mtd(mtd_tox: DoseLevel, mtd_pk: DoseLevel) -> DoseLevel {
    mtd_tox.min(mtd_pk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtd_from_probabilities() {
        assert_eq!(mtd_from_exceedance(&[0.05, 0.12, 0.25, 0.38], 0.25), DoseLevel(3));
        assert_eq!(mtd_from_exceedance(&[0.40, 0.55, 0.70, 0.85], 0.25), DoseLevel(1));
        assert_eq!(mtd_from_exceedance(&[0.20, 0.30, 0.6, 0.9], 0.25), DoseLevel(1));
    }

    #[test]
    fn adjustment_is_the_minimum() {
        assert_eq!(adjust_mtd(DoseLevel(3), DoseLevel(4)), DoseLevel(3));
        assert_eq!(adjust_mtd(DoseLevel(4), DoseLevel(3)), DoseLevel(3));
        assert_eq!(adjust_mtd(DoseLevel(2), DoseLevel(2)), DoseLevel(2));
    }

    #[test]
    fn threshold_at_mean_gives_one_half() {
        let grid = DoseGrid::new(vec![100.0, 740.0], vec![0.1, 0.2]).unwrap();
        let l: f64 = 46.31;
        let beta1 = 0.9;
        let beta0 = l.ln() - beta1 * 740f64.ln();
        let post = PkPosterior {
            draws: vec![PkDraw { beta0, beta1, sigma: 0.37 }, PkDraw { beta0, beta1, sigma: 0.9 }],
        };
        assert!((pk_exceed_prob(&post, DoseLevel(2), &grid, l) - 0.5).abs() < 1e-12);
        assert!(pk_exceed_prob(&post, DoseLevel(2), &grid, 1e300) < 1e-12);
    }

    #[test]
    fn prior_validation() {
        let mut p = PkPrior::default();
        assert!(p.validate().is_ok());
        p.cov_scale = [[1.0, 2.0], [2.0, 1.0]];
        assert!(p.validate().is_err());
        p = PkPrior { a_beta: 0.0, ..PkPrior::default() };
        assert!(p.validate().is_err());
    }
}
