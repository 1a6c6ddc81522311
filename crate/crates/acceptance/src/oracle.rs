//! Brute-force quadrature oracles and the random datasets they are run on.

use doseopt_core::efficacy::{CovMask, EffObservation};
use doseopt_core::toxicity::ToxObservation;
use doseopt_core::DoseLevel;
use rand::Rng;

/// Skeleton shared by the toxicity datasets.
pub const SKELETON: [f64; 4] = [0.0615790030763867, 0.1400496896645594, 0.25, 0.37619626933374656];

/// Scaled doses for the efficacy datasets.
pub const SCALED: [f64; 4] = [0.08, 0.2, 0.4, 0.6];

/// Posterior mean of the power-model parameter `a` by composite Simpson
/// on `[-20, 20]` with 8000 intervals, from the weighted likelihood
/// `prod (w pi)^y (1 - w pi)^(1-y)`, `pi = p_j^exp(a)`, `a ~ N(0, prior_var)`.
pub fn crm_posterior_mean(data: &[ToxObservation<f64>], skeleton: &[f64], prior_var: f64) -> f64 {
    let log_post = |a: f64| {
        let mut lp = -0.5 * a * a / prior_var;
        for o in data {
            let pi = skeleton[o.dose.index()].powf(a.exp());
            let w = if o.y_tox { 1.0 } else { (o.follow_time / o.window).min(1.0) };
            lp += if o.y_tox { (w * pi).ln() } else { (1.0 - w * pi).ln() };
        }
        lp
    };
    let (lo, hi, n) = (-20.0, 20.0, 8000usize);
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| log_post(lo + i as f64 * h)).collect();
    let peak = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1) = (0.0, 0.0);
    for (i, v) in vals.iter().enumerate() {
        let wt = match i {
            0 => 1.0,
            _ if i == n => 1.0,
            _ if i % 2 == 1 => 4.0,
            _ => 2.0,
        };
        let f = (v - peak).exp() * wt;
        z += f;
        m1 += (lo + i as f64 * h) * f;
    }
    m1 / z
}

/// Up to 80 patients on four levels, a third of them still in follow-up.
pub fn random_tox_dataset<R: Rng + ?Sized>(rng: &mut R) -> Vec<ToxObservation<f64>> {
    let n = rng.random_range(0..=80);
    let true_a: f64 = rng.random_range(-1.5..1.5);
    (0..n)
        .map(|_| {
            let level = rng.random_range(1..=4);
            let pi = SKELETON[level - 1].powf(true_a.exp());
            let y = rng.random::<f64>() < pi;
            let follow: f64 = if rng.random::<f64>() < 0.33 { rng.random_range(0.0..4.0) } else { 4.0 };
            ToxObservation {
                dose: DoseLevel(level),
                y_tox: y,
                follow_time: if y { follow.max(0.1) } else { follow },
                window: 4.0,
            }
        })
        .collect()
}

/// Prior settings of the one-dummy efficacy model the BSGS oracle integrates.
#[derive(Debug, Clone, Copy)]
pub struct BsgsPrior {
    pub intercept_var: f64,
    pub slab_sd: f64,
    /// Prior inclusion probability, group times level.
    pub inclusion: f64,
}

fn eff_log_lik(data: &[EffObservation], a0: f64, a1: f64, g: f64) -> f64 {
    let plateau = (-a0.exp()).exp();
    data.iter()
        .map(|o| {
            let eta = a1 + if o.z.get(0) { g } else { 0.0 };
            let pi = plateau * (1.0 - (-eta.exp() * SCALED[o.dose.index()]).exp());
            if o.y_eff {
                pi.ln()
            } else {
                let w = (o.follow_time / o.window).min(1.0);
                (1.0 - w * pi).ln()
            }
        })
        .sum()
}

/// Trapezoid nodes with normal-prior weights on `[-8 sd, 8 sd]`.
fn normal_nodes(sd: f64, n: usize) -> Vec<(f64, f64)> {
    let h = 16.0 * sd / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = -8.0 * sd + i as f64 * h;
            let w = h * (-0.5 * (x / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            (x, w)
        })
        .collect()
}

/// `P(eta = 1 | D) = q m1 / (q m1 + (1 - q) m0)`, where `m1` integrates the
/// likelihood over `(alpha0, alpha1, gamma)` and `m0` over `(alpha0, alpha1)`
/// with the dummy's coefficient at zero. `alpha_nodes` and `gamma_nodes` set
/// the resolution per axis.
pub fn bsgs_inclusion(data: &[EffObservation], prior: BsgsPrior, alpha_nodes: usize, gamma_nodes: usize) -> f64 {
    let alpha = normal_nodes(prior.intercept_var.sqrt(), alpha_nodes);
    let gamma = normal_nodes(prior.slab_sd, gamma_nodes);
    let (mut m0, mut m1) = (0.0, 0.0);
    for &(a0, w0) in &alpha {
        for &(a1, w1) in &alpha {
            let w = w0 * w1;
            m0 += w * eff_log_lik(data, a0, a1, 0.0).exp();
            let inner: f64 = gamma.iter().map(|&(g, wg)| wg * eff_log_lik(data, a0, a1, g).exp()).sum();
            m1 += w * inner;
        }
    }
    let q = prior.inclusion;
    q * m1 / (q * m1 + (1.0 - q) * m0)
}

/// One to six patients with a single binary marker of random effect size.
pub fn random_eff_dataset<R: Rng + ?Sized>(rng: &mut R) -> Vec<EffObservation> {
    let n = rng.random_range(1..=6);
    let effect: f64 = rng.random_range(-3.0..3.0);
    (0..n)
        .map(|_| {
            let level = rng.random_range(1..=4);
            let z = rng.random::<bool>();
            let eta: f64 = 0.5 + if z { effect } else { 0.0 };
            let pi = 0.8 * (1.0 - (-eta.exp() * SCALED[level - 1]).exp());
            let y = rng.random::<f64>() < pi;
            let follow = if !y && rng.random::<f64>() < 0.3 { rng.random_range(1.0..8.0) } else { 8.0 };
            EffObservation {
                dose: DoseLevel(level),
                z: if z { CovMask::single(0) } else { CovMask::EMPTY },
                y_eff: y,
                follow_time: if y { rng.random_range(0.5..8.0) } else { follow },
                window: 8.0,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn crm_oracle_recovers_the_prior_mean_without_data() {
        assert!(crm_posterior_mean(&[], &SKELETON, 1.34).abs() < 1e-9);
    }

    #[test]
    fn bsgs_oracle_recovers_the_prior_without_data() {
        let prior = BsgsPrior {
            intercept_var: 5.0,
            slab_sd: 5.0,
            inclusion: 0.25,
        };
        assert!((bsgs_inclusion(&[], prior, 41, 61) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn bsgs_oracle_is_resolution_stable() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let data = random_eff_dataset(&mut rng);
        let prior = BsgsPrior {
            intercept_var: 5.0,
            slab_sd: 5.0,
            inclusion: 0.25,
        };
        let coarse = bsgs_inclusion(&data, prior, 121, 201);
        let fine = bsgs_inclusion(&data, prior, 161, 281);
        assert!((coarse - fine).abs() < 1e-4, "{coarse} vs {fine}");
    }
}
