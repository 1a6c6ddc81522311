//! Spike-and-slab inclusion probability against direct integration.
//!
//! With one two-level characteristic there is a single dummy `z`, and
//! `P(eta = 1 | D) = q m1 / (q m1 + (1 - q) m0)` with `q = q_group * q_level`,
//! where `m1` integrates the likelihood over `(alpha0, alpha1, gamma)` and `m0`
//! over `(alpha0, alpha1)` with `gamma = 0`.

use doseopt_core::efficacy::{fit_eff_posterior, CovMask, CovariateSchema, EffModel, EffObservation};
use doseopt_core::mcmc::SamplerConfig;
use doseopt_core::DoseLevel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCALED: [f64; 4] = [0.08, 0.2, 0.4, 0.6];
const PRIOR_VAR: f64 = 5.0;
const SLAB_SD: f64 = 5.0;

fn schema() -> CovariateSchema {
    serde_json::from_str(
        r#"{"characteristic": [{"name": "marker", "levels": ["negative", "positive"], "reference": "negative"}]}"#,
    )
    .unwrap()
}

fn log_lik(data: &[EffObservation], a0: f64, a1: f64, g: f64) -> f64 {
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

/// Trapezoid nodes and normal-prior weights on `[-8 sd, 8 sd]`.
fn nodes(sd: f64, n: usize) -> Vec<(f64, f64)> {
    let h = 16.0 * sd / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = -8.0 * sd + i as f64 * h;
            let w = h * (-0.5 * (x / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            (x, w)
        })
        .collect()
}

fn oracle_inclusion(data: &[EffObservation], q: f64) -> f64 {
    let alpha = nodes(PRIOR_VAR.sqrt(), 161);
    let gamma = nodes(SLAB_SD, 281);
    let (mut m0, mut m1) = (0.0, 0.0);
    for &(a0, w0) in &alpha {
        for &(a1, w1) in &alpha {
            let w = w0 * w1;
            m0 += w * log_lik(data, a0, a1, 0.0).exp();
            let inner: f64 = gamma.iter().map(|&(g, wg)| wg * log_lik(data, a0, a1, g).exp()).sum();
            m1 += w * inner;
        }
    }
    q * m1 / (q * m1 + (1.0 - q) * m0)
}

fn random_dataset(rng: &mut ChaCha8Rng) -> Vec<EffObservation> {
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

#[test]
fn sampler_inclusion_matches_direct_integration() {
    let schema = schema();
    let model = EffModel::new(&schema, &SCALED);
    let mcmc = SamplerConfig {
        chains: 4,
        iterations: 22_000,
        burn_in: 2_000,
        thin: 1,
    };
    let q = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let data = random_dataset(&mut rng);
        let oracle = oracle_inclusion(&data, q);
        let post = fit_eff_posterior(&data, &model, &mcmc, 1000 + k).unwrap();
        let diff = (post.inclusion_probs[0] - oracle).abs();
        worst = worst.max(diff);
        assert!(
            diff < 0.03,
            "dataset {k} (n = {}): sampler {:.4} vs oracle {:.4}",
            data.len(),
            post.inclusion_probs[0],
            oracle
        );
    }
    eprintln!("largest inclusion error = {worst:.4}");
}

#[test]
fn oracle_is_resolution_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_dataset(&mut rng);
    let coarse = {
        let alpha = nodes(PRIOR_VAR.sqrt(), 121);
        let gamma = nodes(SLAB_SD, 201);
        let (mut m0, mut m1) = (0.0, 0.0);
        for &(a0, w0) in &alpha {
            for &(a1, w1) in &alpha {
                m0 += w0 * w1 * log_lik(&data, a0, a1, 0.0).exp();
                m1 += w0 * w1 * gamma.iter().map(|&(g, wg)| wg * log_lik(&data, a0, a1, g).exp()).sum::<f64>();
            }
        }
        0.25 * m1 / (0.25 * m1 + 0.75 * m0)
    };
    assert!((coarse - oracle_inclusion(&data, 0.25)).abs() < 1e-4);
}
