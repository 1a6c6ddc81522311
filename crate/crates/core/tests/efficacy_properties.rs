use doseopt_core::efficacy::{
    eff_prob, fit_eff_posterior, select_covariates, CovMask, CovariateSchema, EffModel, EffObservation, SlabKind,
};
use doseopt_core::mcmc::SamplerConfig;
use doseopt_core::DoseLevel;
use proptest::prelude::*;

const SCALED: [f64; 4] = [0.1, 0.25, 0.45, 0.6];

fn schema() -> CovariateSchema {
    serde_json::from_str(
        r#"{"characteristic": [
            {"name": "prior", "levels": ["no", "yes"], "reference": "no", "slab": "truncated_negative"},
            {"name": "sex", "levels": ["m", "f"], "reference": "m"},
            {"name": "gene", "levels": ["A", "B", "C"], "reference": "C"},
            {"name": "alt", "levels": ["fusion", "amp", "other"], "reference": "other", "slab": "truncated_positive"}
        ]}"#,
    )
    .unwrap()
}

fn long_run() -> SamplerConfig {
    SamplerConfig {
        chains: 2,
        iterations: 30_000,
        burn_in: 1_000,
        thin: 1,
    }
}

#[test]
fn empty_data_recovers_prior_inclusion() {
    let schema = schema();
    let model = EffModel::new(&schema, &SCALED);
    let post = fit_eff_posterior(&[], &model, &long_run(), 3).unwrap();
    for (m, p) in post.inclusion_probs.iter().enumerate() {
        assert!((p - 0.25).abs() < 0.03, "covariate {m}: {p}");
    }
}

fn synthetic_data(n: usize) -> Vec<EffObservation> {
    // Deterministic covariate cycle; responders concentrated in gene A.
    (0..n)
        .map(|i| {
            let z = CovMask((i as u64 * 2654435761) % 64 & 0b11_1111);
            let dose = DoseLevel(1 + i % 4);
            let gene_a = z.get(2);
            EffObservation {
                dose,
                z,
                y_eff: if gene_a { i % 5 != 0 } else { i % 4 == 0 },
                follow_time: 8.0,
                window: 8.0,
            }
        })
        .collect()
}

#[test]
fn draws_respect_hierarchy_and_truncation() {
    let schema = schema();
    let model = EffModel::new(&schema, &SCALED);
    let post = fit_eff_posterior(&synthetic_data(40), &model, &SamplerConfig::EFFICACY, 9).unwrap();
    let m = schema.m();
    for d in 0..post.n_draws() {
        let gamma = post.gamma_row(d);
        for (k, cov) in schema.covariates().iter().enumerate() {
            let on = post.nu[d] >> k & 1 == 1;
            if on {
                assert_eq!(post.xi[d] >> cov.group & 1, 1, "level on while its group is off");
            } else {
                assert_eq!(gamma[k], 0.0);
            }
            match cov.slab {
                SlabKind::TruncatedPositive => assert!(gamma[k] >= 0.0),
                SlabKind::TruncatedNegative => assert!(gamma[k] <= 0.0),
                SlabKind::Gaussian => {}
            }
        }
        assert_eq!(gamma.len(), m);
    }
}

#[test]
fn same_seed_same_draws() {
    let schema = schema();
    let model = EffModel::new(&schema, &SCALED);
    let data = synthetic_data(20);
    let a = fit_eff_posterior(&data, &model, &SamplerConfig::EFFICACY, 4).unwrap();
    let b = fit_eff_posterior(&data, &model, &SamplerConfig::EFFICACY, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn inactive_covariates_never_enter() {
    let schema = schema();
    let active = CovMask::from_indices([0, 2]);
    let model = EffModel::new(&schema, &SCALED).with_active(active);
    let post = fit_eff_posterior(&synthetic_data(30), &model, &SamplerConfig::EFFICACY, 2).unwrap();
    assert!(post.nu.iter().all(|&nu| CovMask(nu).and(active) == CovMask(nu)));
    let selected = select_covariates(&post, 0.5);
    assert!(active.contains_all(selected));
}

#[test]
fn rejects_scaled_doses_outside_unit_interval() {
    let schema = schema();
    let bad = [0.1, 0.2, 1.0, 0.5];
    let model = EffModel::new(&schema, &bad);
    assert!(fit_eff_posterior(&[], &model, &SamplerConfig::EFFICACY, 0).is_err());
}

proptest! {
    #[test]
    fn efficacy_is_monotone_in_dose_and_slope(
        a0 in -5.0f64..5.0,
        s in -8.0f64..8.0,
        ds in 0.0f64..3.0,
        p in 0.001f64..0.999,
        dp in 0.0f64..0.5,
    ) {
        let q = (p + dp).min(0.999);
        let lo = eff_prob(a0, s, p);
        prop_assert!((0.0..=1.0).contains(&lo));
        prop_assert!(eff_prob(a0, s, q) >= lo);
        prop_assert!(eff_prob(a0, s + ds, p) >= lo);
        prop_assert!(lo <= (-a0.exp()).exp());
    }
}
