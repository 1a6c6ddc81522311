use std::path::PathBuf;

use doseopt_core::design::DesignConfig;
use doseopt_core::mcmc::SamplerConfig;
use doseopt_core::rng::{stream, Purpose};
use doseopt_sim::generate::{derive_dose_grid, sample_patient, simulate_toxicity, PatientStream};
use doseopt_sim::metrics::{aggregate, summarize};
use doseopt_sim::output::{read_traces, write_metrics, write_traces};
use doseopt_sim::study::{metrics_from_traces, run_replicate};
use doseopt_sim::trial::{run_trial_until, RunUntil};
use doseopt_sim::{design_config, load_schema, run_study, DesignVariant, Scenario, StudyOptions, Truth};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn truth(scenario: &str, schema: &str) -> Truth {
    let s = Scenario::load(root().join("scenarios").join(format!("{scenario}.toml"))).unwrap();
    let schema = load_schema(root().join("schemas").join(format!("{schema}.toml"))).unwrap();
    Truth::new(s, schema).unwrap()
}

fn quick(truth: &Truth, variant: DesignVariant) -> DesignConfig {
    let fast = SamplerConfig {
        chains: 1,
        iterations: 800,
        burn_in: 200,
        thin: 1,
    };
    DesignConfig {
        mcmc_efficacy: fast,
        mcmc_interim: fast,
        mcmc_pk: fast,
        ..design_config(truth, variant, 60)
    }
}

#[test]
fn covariate_frequencies_match_prevalence() {
    let t = truth("s1", "default");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let mut female = 0;
    let mut fusion = 0;
    for _ in 0..n {
        let p = sample_patient(&t.scenario, &mut rng);
        female += (p[1] == 1) as usize;
        fusion += (p[3] == 0) as usize;
    }
    assert!((female as f64 / n as f64 - 0.48).abs() < 0.01);
    assert!((fusion as f64 / n as f64 - 0.53).abs() < 0.01);
}

#[test]
fn toxicity_frequency_at_derived_dose_matches_target() {
    let t = truth("s1", "default");
    let pk = &t.scenario.pk;
    let dosage = derive_dose_grid(&t.scenario.doses.targets, pk).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    for (d, target) in dosage.iter().zip(&t.scenario.doses.targets) {
        let hits = (0..n).filter(|_| simulate_toxicity(*d, pk, &mut rng).0).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - target).abs() < 0.005, "dose {d}: {freq} vs {target}");
    }
}

#[test]
fn patient_streams_do_not_depend_on_assigned_dose_order() {
    let t = truth("s5", "default");
    let stream_a = PatientStream::new(&t.scenario, 99);
    // Drawing patient 7's outcome first must not perturb patient 3.
    let late = stream_a.outcome(7, 700.0, 0.4);
    let early = stream_a.outcome(3, 700.0, 0.4);
    let stream_b = PatientStream::new(&t.scenario, 99);
    assert_eq!(stream_b.outcome(3, 700.0, 0.4), early);
    assert_eq!(stream_b.outcome(7, 700.0, 0.4), late);
    assert_eq!(stream_a.covariates(5), sample_patient(&t.scenario, &mut stream(99, Purpose::Covariates, 5, 0)));
}

#[test]
fn replicate_is_reproducible_from_its_seed() {
    let t = truth("s6", "default");
    let cfg = quick(&t, DesignVariant::Optimal);
    let a = run_replicate(&t, DesignVariant::Optimal, &cfg, 7, 3).unwrap();
    let b = run_replicate(&t, DesignVariant::Optimal, &cfg, 7, 3).unwrap();
    assert_eq!(a.digest(), b.digest());
    let c = run_replicate(&t, DesignVariant::Optimal, &cfg, 7, 4).unwrap();
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn metrics_replay_from_traces_equals_online_metrics() {
    let t = truth("s1", "default");
    let cfg = quick(&t, DesignVariant::Optimal);
    let opts = StudyOptions {
        n_reps: 4,
        seed: 11,
        workers: 2,
        keep_traces: true,
    };
    let study = run_study(&t, DesignVariant::Optimal, &cfg, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_traces(dir.path(), &study.traces).unwrap();
    let traces = read_traces(dir.path()).unwrap();
    assert_eq!(traces.len(), 4);
    assert_eq!(metrics_from_traces(&traces).unwrap(), study.metrics);

    let out = tempfile::tempdir().unwrap();
    write_metrics(out.path(), &study.metrics).unwrap();
    for f in ["metrics.json", "pcs.csv", "futility.csv", "allocation.csv"] {
        assert!(out.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let t = truth("s3", "default");
    let cfg = quick(&t, DesignVariant::Optimal);
    let run = |workers| {
        let opts = StudyOptions {
            n_reps: 3,
            seed: 5,
            workers,
            keep_traces: false,
        };
        run_study(&t, DesignVariant::Optimal, &cfg, &opts).unwrap().metrics
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn naive_design_reports_a_single_population() {
    for name in ["s3", "s5"] {
        let t = truth(name, "default");
        let cfg = quick(&t, DesignVariant::Naive);
        for rep in 0..2 {
            let r = run_replicate(&t, DesignVariant::Naive, &cfg, 3, rep).unwrap();
            let st = &r.state;
            assert!(st.futility.iter().all(|f| f.eliminated.is_none()));
            assert!(st.exclusions.iter().all(|e| e.assessment == 0));
            if let Some(report) = &st.report {
                assert_eq!(report.subgroups.len(), 1);
            }
            if name == "s3" {
                assert!(st.exclusions.is_empty());
            }
        }
    }
}

#[test]
fn exposure_adjusted_set_is_inside_the_toxicity_set() {
    for name in ["s1", "s3", "s7", "s8"] {
        let t = truth(name, "default");
        let cfg = quick(&t, DesignVariant::Optimal);
        for seed in 0..4 {
            let (st, _) = run_trial_until(&t, &cfg, seed, RunUntil::EscalationSummary).unwrap();
            let esc = st.escalation.unwrap();
            assert!(esc.acceptable.iter().all(|d| esc.acceptable_without_pk.contains(d)));
            assert!(esc.mtd_star <= esc.mtd_tox);
        }
    }
}

#[test]
fn changing_reference_levels_keeps_the_simulated_patients() {
    let a = truth("s5", "default");
    let b = truth("s5", "gene_ref_ntrk");
    let cfg_a = quick(&a, DesignVariant::Optimal);
    let cfg_b = quick(&b, DesignVariant::Optimal);
    let (sa, _) = run_trial_until(&a, &cfg_a, 21, RunUntil::EscalationSummary).unwrap();
    let (sb, _) = run_trial_until(&b, &cfg_b, 21, RunUntil::EscalationSummary).unwrap();
    assert_eq!(sa.patients.len(), sb.patients.len());
    for (pa, pb) in sa.patients.iter().zip(&sb.patients) {
        let la = &a.patterns[a.index_of_schema_pattern(&pa.pattern).unwrap()].levels;
        let lb = &b.patterns[b.index_of_schema_pattern(&pb.pattern).unwrap()].levels;
        assert_eq!(la, lb);
        assert_eq!(pa.dose, pb.dose);
        assert_eq!(pa.auc, pb.auc);
        assert_eq!(pa.tox, pb.tox);
    }
    assert_ne!(a.influential(), b.influential());
}

#[test]
fn homogeneous_scenario_has_no_true_positive_rate() {
    let t = truth("s3", "default");
    assert!(t.influential().is_empty());
    let cfg = quick(&t, DesignVariant::Optimal);
    let (st, _) = run_trial_until(&t, &cfg, 1, RunUntil::EscalationSummary).unwrap();
    let summary = summarize(&t, &st, 0);
    let m = aggregate(&t, DesignVariant::Optimal, 0.25, 60, 0, &[summary]);
    assert_eq!(m.tpr, None);
    assert!(m.fpr.is_some());
}

fn escalation_summaries() -> (Truth, Vec<doseopt_sim::ReplicateSummary>) {
    let t = truth("s6", "default");
    let cfg = quick(&t, DesignVariant::Optimal);
    let summaries = (0..6)
        .map(|rep| {
            let (st, _) = run_trial_until(&t, &cfg, rep, RunUntil::EscalationSummary).unwrap();
            summarize(&t, &st, rep)
        })
        .collect();
    (t, summaries)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn aggregation_ignores_replicate_order(shuffle_seed in any::<u64>()) {
        thread_local! {
            static DATA: (Truth, Vec<doseopt_sim::ReplicateSummary>) = escalation_summaries();
        }
        DATA.with(|(t, summaries)| {
            let base = aggregate(t, DesignVariant::Optimal, 0.25, 60, 1, summaries);
            let mut shuffled = summaries.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
            let again = aggregate(t, DesignVariant::Optimal, 0.25, 60, 1, &shuffled);
            assert_eq!(base, again);
        });
    }
}
