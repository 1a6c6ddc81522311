//! One simulated trial: patients arrive, are screened against the current
//! exclusions, receive the design's dose, and report outcomes as they occur.

use std::fmt;
use std::str::FromStr;

use doseopt_core::design::{DesignConfig, EventReport, OutcomeReport, TrialState};
use doseopt_core::mcmc::SamplerConfig;
use doseopt_core::pk::PkPrior;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::generate::PatientStream;
use crate::scenario::{Scenario, Truth};

/// Screened arrivals allowed per planned patient before giving up.
const MAX_SCREENED_PER_SLOT: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignVariant {
    /// The full design.
    Optimal,
    /// No covariates; the target population is taken as known.
    Naive,
    /// The full design without the exposure-based MTD adjustment.
    Nopk,
}

impl DesignVariant {
    pub const ALL: [DesignVariant; 3] = [DesignVariant::Optimal, DesignVariant::Naive, DesignVariant::Nopk];
}

impl fmt::Display for DesignVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignVariant::Optimal => "optimal",
            DesignVariant::Naive => "naive",
            DesignVariant::Nopk => "nopk",
        })
    }
}

impl FromStr for DesignVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "optimal" => Ok(DesignVariant::Optimal),
            "naive" => Ok(DesignVariant::Naive),
            "nopk" => Ok(DesignVariant::Nopk),
            other => Err(format!("unknown design `{other}` (optimal, naive, nopk)")),
        }
    }
}

/// Design configuration for `variant` in the world of `truth`. The AUC
/// threshold and clearance prior come from the scenario's exposure model.
pub fn design_config(truth: &Truth, variant: DesignVariant, n_max: usize) -> DesignConfig {
    let pk = &truth.scenario.pk;
    let mut config = DesignConfig::with_n_max(n_max);
    config.pk_threshold = pk.tau_l;
    config.pk_prior = PkPrior::reference(pk.clearance_mean);
    config.tox_window = truth.scenario.accrual.tox_window;
    config.eff_window = truth.scenario.accrual.eff_window;
    match variant {
        DesignVariant::Optimal => {}
        DesignVariant::Naive => {
            config.heterogeneity_enabled = false;
            config.target_restriction = truth.target_restriction();
        }
        DesignVariant::Nopk => config.pk_enabled = false,
    }
    config
}

/// Lighter sampler for the per-patient dose-ranging fits.
pub const INTERIM_MCMC: SamplerConfig = SamplerConfig {
    chains: 1,
    iterations: 1500,
    burn_in: 500,
    thin: 1,
};

/// A finished (or stopped) simulated trial with everything needed to
/// recompute its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scenario: Scenario,
    pub design: DesignVariant,
    pub replicate: u64,
    pub study_seed: u64,
    pub seed: u64,
    /// Arrivals screened, including those turned away by an exclusion.
    pub screened: usize,
    pub state: TrialState,
}

impl TrialResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trial results serialize")
    }

    /// SHA-256 of the serialized result.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

struct Pending {
    time: f64,
    seq: usize,
    patient: usize,
    report: OutcomeReport,
}

/// When to stop driving the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunUntil {
    Finished,
    /// Stop as soon as the end-of-escalation summary exists.
    EscalationSummary,
}

/// Runs one trial of `config` in the world of `truth`, keyed by `seed`.
pub fn run_trial(truth: &Truth, config: &DesignConfig, seed: u64) -> Result<TrialState> {
    run_trial_until(truth, config, seed, RunUntil::Finished).map(|(state, _)| state)
}

/// Like [`run_trial`], also returning how many arrivals were screened.
pub fn run_trial_until(truth: &Truth, config: &DesignConfig, seed: u64, until: RunUntil) -> Result<(TrialState, usize)> {
    let mut state = TrialState::new(config.clone(), truth.grid.clone(), truth.schema.clone(), seed)?;
    let mut patients = PatientStream::new(&truth.scenario, seed);
    let n_max = config.n_max();
    let mut pending: Vec<Pending> = Vec::new();
    let mut seq = 0;
    let mut screened = 0;
    let done = |s: &TrialState| {
        s.stage.is_terminal() || (until == RunUntil::EscalationSummary && s.escalation.is_some())
    };

    while state.n_enrolled() < n_max && !done(&state) {
        if screened > MAX_SCREENED_PER_SLOT * n_max {
            return Err(SimError::Stalled(format!(
                "{screened} arrivals screened for {} enrollments",
                state.n_enrolled()
            )));
        }
        let arrival = patients.arrival(screened);
        flush(&mut state, &mut pending, Some(arrival), &done)?;
        if done(&state) {
            break;
        }
        state.prepare_enrollment(arrival)?;
        if done(&state) {
            break;
        }
        let levels = patients.covariates(screened);
        let index = truth.pattern_index(&levels);
        let truth_pattern = &truth.patterns[index];
        if !state.is_eligible(&truth_pattern.pattern) {
            screened += 1;
            continue;
        }
        let assignment = state.enroll(truth_pattern.pattern.clone(), arrival)?;
        let j = assignment.dose.index();
        let out = patients.outcome(screened, truth.grid.dosage[j], truth_pattern.eff[j]);
        screened += 1;
        let pid = assignment.patient;
        state.record_outcome(
            pid,
            OutcomeReport {
                auc: Some(out.auc),
                ..Default::default()
            },
            arrival,
        )?;
        let acc = &truth.scenario.accrual;
        let reports = [
            (out.tox_time.unwrap_or(acc.tox_window), true, out.tox, out.tox_time),
            (out.eff_time.unwrap_or(acc.eff_window), false, out.eff, out.eff_time),
        ];
        for (after, is_tox, occurred, event_time) in reports {
            let ev = EventReport { occurred, event_time };
            let report = if is_tox {
                OutcomeReport {
                    toxicity: Some(ev),
                    ..Default::default()
                }
            } else {
                OutcomeReport {
                    efficacy: Some(ev),
                    ..Default::default()
                }
            };
            pending.push(Pending {
                time: arrival + after,
                seq,
                patient: pid,
                report,
            });
            seq += 1;
        }
    }
    flush(&mut state, &mut pending, None, &done)?;
    Ok((state, screened))
}

/// Records pending outcomes up to `until` (all when `None`) in time order.
fn flush(
    state: &mut TrialState,
    pending: &mut Vec<Pending>,
    until: Option<f64>,
    done: &impl Fn(&TrialState) -> bool,
) -> Result<()> {
    pending.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.seq.cmp(&b.seq)));
    let cut = match until {
        Some(t) => pending.partition_point(|p| p.time <= t),
        None => pending.len(),
    };
    let due: Vec<Pending> = pending.drain(..cut).collect();
    for p in due {
        if done(state) {
            break;
        }
        state.record_outcome(p.patient, p.report, p.time.max(state.clock))?;
    }
    Ok(())
}
