use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::DesignConfig;
use crate::dose::{DoseGrid, DoseLevel};
use crate::efficacy::{CovMask, CovariateSchema, Pattern};
use crate::toxicity::ToxPosterior;

/// Version of the serialized [`TrialState`] layout.
pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Escalation,
    PkAdjust,
    Futility1,
    AdaptiveRandomization,
    Futility2,
    Optimization,
    FinalAnalysis,
    TerminatedFutile,
    Complete,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::TerminatedFutile | Stage::Complete)
    }

    /// Stages in which patients are assigned doses.
    pub fn is_enrolling(self) -> bool {
        matches!(self, Stage::Escalation | Stage::AdaptiveRandomization | Stage::Optimization)
    }

    /// Position in the design schema; terminal states share the last slot.
    pub fn order(self) -> u8 {
        match self {
            Stage::Escalation => 0,
            Stage::PkAdjust => 1,
            Stage::Futility1 => 2,
            Stage::AdaptiveRandomization => 3,
            Stage::Futility2 => 4,
            Stage::Optimization => 5,
            Stage::FinalAnalysis => 6,
            Stage::TerminatedFutile | Stage::Complete => 7,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Escalation => "escalation",
            Stage::PkAdjust => "pk_adjust",
            Stage::Futility1 => "futility1",
            Stage::AdaptiveRandomization => "adaptive_randomization",
            Stage::Futility2 => "futility2",
            Stage::Optimization => "optimization",
            Stage::FinalAnalysis => "final_analysis",
            Stage::TerminatedFutile => "terminated_futile",
            Stage::Complete => "complete",
        })
    }
}

/// A reported binary outcome. `event_time` is weeks after enrollment and is
/// required when the event occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventReport {
    pub occurred: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_time: Option<f64>,
}

/// Any subset of a patient's outcomes, reported together.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity: Option<EventReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficacy: Option<EventReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
}

/// A stored outcome together with the trial time it was reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordedEvent {
    pub occurred: bool,
    pub event_time: Option<f64>,
    pub recorded_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: usize,
    pub pattern: Pattern,
    pub z: CovMask,
    pub enroll_time: f64,
    pub dose: DoseLevel,
    pub stage: Stage,
    pub tox: Option<RecordedEvent>,
    pub eff: Option<RecordedEvent>,
    pub auc: Option<f64>,
}

impl PatientRecord {
    pub fn fully_observed(&self) -> bool {
        self.tox.is_some() && self.eff.is_some()
    }
}

/// Patients whose level of `characteristic` is in `levels` may no longer enroll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub characteristic: usize,
    pub levels: Vec<usize>,
    /// Futility assessment that produced it; 0 for a prespecified restriction.
    pub assessment: u8,
    /// Dummy covariate and value defining the subgroup, when found by futility.
    pub covariate: Option<usize>,
    pub value: Option<bool>,
    pub label: String,
    pub time: f64,
}

impl Exclusion {
    pub fn covers(&self, pattern: &[usize]) -> bool {
        self.levels.contains(&pattern[self.characteristic])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentRule {
    Start,
    Crm,
    Cohort,
    Randomization,
    Optimization,
}

/// Dose decision returned to the caller and kept in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub patient: usize,
    pub dose: DoseLevel,
    pub stage: Stage,
    pub rule: AssignmentRule,
    /// Estimated efficacy per grid level used by the rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub est_eff: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub admissible: Vec<DoseLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub rationale: String,
}

/// Results at the end of dose escalation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationSummary {
    pub time: f64,
    pub tox_posterior: ToxPosterior<f64>,
    pub mtd_tox: DoseLevel,
    pub pk_exceed: Option<Vec<f64>>,
    pub mtd_pk: Option<DoseLevel>,
    pub mtd_star: DoseLevel,
    pub acceptable: Vec<DoseLevel>,
    /// Acceptable set from toxicity alone, kept for comparison.
    pub acceptable_without_pk: Vec<DoseLevel>,
}

/// Criterion evaluation for one side of the influential covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTest {
    pub value: bool,
    pub n_patients: usize,
    /// Patients counted toward the minimum-size guard.
    pub n_qualifying: usize,
    /// Posterior probability that efficacy at MTD* exceeds the cutoff.
    pub prob_exceed: f64,
    pub criterion_met: bool,
    pub enough_patients: bool,
    pub futile: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutilityOutcome {
    pub assessment_id: u8,
    pub time: f64,
    pub inclusion_probs: Vec<f64>,
    pub influential_covariate: Option<usize>,
    pub tests: Vec<SubgroupTest>,
    pub eliminated: Option<Exclusion>,
    pub trial_stop: bool,
    pub fell_back: bool,
}

/// Posterior efficacy curve for one estimated subgroup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyCurve {
    pub mask: CovMask,
    pub label: String,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Summary of the most recent efficacy fit, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacySummary {
    pub time: f64,
    pub n_patients: usize,
    pub scaled_dose: Vec<f64>,
    pub active: CovMask,
    pub inclusion_probs: Vec<f64>,
    pub selected: CovMask,
    pub fell_back: bool,
    pub curves: Vec<EfficacyCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupObd {
    pub mask: CovMask,
    pub label: String,
    pub obd: Option<DoseLevel>,
    /// `P(efficacy >= epsilon * max)` per level of the final acceptable set.
    pub prob_near_max: Vec<f64>,
    /// `P(efficacy at the highest acceptable dose >= C_F)`.
    pub prob_above_cutoff: f64,
    pub mean_eff: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObdReport {
    pub time: f64,
    pub tox_posterior: ToxPosterior<f64>,
    pub mtd_final: DoseLevel,
    pub acceptable: Vec<DoseLevel>,
    pub active: CovMask,
    pub inclusion_probs: Vec<f64>,
    pub selected: CovMask,
    pub fell_back: bool,
    pub subgroups: Vec<SubgroupObd>,
}

impl ObdReport {
    /// Subgroup whose selected-covariate values match `z`.
    pub fn subgroup_for(&self, z: CovMask) -> Option<&SubgroupObd> {
        let key = z.and(self.selected);
        self.subgroups.iter().find(|s| s.mask == key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Enrolled {
        time: f64,
        pattern: Pattern,
        assignment: Assignment,
    },
    Outcome {
        time: f64,
        patient: usize,
        report: OutcomeReport,
    },
    Stage {
        time: f64,
        from: Stage,
        to: Stage,
    },
    Escalation(EscalationSummary),
    Restriction(Exclusion),
    Futility(FutilityOutcome),
    Final(ObdReport),
}

/// Complete, serializable state of one trial including its event trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub format_version: u32,
    pub config: DesignConfig,
    pub grid: DoseGrid<f64>,
    pub schema: CovariateSchema,
    pub seed: u64,
    pub stage: Stage,
    pub clock: f64,
    pub patients: Vec<PatientRecord>,
    /// Toxicity-updated scaled doses from the end of escalation.
    pub scaled_dose: Option<Vec<f64>>,
    pub escalation: Option<EscalationSummary>,
    pub acceptable: Vec<DoseLevel>,
    pub exclusions: Vec<Exclusion>,
    pub futility: Vec<FutilityOutcome>,
    pub report: Option<ObdReport>,
    pub stop_reason: Option<String>,
    pub latest_tox: Option<ToxPosterior<f64>>,
    pub latest_efficacy: Option<EfficacySummary>,
    /// Number of MCMC fits so far; keys the sampler streams.
    pub fits: u64,
    pub log: Vec<TraceEvent>,
}
