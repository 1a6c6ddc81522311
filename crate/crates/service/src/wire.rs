//! JSON request and response bodies of the `/v1` API.

use std::collections::BTreeMap;

use doseopt_core::design::{
    Assignment, AssignmentRule, DesignConfig, EfficacySummary, EscalationSummary, EventReport, Exclusion,
    FutilityOutcome, ObdReport, RecordedEvent, Stage, TraceEvent, TrialState,
};
use doseopt_core::efficacy::CovariateSchema;
use doseopt_core::{DoseGrid, DoseLevel};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ErrorBody;
use crate::store::{AuditEntry, TrialDocument};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateTrialRequest {
    #[serde(default)]
    pub config: DesignConfig,
    pub grid: DoseGrid,
    pub schema: CovariateSchema,
    /// Seed for every random draw of the trial; the server picks one when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateTrialResponse {
    pub trial_id: String,
    pub version: u64,
    pub seed: u64,
    pub stage: Stage,
    /// False when an earlier request with the same idempotency key created it.
    pub created: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrollRequest {
    /// Level name per characteristic name.
    pub covariates: BTreeMap<String, String>,
    /// Trial time in weeks; defaults to the weeks elapsed since creation.
    #[serde(default)]
    pub time: Option<f64>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseView {
    pub level: DoseLevel,
    pub dosage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub trial_id: String,
    pub version: u64,
    pub patient_id: usize,
    pub time: f64,
    pub dose: DoseView,
    pub stage: Stage,
    pub rule: AssignmentRule,
    pub rationale: String,
    #[serde(default)]
    pub admissible: Vec<DoseLevel>,
    #[serde(default)]
    pub probs: Option<Vec<f64>>,
    #[serde(default)]
    pub est_eff: Option<Vec<f64>>,
    #[serde(default)]
    pub flags: Vec<String>,
    /// Analyses and stage changes that ran before the assignment.
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeRequest {
    #[serde(default)]
    pub toxicity: Option<EventReport>,
    #[serde(default)]
    pub efficacy: Option<EventReport>,
    #[serde(default)]
    pub auc: Option<f64>,
    #[serde(default)]
    pub time: Option<f64>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeResponse {
    pub trial_id: String,
    pub version: u64,
    pub patient_id: usize,
    pub time: f64,
    pub stage: Stage,
    /// Analyses and stage changes this outcome triggered.
    pub events: Vec<TraceEvent>,
    /// Present when this outcome completed dose escalation.
    #[serde(default)]
    pub escalation: Option<EscalationSummary>,
    /// Present when this outcome completed the final analysis.
    #[serde(default)]
    pub report: Option<ObdReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub trial_id: String,
    pub kind: String,
    pub status: JobStatus,
    pub submitted_ms: u64,
    #[serde(default)]
    pub finished_ms: Option<u64>,
    /// HTTP status the request would have returned had it finished in time.
    #[serde(default)]
    pub http_status: Option<u16>,
    #[serde(default)]
    pub result: Option<Value>,
    #[serde(default)]
    pub error: Option<ErrorBody>,
}

/// Returned with 202 when a request is still running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
    pub status: JobStatus,
    pub poll: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxDoseView {
    pub level: DoseLevel,
    pub dosage: f64,
    pub skeleton: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-dose toxicity estimates; intervals come from a normal approximation
/// to the posterior of the CRM parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityView {
    pub n_used: usize,
    pub post_mean_a: f64,
    pub post_sd_a: f64,
    pub interval_level: f64,
    pub per_dose: Vec<ToxDoseView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedLevel {
    pub level: String,
    pub assessment: u8,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibilityView {
    pub characteristic: String,
    pub allowed: Vec<String>,
    pub excluded: Vec<ExcludedLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientView {
    pub id: usize,
    pub covariates: BTreeMap<String, String>,
    pub enroll_time: f64,
    pub dose: DoseView,
    pub stage: Stage,
    pub toxicity: Option<RecordedEvent>,
    pub efficacy: Option<RecordedEvent>,
    pub auc: Option<f64>,
}

/// Read-only snapshot for reporting and the console. Contains summaries only,
/// never posterior draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    pub trial_id: String,
    pub version: u64,
    pub seed: u64,
    pub stage: Stage,
    pub clock: f64,
    pub n_enrolled: usize,
    pub n_max: usize,
    pub config: DesignConfig,
    pub grid: DoseGrid,
    pub schema: CovariateSchema,
    pub toxicity: Option<ToxicityView>,
    pub escalation: Option<EscalationSummary>,
    pub acceptable: Vec<DoseLevel>,
    pub eligibility: Vec<EligibilityView>,
    pub exclusions: Vec<Exclusion>,
    pub futility: Vec<FutilityOutcome>,
    pub efficacy: Option<EfficacySummary>,
    pub report: Option<ObdReport>,
    pub stop_reason: Option<String>,
    pub stopped_at_assessment: Option<u8>,
    pub patients: Vec<PatientView>,
    pub audit_log: Vec<AuditEntry>,
}

/// Two-sided normal quantile for the toxicity intervals.
const Z95: f64 = 1.959963984540054;

fn dose_view(grid: &DoseGrid, level: DoseLevel) -> DoseView {
    DoseView {
        level,
        dosage: grid.dosage[level.index()],
    }
}

/// Analyses and stage changes among `events`.
pub fn analysis_events(events: &[TraceEvent]) -> Vec<TraceEvent> {
    events
        .iter()
        .filter(|e| !matches!(e, TraceEvent::Enrolled { .. } | TraceEvent::Outcome { .. }))
        .cloned()
        .collect()
}

pub fn enroll_response(doc: &TrialDocument, a: &Assignment, time: f64, log_before: usize) -> EnrollResponse {
    EnrollResponse {
        trial_id: doc.trial_id.clone(),
        version: doc.version,
        patient_id: a.patient,
        time,
        dose: dose_view(&doc.state.grid, a.dose),
        stage: a.stage,
        rule: a.rule,
        rationale: a.rationale.clone(),
        admissible: a.admissible.clone(),
        probs: a.probs.clone(),
        est_eff: a.est_eff.clone(),
        flags: a.flags.clone(),
        events: analysis_events(&doc.state.log[log_before..]),
    }
}

pub fn outcome_response(doc: &TrialDocument, patient: usize, time: f64, log_before: usize) -> OutcomeResponse {
    let events = analysis_events(&doc.state.log[log_before..]);
    let escalation = events.iter().find_map(|e| match e {
        TraceEvent::Escalation(s) => Some(s.clone()),
        _ => None,
    });
    let report = events.iter().find_map(|e| match e {
        TraceEvent::Final(r) => Some(r.clone()),
        _ => None,
    });
    OutcomeResponse {
        trial_id: doc.trial_id.clone(),
        version: doc.version,
        patient_id: patient,
        time,
        stage: doc.state.stage,
        events,
        escalation,
        report,
    }
}

fn toxicity_view(state: &TrialState) -> Option<ToxicityView> {
    let post = state
        .report
        .as_ref()
        .map(|r| &r.tox_posterior)
        .or(state.latest_tox.as_ref())?;
    let scale = |a: f64| a.exp();
    let per_dose = state
        .grid
        .levels()
        .map(|l| {
            let p = state.grid.skeleton[l.index()];
            ToxDoseView {
                level: l,
                dosage: state.grid.dosage[l.index()],
                skeleton: p,
                mean: post.post_probs[l.index()],
                lower: p.powf(scale(post.post_mean_a + Z95 * post.post_sd_a)),
                upper: p.powf(scale(post.post_mean_a - Z95 * post.post_sd_a)),
            }
        })
        .collect();
    Some(ToxicityView {
        n_used: post.n_used,
        post_mean_a: post.post_mean_a,
        post_sd_a: post.post_sd_a,
        interval_level: 0.95,
        per_dose,
    })
}

fn eligibility(state: &TrialState) -> Vec<EligibilityView> {
    state
        .schema
        .characteristics()
        .iter()
        .enumerate()
        .map(|(h, c)| {
            let allowed = state.allowed_levels(h).into_iter().map(|l| c.levels[l].clone()).collect();
            let excluded = state
                .exclusions
                .iter()
                .filter(|e| e.characteristic == h)
                .flat_map(|e| {
                    e.levels.iter().map(move |&l| ExcludedLevel {
                        level: c.levels[l].clone(),
                        assessment: e.assessment,
                        label: e.label.clone(),
                    })
                })
                .collect();
            EligibilityView {
                characteristic: c.name.clone(),
                allowed,
                excluded,
            }
        })
        .collect()
}

pub fn report_view(doc: &TrialDocument) -> ReportView {
    let state = &doc.state;
    let patients = state
        .patients
        .iter()
        .map(|p| PatientView {
            id: p.id,
            covariates: state.schema.pattern_names(&p.pattern).into_iter().collect(),
            enroll_time: p.enroll_time,
            dose: dose_view(&state.grid, p.dose),
            stage: p.stage,
            toxicity: p.tox,
            efficacy: p.eff,
            auc: p.auc,
        })
        .collect();
    ReportView {
        trial_id: doc.trial_id.clone(),
        version: doc.version,
        seed: state.seed,
        stage: state.stage,
        clock: state.clock,
        n_enrolled: state.n_enrolled(),
        n_max: state.config.n_max(),
        config: state.config.clone(),
        grid: state.grid.clone(),
        schema: state.schema.clone(),
        toxicity: toxicity_view(state),
        escalation: state.escalation.clone(),
        acceptable: state.acceptable.clone(),
        eligibility: eligibility(state),
        exclusions: state.exclusions.clone(),
        futility: state.futility.clone(),
        efficacy: state.latest_efficacy.clone(),
        report: state.report.clone(),
        stop_reason: state.stop_reason.clone(),
        stopped_at_assessment: state.futility.iter().find(|f| f.trial_stop).map(|f| f.assessment_id),
        patients,
        audit_log: doc.audit_log.clone(),
    }
}
