//! Journaled mutations and their deterministic replay.
//!
//! Every accepted mutation is stored as an [`Action`] carrying everything the
//! engine needs (including the resolved trial time and the seed), so applying
//! the journal in order to an empty store reproduces the trial exactly.

use std::collections::BTreeMap;

use doseopt_core::design::{Assignment, DesignConfig, OutcomeReport, TrialState};
use doseopt_core::efficacy::{CovariateSchema, Pattern};
use doseopt_core::{CoreError, DoseGrid};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, ServiceError};
use crate::store::{AuditEntry, StoredResponse, TrialDocument, DOCUMENT_FORMAT_VERSION};
use crate::wire::{enroll_response, outcome_response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    CreateTrial {
        config: DesignConfig,
        grid: DoseGrid,
        schema: CovariateSchema,
        seed: u64,
    },
    EnrollPatient {
        pattern: Pattern,
        time: f64,
    },
    RecordOutcome {
        patient: usize,
        report: OutcomeReport,
        time: f64,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::CreateTrial { .. } => "create_trial",
            Action::EnrollPatient { .. } => "enroll_patient",
            Action::RecordOutcome { .. } => "record_outcome",
        }
    }

    /// SHA-256 of the action's JSON encoding.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("actions serialize"))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What the engine made of an action.
#[derive(Debug, Clone, PartialEq)]
pub enum Applied {
    Created,
    Enrolled(Assignment),
    Recorded,
}

/// Applies `action` to `state`. Returns the successor state whenever the
/// engine changed anything, even if it then rejected the request: an
/// enrollment refused for an excluded subgroup still advances the trial clock
/// and may run a due analysis, and that must be kept for replay.
pub fn apply(state: Option<&TrialState>, action: &Action) -> (Option<TrialState>, Result<Applied, CoreError>) {
    match (state, action) {
        (
            None,
            Action::CreateTrial {
                config,
                grid,
                schema,
                seed,
            },
        ) => match TrialState::new(config.clone(), grid.clone(), schema.clone(), *seed) {
            Ok(s) => (Some(s), Ok(Applied::Created)),
            Err(e) => (None, Err(e)),
        },
        (Some(state), Action::EnrollPatient { pattern, time }) => {
            let mut next = state.clone();
            let verdict = next.enroll(pattern.clone(), *time).map(Applied::Enrolled);
            keep_if_changed(state, next, verdict)
        }
        (Some(state), Action::RecordOutcome { patient, report, time }) => {
            let mut next = state.clone();
            let verdict = next.record_outcome(*patient, *report, *time).map(|_| Applied::Recorded);
            keep_if_changed(state, next, verdict)
        }
        (None, _) => (None, Err(CoreError::State("trial has not been created".into()))),
        (Some(_), Action::CreateTrial { .. }) => (None, Err(CoreError::State("trial already exists".into()))),
    }
}

fn keep_if_changed(
    before: &TrialState,
    next: TrialState,
    verdict: Result<Applied, CoreError>,
) -> (Option<TrialState>, Result<Applied, CoreError>) {
    match &verdict {
        Ok(_) => (Some(next), verdict),
        Err(CoreError::Excluded(_) | CoreError::State(_)) if next != *before => (Some(next), verdict),
        Err(_) => (None, verdict),
    }
}

/// One line of a trial's write-ahead journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub actor: String,
    #[serde(flatten)]
    pub action: Action,
    pub payload_digest: String,
    /// `applied`, or the error code of a rejection that still changed state.
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_digest: Option<String>,
}

impl JournalEntry {
    pub fn audit(&self) -> AuditEntry {
        AuditEntry {
            seq: self.seq,
            timestamp_ms: self.timestamp_ms,
            actor: self.actor.clone(),
            action: self.action.name().to_string(),
            payload_digest: self.payload_digest.clone(),
            outcome: self.outcome.clone(),
        }
    }
}

pub fn outcome_label(verdict: &Result<Applied, CoreError>) -> String {
    match verdict {
        Ok(_) => "applied".into(),
        Err(e) => format!("rejected:{}", ServiceError::from(e.clone()).body().code),
    }
}

/// HTTP status and body answering an applied action on `doc`.
pub fn response_for(
    doc: &TrialDocument,
    action: &Action,
    verdict: &Result<Applied, CoreError>,
    log_before: usize,
) -> (u16, Value) {
    match (action, verdict) {
        (Action::EnrollPatient { time, .. }, Ok(Applied::Enrolled(a))) => {
            (201, serde_json::to_value(enroll_response(doc, a, *time, log_before)).expect("serializes"))
        }
        (Action::RecordOutcome { patient, time, .. }, Ok(_)) => (
            200,
            serde_json::to_value(outcome_response(doc, *patient, *time, log_before)).expect("serializes"),
        ),
        (_, Ok(_)) => (200, Value::Null),
        (_, Err(e)) => {
            let err = ServiceError::from(e.clone());
            (err.status().as_u16(), serde_json::to_value(err.body()).expect("serializes"))
        }
    }
}

/// Rebuilds a trial document from its journal.
pub fn replay(trial_id: &str, entries: &[JournalEntry]) -> Result<TrialDocument> {
    let corrupt = |detail: String| ServiceError::Corrupt {
        path: format!("journal of {trial_id}"),
        detail,
    };
    let first = entries.first().ok_or_else(|| corrupt("journal is empty".into()))?;
    let mut doc: Option<TrialDocument> = None;
    for (i, entry) in entries.iter().enumerate() {
        if entry.seq != i as u64 + 1 {
            return Err(corrupt(format!("entry {i} has sequence number {}", entry.seq)));
        }
        if entry.action.digest() != entry.payload_digest {
            return Err(corrupt(format!("entry {} fails its payload digest", entry.seq)));
        }
        let state = doc.as_ref().map(|d| &d.state);
        let log_before = state.map_or(0, |s| s.log.len());
        let (next, verdict) = apply(state, &entry.action);
        if outcome_label(&verdict) != entry.outcome {
            return Err(corrupt(format!(
                "entry {} replays as `{}` but was journaled as `{}`",
                entry.seq,
                outcome_label(&verdict),
                entry.outcome
            )));
        }
        let next = next.ok_or_else(|| corrupt(format!("entry {} does not change the trial", entry.seq)))?;
        let mut d = doc.take().unwrap_or_else(|| TrialDocument {
            format_version: DOCUMENT_FORMAT_VERSION,
            trial_id: trial_id.to_string(),
            version: 0,
            created_ms: first.timestamp_ms,
            state: next.clone(),
            audit_log: Vec::new(),
            idempotency: BTreeMap::new(),
        });
        d.state = next;
        d.version = entry.seq;
        d.audit_log.push(entry.audit());
        let create = matches!(entry.action, Action::CreateTrial { .. });
        if let (Some(key), Some(req), false) = (&entry.idempotency_key, &entry.request_digest, create) {
            let (status, body) = response_for(&d, &entry.action, &verdict, log_before);
            d.idempotency.insert(
                key.clone(),
                StoredResponse {
                    request_digest: req.clone(),
                    status,
                    body,
                },
            );
        }
        doc = Some(d);
    }
    Ok(doc.expect("journal is not empty"))
}
