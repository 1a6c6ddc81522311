//! Request handling independent of HTTP: validation, idempotency, version
//! checks and the journal-then-document commit.

use std::sync::{Arc, Mutex};

use doseopt_core::design::OutcomeReport;
use serde_json::Value;

use crate::actions::{apply, outcome_label, response_for, Action, JournalEntry};
use crate::error::{Result, ServiceError};
use crate::jobs::now_ms;
use crate::store::{StoredResponse, TrialDocument, TrialStore, DOCUMENT_FORMAT_VERSION};
use crate::wire::{report_view, CreateTrialRequest, CreateTrialResponse, EnrollRequest, OutcomeRequest, ReportView};

const WEEK_MS: f64 = 7.0 * 24.0 * 3600.0 * 1000.0;

/// Who sent a request and how to recognize a retry of it.
#[derive(Debug, Clone, Default)]
pub struct RequestMeta {
    pub actor: String,
    pub idempotency_key: Option<String>,
    /// Digest of the raw request, compared when an idempotency key is reused.
    pub request_digest: String,
}

#[derive(Debug, Clone)]
pub enum Mutation {
    Enroll(EnrollRequest),
    Outcome { patient: usize, request: OutcomeRequest },
}

impl Mutation {
    fn expected_version(&self) -> Option<u64> {
        match self {
            Mutation::Enroll(r) => r.expected_version,
            Mutation::Outcome { request, .. } => request.expected_version,
        }
    }

    fn time(&self) -> Option<f64> {
        match self {
            Mutation::Enroll(r) => r.time,
            Mutation::Outcome { request, .. } => request.time,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Mutation::Enroll(_) => "enroll_patient",
            Mutation::Outcome { .. } => "record_outcome",
        }
    }
}

pub struct Service {
    store: Arc<dyn TrialStore>,
    creating: Mutex<()>,
}

impl Service {
    pub fn new(store: Arc<dyn TrialStore>) -> Self {
        Service {
            store,
            creating: Mutex::new(()),
        }
    }

    pub fn store(&self) -> &Arc<dyn TrialStore> {
        &self.store
    }

    pub fn create_trial(&self, req: CreateTrialRequest, meta: &RequestMeta) -> Result<(u16, CreateTrialResponse)> {
        let _guard = self.creating.lock().unwrap();
        if let Some(key) = &meta.idempotency_key {
            if let Some(id) = self.store.created_under(key)? {
                let doc = self.store.load(&id)?;
                return Ok((
                    200,
                    CreateTrialResponse {
                        trial_id: id,
                        version: doc.version,
                        seed: doc.state.seed,
                        stage: doc.state.stage,
                        created: false,
                    },
                ));
            }
        }
        let seed = req.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let action = Action::CreateTrial {
            config: req.config,
            grid: req.grid,
            schema: req.schema,
            seed,
        };
        let (state, verdict) = apply(None, &action);
        verdict?;
        let state = state.expect("created trials have a state");
        let trial_id = uuid::Uuid::new_v4().to_string();
        let entry = JournalEntry {
            seq: 1,
            timestamp_ms: now_ms(),
            actor: meta.actor.clone(),
            payload_digest: action.digest(),
            action,
            outcome: "applied".into(),
            idempotency_key: meta.idempotency_key.clone(),
            request_digest: Some(meta.request_digest.clone()),
        };
        let doc = TrialDocument {
            format_version: DOCUMENT_FORMAT_VERSION,
            trial_id: trial_id.clone(),
            version: 1,
            created_ms: entry.timestamp_ms,
            state,
            audit_log: vec![entry.audit()],
            idempotency: Default::default(),
        };
        if let Some(key) = &meta.idempotency_key {
            self.store.remember_creation(key, &trial_id)?;
        }
        self.store.commit(&doc, &entry, 0)?;
        tracing::info!(trial_id, seed, "trial created");
        Ok((
            201,
            CreateTrialResponse {
                trial_id,
                version: 1,
                seed,
                stage: doc.state.stage,
                created: true,
            },
        ))
    }

    /// Fails with not-found unless the trial exists.
    pub fn ensure_exists(&self, trial_id: &str) -> Result<()> {
        self.store.load(trial_id).map(|_| ())
    }

    pub fn report(&self, trial_id: &str) -> Result<ReportView> {
        Ok(report_view(&self.store.load(trial_id)?))
    }

    fn action_for(doc: &TrialDocument, mutation: &Mutation) -> Result<Action> {
        let time = match mutation.time() {
            Some(t) if !t.is_finite() => return Err(ServiceError::validation("time", "must be finite")),
            Some(t) => t,
            None => (now_ms().saturating_sub(doc.created_ms)) as f64 / WEEK_MS,
        };
        Ok(match mutation {
            Mutation::Enroll(r) => Action::EnrollPatient {
                pattern: doc
                    .state
                    .schema
                    .pattern_from_names(r.covariates.iter().map(|(k, v)| (k.as_str(), v.as_str())))?,
                time,
            },
            Mutation::Outcome { patient, request } => Action::RecordOutcome {
                patient: *patient,
                report: OutcomeReport {
                    toxicity: request.toxicity,
                    efficacy: request.efficacy,
                    auc: request.auc,
                },
                time,
            },
        })
    }

    /// Applies one mutation and returns the HTTP status and body to answer with.
    pub fn mutate(&self, trial_id: &str, mutation: &Mutation, meta: &RequestMeta) -> Result<(u16, Value)> {
        let doc = self.store.load(trial_id)?;
        if let Some(key) = &meta.idempotency_key {
            if let Some(stored) = doc.idempotency.get(key) {
                if stored.request_digest != meta.request_digest {
                    return Err(ServiceError::validation(
                        "Idempotency-Key",
                        "key was already used for a different request",
                    ));
                }
                return Ok((stored.status, stored.body.clone()));
            }
        }
        if let Some(expected) = mutation.expected_version() {
            if expected != doc.version {
                return Err(ServiceError::VersionConflict {
                    expected,
                    current: doc.version,
                });
            }
        }
        let action = Self::action_for(&doc, mutation)?;
        let log_before = doc.state.log.len();
        let (next, verdict) = apply(Some(&doc.state), &action);
        let Some(next) = next else {
            return Err(verdict.expect_err("unchanged state means a rejection").into());
        };
        let entry = JournalEntry {
            seq: doc.version + 1,
            timestamp_ms: now_ms(),
            actor: meta.actor.clone(),
            payload_digest: action.digest(),
            outcome: outcome_label(&verdict),
            action,
            idempotency_key: meta.idempotency_key.clone(),
            request_digest: Some(meta.request_digest.clone()),
        };
        let mut updated = doc.clone();
        updated.state = next;
        updated.version = entry.seq;
        updated.audit_log.push(entry.audit());
        let (status, body) = response_for(&updated, &entry.action, &verdict, log_before);
        if let Some(key) = &meta.idempotency_key {
            updated.idempotency.insert(
                key.clone(),
                StoredResponse {
                    request_digest: meta.request_digest.clone(),
                    status,
                    body: body.clone(),
                },
            );
        }
        self.store.commit(&updated, &entry, doc.version)?;
        tracing::info!(trial_id, version = updated.version, action = entry.action.name(), outcome = %entry.outcome, "trial updated");
        Ok((status, body))
    }
}
