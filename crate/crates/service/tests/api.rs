use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use doseopt_core::design::{DesignConfig, TraceEvent, TrialState};
use doseopt_core::mcmc::SamplerConfig;
use doseopt_service::actions::replay;
use doseopt_service::store::TrialStore;
use doseopt_service::wire::{CreateTrialResponse, EnrollResponse, ReportView};
use doseopt_service::{router, FileStore, Settings};
use doseopt_sim::generate::PatientStream;
use doseopt_sim::trial::run_trial_until;
use doseopt_sim::{design_config, load_schema, DesignVariant, Scenario, Truth};
use serde_json::{json, Value};
use tower::ServiceExt;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn settings(dir: &Path) -> Settings {
    Settings::from_lookup(|k| match k {
        "DOSEOPT_DATA_DIR" => Some(dir.display().to_string()),
        "DOSEOPT_WORKERS" => Some("2".into()),
        "DOSEOPT_WAIT_MS" => Some("60000".into()),
        _ => None,
    })
    .unwrap()
}

fn app(dir: &Path) -> Router {
    router(settings(dir).app_state().unwrap(), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let body = match body {
        Some(b) => Body::from(serde_json::to_vec(&b).unwrap()),
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

fn quick(config: DesignConfig) -> DesignConfig {
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
        ..config
    }
}

fn create_body(seed: u64) -> Value {
    let truth = truth("s1");
    json!({
        "config": quick(DesignConfig::default()),
        "grid": truth.grid,
        "schema": truth.schema,
        "seed": seed,
    })
}

fn truth(name: &str) -> Truth {
    let s = Scenario::load(root().join(format!("scenarios/{name}.toml"))).unwrap();
    Truth::new(s, load_schema(root().join("schemas/default.toml")).unwrap()).unwrap()
}

async fn create(app: &Router, seed: u64) -> String {
    let (status, body) = call(app, "POST", "/v1/trials", Some(create_body(seed)), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["trial_id"].as_str().unwrap().to_string()
}

fn named(state: &TrialState, pattern: &[usize]) -> BTreeMap<String, String> {
    state.schema.pattern_names(pattern).into_iter().collect()
}

/// A call the simulation driver made, in order.
enum Step {
    Arrival { time: f64, pattern: Vec<usize>, expect: Option<usize> },
    Outcome { time: f64, patient: usize, report: Value },
}

/// Rebuilds the exact call sequence of a simulated trial: the logged
/// enrollments and outcomes, plus the screened arrivals that were turned
/// away (they still advance the trial clock).
fn call_sequence(truth: &Truth, state: &TrialState, seed: u64, screened: usize) -> Vec<Step> {
    let mut steps: Vec<Step> = state
        .log
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Enrolled { time, pattern, assignment } => Some(Step::Arrival {
                time: *time,
                pattern: pattern.clone(),
                expect: Some(assignment.dose.0),
            }),
            TraceEvent::Outcome { time, patient, report } => Some(Step::Outcome {
                time: *time,
                patient: *patient,
                report: serde_json::to_value(report).unwrap(),
            }),
            _ => None,
        })
        .collect();
    let mut stream = PatientStream::new(&truth.scenario, seed);
    let enrolled: Vec<f64> = state.patients.iter().map(|p| p.enroll_time).collect();
    let mut extra = Vec::new();
    for i in 0..=screened {
        let t = stream.arrival(i);
        if enrolled.contains(&t) {
            continue;
        }
        // The last arrival only counts if it was screened before the trial ended.
        if i == screened && state.clock != t {
            continue;
        }
        let levels = stream.covariates(i);
        extra.push((t, truth.patterns[truth.pattern_index(&levels)].pattern.clone()));
    }
    for (t, pattern) in extra {
        let at = steps
            .iter()
            .position(|s| match s {
                Step::Arrival { time, .. } | Step::Outcome { time, .. } => *time > t,
            })
            .unwrap_or(steps.len());
        steps.insert(
            at,
            Step::Arrival {
                time: t,
                pattern,
                expect: None,
            },
        );
    }
    steps
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn api_reproduces_a_simulated_trial_and_recovers_from_its_journal() {
    let truth = truth("s1");
    let config = quick(design_config(&truth, DesignVariant::Optimal, 60));
    let seed = 20240601;
    let (expected, screened) = run_trial_until(&truth, &config, seed, doseopt_sim::trial::RunUntil::Finished).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let body = json!({"config": config, "grid": truth.grid, "schema": truth.schema, "seed": seed});
    let (status, created) = call(&app, "POST", "/v1/trials", Some(body), &[("x-actor", "statistician")]).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    let id = created["trial_id"].as_str().unwrap().to_string();

    let mut rejected = 0;
    for step in call_sequence(&truth, &expected, seed, screened) {
        match step {
            Step::Arrival { time, pattern, expect } => {
                let body = json!({"covariates": named(&expected, &pattern), "time": time});
                let (status, resp) = call(&app, "POST", &format!("/v1/trials/{id}/patients"), Some(body), &[]).await;
                match expect {
                    Some(level) => {
                        assert_eq!(status, StatusCode::CREATED, "{resp}");
                        let r: EnrollResponse = serde_json::from_value(resp).unwrap();
                        assert_eq!(r.dose.level.0, level);
                    }
                    None => {
                        assert_eq!(status, StatusCode::CONFLICT, "{resp}");
                        let code = resp["code"].as_str().unwrap();
                        assert!(code == "subgroup_excluded" || code == "conflict", "{resp}");
                        if code == "subgroup_excluded" {
                            assert!(resp["message"].as_str().unwrap().contains("assessment"), "{resp}");
                        }
                        rejected += 1;
                    }
                }
            }
            Step::Outcome { time, patient, report } => {
                let mut body = report;
                body["time"] = json!(time);
                let (status, resp) =
                    call(&app, "POST", &format!("/v1/trials/{id}/patients/{patient}/outcomes"), Some(body), &[]).await;
                assert_eq!(status, StatusCode::OK, "{resp}");
            }
        }
    }

    let store = FileStore::open(dir.path()).unwrap();
    let doc = store.load(&id).unwrap();
    assert_eq!(doc.state, expected, "service state differs from the simulated trial");
    // Every turned-away arrival was answered with a rejection, plus possibly
    // the one that found the trial already closed.
    let turned_away = screened - expected.n_enrolled();
    assert!(rejected == turned_away || rejected == turned_away + 1, "{rejected} vs {turned_away}");
    assert_eq!(doc.audit_log.len() as u64, doc.version);
    assert!(doc.audit_log.iter().all(|a| a.payload_digest.len() == 64));
    assert_eq!(doc.audit_log[0].actor, "statistician");

    let (status, report) = call(&app, "GET", &format!("/v1/trials/{id}/report"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let report: ReportView = serde_json::from_value(report).unwrap();
    assert_eq!(report.stage, expected.stage);
    assert_eq!(report.report, expected.report);
    assert_eq!(report.version, doc.version);

    // Replaying the journal reproduces the stored document.
    let journal = store.journal(&id).unwrap();
    assert_eq!(replay(&id, &journal).unwrap(), doc);

    // A crash after journaling but before the document write rolls forward.
    let half = replay(&id, &journal[..journal.len() / 2]).unwrap();
    std::fs::write(store.document_path(&id), serde_json::to_vec(&half).unwrap()).unwrap();
    let mut f = std::fs::OpenOptions::new().append(true).open(store.journal_path(&id)).unwrap();
    std::io::Write::write_all(&mut f, b"{\"seq\": 99999, \"timest").unwrap();
    drop(f);
    let restarted = self::app(dir.path());
    let (status, again) = call(&restarted, "GET", &format!("/v1/trials/{id}/report"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let again: ReportView = serde_json::from_value(again).unwrap();
    assert_eq!(again, report);
    assert_eq!(store.load(&id).unwrap(), doc);
}

#[tokio::test]
async fn create_validates_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());

    let mut bad = create_body(1);
    bad["config"]["n1"] = json!(0);
    let (status, err) = call(&app, "POST", "/v1/trials", Some(bad), &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "validation_error");
    assert_eq!(err["field_paths"], json!(["config.n1"]));

    let mut wrong_type = create_body(1);
    wrong_type["grid"]["dosage"] = json!("many");
    let (status, err) = call(&app, "POST", "/v1/trials", Some(wrong_type), &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field_paths"], json!(["grid.dosage"]));

    let key = [("idempotency-key", "create-42")];
    let (s1, a) = call(&app, "POST", "/v1/trials", Some(create_body(3)), &key).await;
    let (s2, b) = call(&app, "POST", "/v1/trials", Some(create_body(3)), &key).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::OK));
    let a: CreateTrialResponse = serde_json::from_value(a).unwrap();
    let b: CreateTrialResponse = serde_json::from_value(b).unwrap();
    assert_eq!(a.trial_id, b.trial_id);
    assert!(a.created && !b.created);
    assert_eq!(std::fs::read_dir(dir.path().join("trials")).unwrap().count(), 1);
    assert_eq!(a.stage.to_string(), "escalation");

    // Without a seed the server draws one and reports it.
    let mut unseeded = create_body(0);
    unseeded.as_object_mut().unwrap().remove("seed");
    let (status, c) = call(&app, "POST", "/v1/trials", Some(unseeded), &[]).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(c["seed"].is_u64());
}

#[tokio::test]
async fn enrollment_and_outcome_contract() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, 5).await;

    let (status, fresh) = call(&app, "GET", &format!("/v1/trials/{id}/report"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fresh["stage"], "escalation");
    assert!(fresh["toxicity"].is_null() && fresh["efficacy"].is_null() && fresh["report"].is_null());
    assert_eq!(fresh["n_enrolled"], 0);

    let patient = json!({"covariates": {"prior_treatment": "no", "gender": "female", "gene": "ROS1", "alteration": "fusion"}, "time": 0.0});
    let (status, first) = call(&app, "POST", &format!("/v1/trials/{id}/patients"), Some(patient.clone()), &[]).await;
    assert_eq!(status, StatusCode::CREATED, "{first}");
    assert_eq!(first["dose"]["level"], 1);
    assert_eq!(first["stage"], "escalation");
    assert_eq!(first["patient_id"], 0);

    let mut unknown_level = patient.clone();
    unknown_level["covariates"]["gene"] = json!("KRAS");
    let (status, err) = call(&app, "POST", &format!("/v1/trials/{id}/patients"), Some(unknown_level), &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field_paths"], json!(["covariates.gene"]));

    let url = |pid: usize| format!("/v1/trials/{id}/patients/{pid}/outcomes");
    let (status, err) = call(&app, "POST", &url(7), Some(json!({"auc": 30.0, "time": 0.5})), &[]).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let late = json!({"toxicity": {"occurred": true, "event_time": 6.0}, "time": 6.0});
    let (status, err) = call(&app, "POST", &url(0), Some(late), &[]).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field_paths"], json!(["outcome.toxicity.event_time"]));

    let tox = json!({"toxicity": {"occurred": true, "event_time": 1.5}, "time": 2.0});
    let (status, ok) = call(&app, "POST", &url(0), Some(tox.clone()), &[]).await;
    assert_eq!(status, StatusCode::OK, "{ok}");
    assert_eq!(ok["stage"], "escalation");
    let (status, dup) = call(&app, "POST", &url(0), Some(tox), &[]).await;
    assert_eq!((status, dup["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));

    let (status, _) = call(&app, "GET", "/v1/trials/not-a-trial/report", None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let missing = uuid::Uuid::new_v4();
    let (status, _) = call(&app, "POST", &format!("/v1/trials/{missing}/patients"), Some(patient), &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, report) = call(&app, "GET", &format!("/v1/trials/{id}/report"), None, &[]).await;
    let actions: Vec<&str> = report["audit_log"].as_array().unwrap().iter().map(|a| a["action"].as_str().unwrap()).collect();
    assert_eq!(actions, ["create_trial", "enroll_patient", "record_outcome"]);
    assert!(report["toxicity"].is_null());
    assert_eq!(report["patients"][0]["covariates"]["gene"], "ROS1");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn conflicting_writes_and_retries() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, 8).await;
    let url = format!("/v1/trials/{id}/patients");
    let body = |gene: &str| {
        json!({"covariates": {"prior_treatment": "no", "gender": "male", "gene": gene, "alteration": "fusion"},
               "time": 0.0, "expected_version": 1})
    };
    let (a, b) = tokio::join!(
        call(&app, "POST", &url, Some(body("NTRK")), &[]),
        call(&app, "POST", &url, Some(body("ALK")), &[])
    );
    let statuses = [a.0, b.0];
    assert!(statuses.contains(&StatusCode::CREATED) && statuses.contains(&StatusCode::CONFLICT), "{statuses:?} {} {}", a.1, b.1);
    let loser = if a.0 == StatusCode::CONFLICT { a.1 } else { b.1 };
    assert_eq!(loser["code"], "version_conflict");

    // A retried request with the same key gets the same answer and no new version.
    let retry = json!({"covariates": {"prior_treatment": "yes", "gender": "male", "gene": "ALK", "alteration": "other"}, "time": 0.5});
    let key = [("idempotency-key", "enroll-2")];
    let (s1, r1) = call(&app, "POST", &url, Some(retry.clone()), &key).await;
    let (s2, r2) = call(&app, "POST", &url, Some(retry), &key).await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::CREATED));
    assert_eq!(r1, r2);
    let (_, report) = call(&app, "GET", &format!("/v1/trials/{id}/report"), None, &[]).await;
    assert_eq!(report["version"], 3);
    let other = json!({"covariates": {"prior_treatment": "yes", "gender": "male", "gene": "NTRK", "alteration": "other"}, "time": 0.6});
    let (status, err) = call(&app, "POST", &url, Some(other), &key).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{err}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_requests_return_a_poll_token() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = create(&app, 9).await;
    let body = json!({"covariates": {"prior_treatment": "no", "gender": "male", "gene": "NTRK", "alteration": "fusion"}, "time": 0.0});
    let (status, accepted) = call(&app, "POST", &format!("/v1/trials/{id}/patients?wait_ms=0"), Some(body), &[]).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{accepted}");
    let poll = accepted["poll"].as_str().unwrap().to_string();
    let mut job = Value::Null;
    for _ in 0..200 {
        let (status, view) = call(&app, "GET", &poll, None, &[]).await;
        assert_eq!(status, StatusCode::OK);
        if view["status"] == "succeeded" {
            job = view;
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    assert_eq!(job["http_status"], 201);
    assert_eq!(job["result"]["dose"]["level"], 1);
    let (status, _) = call(&app, "GET", &format!("/v1/trials/{id}/jobs/{}", uuid::Uuid::new_v4()), None, &[]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_token_guards_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = settings(dir.path());
    s.token = Some("s3cret".into());
    let app = router(s.app_state().unwrap(), None);
    let (status, err) = call(&app, "POST", "/v1/trials", Some(create_body(1)), &[]).await;
    assert_eq!((status, err["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthorized")));
    let (status, _) = call(&app, "POST", "/v1/trials", Some(create_body(1)), &[("authorization", "Bearer s3cret")]).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = call(&app, "GET", "/healthz", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
}

#[test]
fn settings_come_from_the_environment() {
    let s = Settings::from_lookup(|k| match k {
        "DOSEOPT_BIND_ADDR" => Some("0.0.0.0:9000".into()),
        "DOSEOPT_WORKERS" => Some("3".into()),
        _ => None,
    })
    .unwrap();
    assert_eq!(s.bind_addr.port(), 9000);
    assert_eq!(s.workers, 3);
    assert!(Settings::from_lookup(|k| (k == "DOSEOPT_WORKERS").then(|| "zero".into())).is_err());
}
