//! HTTP service for conducting a two-stage dose-optimization trial.
//!
//! Each trial is a JSON document holding the engine's `TrialState` and an
//! audit log, backed by a write-ahead journal of every accepted mutation.
//! Replaying the journal reproduces the document exactly, which is how the
//! store recovers from a crash between the two writes.

pub mod actions;
pub mod api;
pub mod error;
pub mod jobs;
pub mod service;
pub mod store;
pub mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{router, AppState};
pub use error::{ErrorBody, Result, ServiceError};
pub use service::Service;
pub use store::{FileStore, TrialDocument, TrialStore};

/// Runtime settings, normally read from the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub bind_addr: SocketAddr,
    pub workers: usize,
    pub token: Option<String>,
    pub console_dir: Option<PathBuf>,
    pub default_wait_ms: u64,
}

impl Settings {
    /// Reads `DOSEOPT_DATA_DIR`, `DOSEOPT_BIND_ADDR`, `DOSEOPT_WORKERS`,
    /// `DOSEOPT_TOKEN`, `DOSEOPT_CONSOLE_DIR` and `DOSEOPT_WAIT_MS`.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let invalid = |name: &str, why: &str| ServiceError::validation(name, format!("{name} {why}"));
        let workers = match get("DOSEOPT_WORKERS") {
            Some(v) => v
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| invalid("DOSEOPT_WORKERS", "must be a positive integer"))?,
            None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        };
        let bind_addr = get("DOSEOPT_BIND_ADDR")
            .unwrap_or_else(|| "127.0.0.1:8080".into())
            .parse()
            .map_err(|_| invalid("DOSEOPT_BIND_ADDR", "must be host:port"))?;
        let default_wait_ms = match get("DOSEOPT_WAIT_MS") {
            Some(v) => v.parse().map_err(|_| invalid("DOSEOPT_WAIT_MS", "must be an integer"))?,
            None => 5_000,
        };
        Ok(Settings {
            data_dir: get("DOSEOPT_DATA_DIR").unwrap_or_else(|| "doseopt-data".into()).into(),
            bind_addr,
            workers,
            token: get("DOSEOPT_TOKEN").filter(|t| !t.is_empty()),
            console_dir: get("DOSEOPT_CONSOLE_DIR").map(PathBuf::from),
            default_wait_ms,
        })
    }

    /// Opens the store and assembles the application state.
    pub fn app_state(&self) -> Result<AppState> {
        let store = FileStore::open(&self.data_dir)?;
        Ok(AppState {
            service: Arc::new(Service::new(Arc::new(store))),
            jobs: jobs::Jobs::new(self.workers),
            token: self.token.clone(),
            default_wait_ms: self.default_wait_ms,
        })
    }
}
