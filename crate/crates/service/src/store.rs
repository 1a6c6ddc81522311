//! Trial persistence: one JSON document per trial plus its write-ahead journal.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use doseopt_core::design::TrialState;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::actions::{replay, sha256_hex, JournalEntry};
use crate::error::{Result, ServiceError};

/// Version of the serialized [`TrialDocument`] layout.
pub const DOCUMENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub actor: String,
    pub action: String,
    pub payload_digest: String,
    pub outcome: String,
}

/// Response remembered under an idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub request_digest: String,
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDocument {
    pub format_version: u32,
    pub trial_id: String,
    /// Number of journaled mutations; bumps on every change.
    pub version: u64,
    pub created_ms: u64,
    pub state: TrialState,
    pub audit_log: Vec<AuditEntry>,
    #[serde(default)]
    pub idempotency: BTreeMap<String, StoredResponse>,
}

/// Key-value persistence for trial documents.
pub trait TrialStore: Send + Sync {
    /// Loads a trial, first rolling forward any journaled mutation the
    /// document does not yet reflect.
    fn load(&self, trial_id: &str) -> Result<TrialDocument>;

    /// Journals `entry` and stores `doc`, provided the stored version is
    /// still `expected` (0 for a new trial).
    fn commit(&self, doc: &TrialDocument, entry: &JournalEntry, expected: u64) -> Result<()>;

    fn journal(&self, trial_id: &str) -> Result<Vec<JournalEntry>>;

    /// Trial created under an idempotency key, if any.
    fn created_under(&self, key: &str) -> Result<Option<String>>;

    fn remember_creation(&self, key: &str, trial_id: &str) -> Result<()>;
}

/// Filesystem store: `trials/<id>/document.json` and `trials/<id>/journal.jsonl`
/// under the data directory.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

const DOCUMENT: &str = "document.json";
const JOURNAL: &str = "journal.jsonl";

/// Trial ids are UUIDs; anything else never touches the filesystem.
fn check_id(trial_id: &str) -> Result<()> {
    match uuid::Uuid::parse_str(trial_id) {
        Ok(_) => Ok(()),
        Err(_) => Err(ServiceError::NotFound(format!("trial {trial_id} does not exist"))),
    }
}

/// Each writer gets its own temporary file. A load that rolls the document
/// forward can race a commit, and a shared name would let one rename steal
/// the other's file. A stale roll-forward that lands last only leaves the
/// document behind the journal, which the next load repairs.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", uuid::Uuid::new_v4().simple()));
    let mut f = File::create(&tmp).map_err(|e| ServiceError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| ServiceError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ServiceError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.join("trials"), root.join("idempotency")] {
            fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        }
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn trial_dir(&self, trial_id: &str) -> PathBuf {
        self.root.join("trials").join(trial_id)
    }

    pub fn document_path(&self, trial_id: &str) -> PathBuf {
        self.trial_dir(trial_id).join(DOCUMENT)
    }

    pub fn journal_path(&self, trial_id: &str) -> PathBuf {
        self.trial_dir(trial_id).join(JOURNAL)
    }

    fn read_document(&self, trial_id: &str) -> Result<Option<TrialDocument>> {
        let path = self.document_path(trial_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ServiceError::io(&path, e)),
        };
        let doc: TrialDocument = serde_json::from_str(&text).map_err(|e| ServiceError::Corrupt {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if doc.format_version != DOCUMENT_FORMAT_VERSION {
            return Err(ServiceError::Corrupt {
                path: path.display().to_string(),
                detail: format!("unsupported document format {}", doc.format_version),
            });
        }
        Ok(Some(doc))
    }

    fn stored_version(&self, trial_id: &str) -> Result<u64> {
        Ok(self.read_document(trial_id)?.map_or(0, |d| d.version))
    }
}

impl TrialStore for FileStore {
    fn load(&self, trial_id: &str) -> Result<TrialDocument> {
        check_id(trial_id)?;
        let doc = self.read_document(trial_id)?;
        let journal = self.journal(trial_id)?;
        match doc {
            Some(doc) if doc.version == journal.len() as u64 => Ok(doc),
            Some(doc) if doc.version > journal.len() as u64 => Err(ServiceError::Corrupt {
                path: self.journal_path(trial_id).display().to_string(),
                detail: format!("document is at version {} but the journal has {} entries", doc.version, journal.len()),
            }),
            None if journal.is_empty() => Err(ServiceError::NotFound(format!("trial {trial_id} does not exist"))),
            _ => {
                // The process stopped between journaling and storing the document.
                tracing::warn!(trial_id, entries = journal.len(), "rebuilding trial document from its journal");
                let doc = replay(trial_id, &journal)?;
                let bytes = serde_json::to_vec(&doc).expect("documents serialize");
                write_atomic(&self.document_path(trial_id), &bytes)?;
                Ok(doc)
            }
        }
    }

    fn commit(&self, doc: &TrialDocument, entry: &JournalEntry, expected: u64) -> Result<()> {
        check_id(&doc.trial_id)?;
        let dir = self.trial_dir(&doc.trial_id);
        fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        let current = self.stored_version(&doc.trial_id)?;
        if current != expected {
            return Err(ServiceError::VersionConflict { expected, current });
        }
        if entry.seq != expected + 1 || doc.version != entry.seq {
            return Err(ServiceError::Internal(format!(
                "commit of entry {} onto version {expected} as version {}",
                entry.seq, doc.version
            )));
        }
        let path = self.journal_path(&doc.trial_id);
        let mut line = serde_json::to_vec(entry).expect("journal entries serialize");
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::io(&path, e))?;
        f.write_all(&line).map_err(|e| ServiceError::io(&path, e))?;
        f.sync_data().map_err(|e| ServiceError::io(&path, e))?;
        let bytes = serde_json::to_vec(doc).expect("documents serialize");
        write_atomic(&self.document_path(&doc.trial_id), &bytes)
    }

    fn journal(&self, trial_id: &str) -> Result<Vec<JournalEntry>> {
        check_id(trial_id)?;
        let path = self.journal_path(trial_id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ServiceError::io(&path, e)),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| ServiceError::io(&path, e))?;
        let mut entries = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<JournalEntry>(line) {
                Ok(e) => entries.push(e),
                // A torn final line is a write that never completed.
                Err(_) if i + 1 == lines.len() => {
                    tracing::warn!(trial_id, "ignoring incomplete final journal line");
                }
                Err(e) => {
                    return Err(ServiceError::Corrupt {
                        path: path.display().to_string(),
                        detail: format!("line {}: {e}", i + 1),
                    })
                }
            }
        }
        Ok(entries)
    }

    fn created_under(&self, key: &str) -> Result<Option<String>> {
        let path = self.root.join("idempotency").join(sha256_hex(key.as_bytes()));
        match fs::read_to_string(&path) {
            Ok(id) => {
                let id = id.trim().to_string();
                // The key may have been recorded by a creation that never completed.
                match self.load(&id) {
                    Ok(_) => Ok(Some(id)),
                    Err(ServiceError::NotFound(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ServiceError::io(&path, e)),
        }
    }

    fn remember_creation(&self, key: &str, trial_id: &str) -> Result<()> {
        let path = self.root.join("idempotency").join(sha256_hex(key.as_bytes()));
        write_atomic(&path, trial_id.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{Action, JournalEntry};
    use doseopt_core::design::DesignConfig;
    use doseopt_core::efficacy::CovariateSchema;
    use doseopt_core::DoseGrid;

    fn created(id: &str) -> (TrialDocument, JournalEntry) {
        let action = Action::CreateTrial {
            config: DesignConfig::default(),
            grid: DoseGrid::new(vec![1.0, 2.0], vec![0.1, 0.3]).unwrap(),
            schema: CovariateSchema::empty(),
            seed: 1,
        };
        let entry = JournalEntry {
            seq: 1,
            timestamp_ms: 5,
            actor: "a".into(),
            payload_digest: action.digest(),
            action,
            outcome: "applied".into(),
            idempotency_key: None,
            request_digest: None,
        };
        let doc = replay(id, std::slice::from_ref(&entry)).unwrap();
        (doc, entry)
    }

    #[test]
    fn commit_checks_the_stored_version() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let id = uuid::Uuid::new_v4().to_string();
        let (doc, entry) = created(&id);
        store.commit(&doc, &entry, 0).unwrap();
        assert!(matches!(
            store.commit(&doc, &entry, 0),
            Err(ServiceError::VersionConflict { expected: 0, current: 1 })
        ));
        assert_eq!(store.load(&id).unwrap(), doc);
    }

    #[test]
    fn torn_final_line_is_ignored_but_inner_damage_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let id = uuid::Uuid::new_v4().to_string();
        let (doc, entry) = created(&id);
        store.commit(&doc, &entry, 0).unwrap();
        let path = store.journal_path(&id);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"seq\": 2, \"ti");
        fs::write(&path, &text).unwrap();
        assert_eq!(store.journal(&id).unwrap().len(), 1);
        fs::write(&path, format!("garbage\n{text}")).unwrap();
        assert!(matches!(store.journal(&id), Err(ServiceError::Corrupt { .. })));
    }

    #[test]
    fn ids_that_are_not_uuids_are_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert!(matches!(store.load("../../etc"), Err(ServiceError::NotFound(_))));
    }
}
