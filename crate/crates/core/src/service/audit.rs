//! Append-only audit trail.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::job::{FailureCategory, JobStatus};
use crate::guard::VerdictStatus;
use crate::table::sha256_hex;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit event violates its invariants: {0}")]
    Invariant(String),
    #[error("audit storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("audit line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditPhase {
    Loading,
    GeneratingQuery,
    ExecutingQuery,
    Translating,
    Ready,
    Error,
    /// Terminal summary written after the job's last phase.
    Completed,
}

impl From<JobStatus> for AuditPhase {
    fn from(s: JobStatus) -> Self {
        match s {
            JobStatus::Loading => AuditPhase::Loading,
            JobStatus::GeneratingQuery => AuditPhase::GeneratingQuery,
            JobStatus::ExecutingQuery => AuditPhase::ExecutingQuery,
            JobStatus::Translating => AuditPhase::Translating,
            JobStatus::Ready => AuditPhase::Ready,
            JobStatus::Error => AuditPhase::Error,
        }
    }
}

/// One audit record. Carries hashes and codes only, never question text,
/// SQL text, cell values or the raw session token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub session: String,
    pub job_id: String,
    pub phase: AuditPhase,
    pub timestamp: DateTime<Utc>,
    pub question_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_count: Option<usize>,
    /// Content hash of the English result table, before translation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<FailureCategory>,
    /// Duration of the phase that just ended, or of the whole job on
    /// `Completed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    /// Whole-job time minus provider time; `Completed` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

const SESSION_PREFIX: &str = "anon-";

/// Stable pseudonym for a session token.
pub fn anonymize_session(token: &str) -> String {
    format!("{SESSION_PREFIX}{}", &sha256_hex(token)[..16])
}

pub fn question_hash(question: &str) -> String {
    sha256_hex(question)
}

fn is_hex(s: &str, len: usize) -> bool {
    s.len() == len
        && s.bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Longest run of ASCII digits in `s`.
fn longest_digit_run(s: &str) -> usize {
    s.split(|c: char| !c.is_ascii_digit())
        .map(str::len)
        .max()
        .unwrap_or(0)
}

/// Digit runs at least this long look like national or payroll numbers.
const ID_DIGITS: usize = 9;

impl AuditEvent {
    pub fn new(session_token: &str, job_id: &str, phase: AuditPhase, question: &str) -> Self {
        Self {
            session: anonymize_session(session_token),
            job_id: job_id.to_string(),
            phase,
            timestamp: Utc::now(),
            question_hash: question_hash(question),
            sql_hash: None,
            verdict: None,
            row_count: None,
            result_hash: None,
            category: None,
            duration_ms: None,
            pipeline_ms: None,
            detail: None,
        }
    }

    /// Hash fields must be SHA-256 hex, the session must be a pseudonym,
    /// and free text must not carry identifier-like digit runs.
    pub fn check_invariants(&self) -> Result<(), AuditError> {
        let bad = |m: &str| Err(AuditError::Invariant(m.to_string()));
        match self.session.strip_prefix(SESSION_PREFIX) {
            Some(h) if is_hex(h, 16) => {}
            _ => return bad("session is not an anonymized token"),
        }
        if !is_hex(&self.question_hash, 64) {
            return bad("question_hash is not a SHA-256 digest");
        }
        for (name, h) in [
            ("sql_hash", &self.sql_hash),
            ("result_hash", &self.result_hash),
        ] {
            if h.as_deref().is_some_and(|h| !is_hex(h, 64)) {
                return bad(&format!("{name} is not a SHA-256 digest"));
            }
        }
        if longest_digit_run(&self.job_id) >= ID_DIGITS
            && uuid::Uuid::parse_str(&self.job_id).is_err()
        {
            return bad("job_id carries an identifier-like value");
        }
        if self
            .detail
            .as_deref()
            .is_some_and(|d| longest_digit_run(d) >= ID_DIGITS)
        {
            return bad("detail carries an identifier-like value");
        }
        Ok(())
    }
}

pub trait AuditSink: Send + Sync {
    /// Appends durably; returns only once the event is stored.
    fn append(&self, event: &AuditEvent) -> Result<(), AuditError>;
    /// Every stored event in append order.
    fn events(&self) -> Result<Vec<AuditEvent>, AuditError>;
}

#[derive(Debug, Default)]
pub struct MemoryAuditSink {
    events: Mutex<Vec<AuditEvent>>,
}

impl MemoryAuditSink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl AuditSink for MemoryAuditSink {
    fn append(&self, event: &AuditEvent) -> Result<(), AuditError> {
        self.events.lock().push(event.clone());
        Ok(())
    }

    fn events(&self) -> Result<Vec<AuditEvent>, AuditError> {
        Ok(self.events.lock().clone())
    }
}

/// JSON lines, fsynced after every append.
#[derive(Debug)]
pub struct FileAuditSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl FileAuditSink {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Reads an audit file without opening it for writing.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<AuditEvent>, AuditError> {
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| AuditError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(out)
    }
}

impl AuditSink for FileAuditSink {
    fn append(&self, event: &AuditEvent) -> Result<(), AuditError> {
        let mut line = serde_json::to_string(event).expect("audit event serializes");
        line.push('\n');
        let mut f = self.file.lock();
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    fn events(&self) -> Result<Vec<AuditEvent>, AuditError> {
        Self::read(&self.path)
    }
}

/// Whether an event reached storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditAck {
    Stored,
    Degraded,
}

/// Validating front for a sink. Storage failures never fail the caller:
/// they raise the degraded flag and are logged at error level.
pub struct AuditLog {
    sink: Box<dyn AuditSink>,
    degraded: AtomicBool,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog")
            .field("degraded", &self.is_degraded())
            .finish()
    }
}

impl AuditLog {
    pub fn new(sink: Box<dyn AuditSink>) -> Self {
        Self {
            sink,
            degraded: AtomicBool::new(false),
        }
    }

    pub fn memory() -> Self {
        Self::new(Box::new(MemoryAuditSink::new()))
    }

    /// Rejects events that break the invariants; otherwise appends.
    pub fn record(&self, event: &AuditEvent) -> Result<AuditAck, AuditError> {
        event.check_invariants()?;
        match self.sink.append(event) {
            Ok(()) => Ok(AuditAck::Stored),
            Err(e) => {
                self.degraded.store(true, Ordering::SeqCst);
                tracing::error!(error = %e, job_id = %event.job_id, "audit storage failed; continuing in degraded mode");
                Ok(AuditAck::Degraded)
            }
        }
    }

    pub fn is_degraded(&self) -> bool {
        self.degraded.load(Ordering::SeqCst)
    }

    pub fn events(&self) -> Result<Vec<AuditEvent>, AuditError> {
        self.sink.events()
    }

    /// Events of one job, oldest first.
    pub fn events_for_job(&self, job_id: &str) -> Result<Vec<AuditEvent>, AuditError> {
        let mut ev: Vec<AuditEvent> = self
            .events()?
            .into_iter()
            .filter(|e| e.job_id == job_id)
            .collect();
        ev.sort_by_key(|e| e.timestamp);
        Ok(ev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pseudonyms_are_stable_and_opaque() {
        let a = anonymize_session("secret-token");
        assert_eq!(a, anonymize_session("secret-token"));
        assert_ne!(a, anonymize_session("other"));
        assert!(!a.contains("secret"));
    }

    #[test]
    fn raw_identifiers_are_rejected() {
        let log = AuditLog::memory();
        let mut e = AuditEvent::new("t", "job-1", AuditPhase::Loading, "q");
        assert_eq!(log.record(&e).unwrap(), AuditAck::Stored);
        e.detail = Some("national id 12345678901".into());
        assert!(matches!(log.record(&e), Err(AuditError::Invariant(_))));
        e.detail = None;
        e.sql_hash = Some("12345678901".into());
        assert!(matches!(log.record(&e), Err(AuditError::Invariant(_))));
        e.sql_hash = None;
        e.session = "alice".into();
        assert!(log.record(&e).is_err());
        assert_eq!(log.events().unwrap().len(), 1);
    }

    #[test]
    fn storage_failure_degrades() {
        struct Broken;
        impl AuditSink for Broken {
            fn append(&self, _: &AuditEvent) -> Result<(), AuditError> {
                Err(AuditError::Storage(std::io::Error::other("disk full")))
            }
            fn events(&self) -> Result<Vec<AuditEvent>, AuditError> {
                Ok(Vec::new())
            }
        }
        let log = AuditLog::new(Box::new(Broken));
        let ack = log
            .record(&AuditEvent::new("t", "j", AuditPhase::Completed, "q"))
            .unwrap();
        assert_eq!(ack, AuditAck::Degraded);
        assert!(log.is_degraded());
    }

    #[test]
    fn file_sink_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit/events.jsonl");
        let sink = FileAuditSink::open(&path).unwrap();
        let mut e = AuditEvent::new("t", "j", AuditPhase::Ready, "q");
        e.row_count = Some(3);
        sink.append(&e).unwrap();
        sink.append(&AuditEvent::new("t", "j", AuditPhase::Completed, "q"))
            .unwrap();
        let back = FileAuditSink::read(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], e);
    }
}
