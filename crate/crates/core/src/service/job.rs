//! Query job lifecycle.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::guard::ValidationVerdict;
use crate::table::ResultTable;
use crate::text::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Loading,
    GeneratingQuery,
    ExecutingQuery,
    Translating,
    Ready,
    Error,
}

impl JobStatus {
    /// The success path in order.
    pub const LIFECYCLE: [JobStatus; 5] = [
        JobStatus::Loading,
        JobStatus::GeneratingQuery,
        JobStatus::ExecutingQuery,
        JobStatus::Translating,
        JobStatus::Ready,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Loading => "loading",
            JobStatus::GeneratingQuery => "generating_query",
            JobStatus::ExecutingQuery => "executing_query",
            JobStatus::Translating => "translating",
            JobStatus::Ready => "ready",
            JobStatus::Error => "error",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Ready | JobStatus::Error)
    }

    /// Position in the lifecycle order; `Error` ranks after everything.
    pub fn rank(self) -> usize {
        Self::LIFECYCLE
            .iter()
            .position(|s| *s == self)
            .unwrap_or(Self::LIFECYCLE.len())
    }

    /// Legal single steps: the next lifecycle state, or error from any
    /// non-terminal state.
    pub fn can_advance_to(self, next: JobStatus) -> bool {
        if self.is_terminal() {
            return false;
        }
        next == JobStatus::Error || next.rank() == self.rank() + 1
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True when `seq` is a prefix of the lifecycle order, optionally ending in
/// `Error`.
pub fn is_lifecycle_prefix(seq: &[JobStatus]) -> bool {
    let (body, _) = match seq.split_last() {
        Some((JobStatus::Error, body)) => (body, true),
        _ => (seq, false),
    };
    body.len() <= JobStatus::LIFECYCLE.len()
        && body.iter().zip(JobStatus::LIFECYCLE).all(|(a, b)| *a == b)
}

/// Failure taxonomy for terminal errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    /// The model produced no usable statement, or one that does not parse.
    Ambiguous,
    /// The statement referenced something outside the catalog.
    SchemaMisalignment,
    PolicyBlocked,
    AccessDenied,
    ExecutionTimeout,
    ProviderUnavailable,
    Internal,
}

impl FailureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::Ambiguous => "ambiguous",
            FailureCategory::SchemaMisalignment => "schema_misalignment",
            FailureCategory::PolicyBlocked => "policy_blocked",
            FailureCategory::AccessDenied => "access_denied",
            FailureCategory::ExecutionTimeout => "execution_timeout",
            FailureCategory::ProviderUnavailable => "provider_unavailable",
            FailureCategory::Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    pub category: FailureCategory,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: JobStatus,
    pub started_at: DateTime<Utc>,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryJob {
    pub job_id: String,
    pub question: String,
    pub language_hint: Option<Language>,
    pub detected_language: Option<Language>,
    pub english_question: Option<String>,
    pub status: JobStatus,
    pub retrieved_example_ids: Vec<String>,
    pub generated_sql: Option<String>,
    pub verdict: Option<ValidationVerdict>,
    pub result: Option<ResultTable>,
    /// Content hash of the English result, before translation.
    pub result_hash: Option<String>,
    pub refusal: Option<String>,
    pub error: Option<JobError>,
    /// One entry per phase entered, closed when the next one starts.
    pub timings: Vec<PhaseTiming>,
    pub transitions: Vec<(JobStatus, DateTime<Utc>)>,
    /// Time spent inside the language model provider.
    pub provider_ms: f64,
    pub translation_warning: bool,
    pub created_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl QueryJob {
    pub fn new(job_id: String, question: String, language_hint: Option<Language>) -> Self {
        let now = Utc::now();
        Self {
            job_id,
            question,
            language_hint,
            detected_language: None,
            english_question: None,
            status: JobStatus::Loading,
            retrieved_example_ids: Vec::new(),
            generated_sql: None,
            verdict: None,
            result: None,
            result_hash: None,
            refusal: None,
            error: None,
            timings: vec![PhaseTiming {
                phase: JobStatus::Loading,
                started_at: now,
                duration_ms: 0.0,
            }],
            transitions: vec![(JobStatus::Loading, now)],
            provider_ms: 0.0,
            translation_warning: false,
            created_at: now,
            finished_at: None,
        }
    }

    /// Moves to `next`, closing the current phase timing. Panics on an
    /// illegal step.
    pub fn advance(&mut self, next: JobStatus) {
        assert!(
            self.status.can_advance_to(next),
            "illegal job transition {} -> {next}",
            self.status
        );
        let now = Utc::now();
        if let Some(t) = self.timings.last_mut() {
            t.duration_ms = elapsed_ms(t.started_at, now);
        }
        self.status = next;
        self.transitions.push((next, now));
        if next.is_terminal() {
            self.finished_at = Some(now);
        }
        self.timings.push(PhaseTiming {
            phase: next,
            started_at: now,
            duration_ms: 0.0,
        });
    }

    /// Closes the terminal phase timing.
    pub fn close(&mut self) {
        if let Some(t) = self.timings.last_mut() {
            t.duration_ms = elapsed_ms(t.started_at, Utc::now());
        }
    }

    pub fn fail(&mut self, category: FailureCategory, message: impl Into<String>) {
        self.error = Some(JobError {
            category,
            message: message.into(),
        });
        self.advance(JobStatus::Error);
    }

    pub fn timings_by_phase(&self) -> BTreeMap<JobStatus, f64> {
        self.timings
            .iter()
            .map(|t| (t.phase, t.duration_ms))
            .collect()
    }

    pub fn total_ms(&self) -> f64 {
        self.timings.iter().map(|t| t.duration_ms).sum()
    }

    pub fn status_sequence(&self) -> Vec<JobStatus> {
        self.transitions.iter().map(|(s, _)| *s).collect()
    }
}

fn elapsed_ms(from: DateTime<Utc>, to: DateTime<Utc>) -> f64 {
    (to - from).to_std().unwrap_or(Duration::ZERO).as_secs_f64() * 1000.0
}
