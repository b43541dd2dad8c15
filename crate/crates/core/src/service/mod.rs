//! Query service: sessions, asynchronous jobs, execution, audit and metrics.

mod ablation;
mod audit;
mod config;
mod exec;
pub mod http;
mod job;
mod metrics;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ablation::{
    desk_corpus, run_ablation, AblationReport, DeskQuestion, ModeMetrics, DESK_QUESTIONS,
};
pub use audit::{
    anonymize_session, question_hash, AuditAck, AuditError, AuditEvent, AuditLog, AuditPhase,
    AuditSink, FileAuditSink, MemoryAuditSink,
};
pub use config::{ConfigError, ServiceConfig};
pub use exec::{execute_statement, ExecError, SessionPermission};
pub use job::{is_lifecycle_prefix, FailureCategory, JobError, JobStatus, PhaseTiming, QueryJob};
pub use metrics::{compute_metrics, parse_window, percentile, LabeledAnswers, MetricsReport};

use crate::catalog::Catalog;
use crate::cleaning::{DictionaryTranslator, TranslationProvider};
use crate::guard::{Guard, VerdictStatus};
use crate::nl2sql::{
    assemble_prompt, generate_sql, preprocess_question, translate_question, translate_result,
    CompletionRequest, LlmProvider, PromptExample, PromptTemplate, ProviderError,
    DEFAULT_MAX_ATTEMPTS, DEFAULT_TOKEN_BUDGET,
};
use crate::retrieval::{sample_index, Corpus, EmbeddingProvider, HashingEmbedder, DEFAULT_K};
use crate::store::{AnalyticsStore, DEFAULT_ROW_CAP, DEFAULT_STATEMENT_TIMEOUT};
use crate::table::{sha256_hex, Cell, ResultTable};
use crate::text::Language;

pub const DEFAULT_HISTORY_LIMIT: usize = 20;
pub const HISTORY_PREVIEW_ROWS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySettings {
    /// Few-shot examples per prompt.
    pub k: usize,
    pub token_budget: usize,
    pub max_attempts: usize,
    pub row_cap: usize,
    #[serde(with = "secs")]
    pub statement_timeout: Duration,
}

impl Default for QuerySettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            row_cap: DEFAULT_ROW_CAP,
            statement_timeout: DEFAULT_STATEMENT_TIMEOUT,
        }
    }
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("unknown or missing session token")]
    Unauthenticated,
    #[error("session may not submit queries")]
    QueryNotPermitted,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("job not found")]
    NotFound,
    #[error("job is still {0}")]
    NotReady(JobStatus),
    #[error("invalid session permission: {0}")]
    InvalidPermission(String),
}

struct JobSlot {
    session_token: String,
    seq: u64,
    job: Mutex<QueryJob>,
}

/// Current status of one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusView {
    pub job_id: String,
    pub status: JobStatus,
    pub timings: Vec<PhaseTiming>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
}

/// Terminal output of one job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultView {
    pub job_id: String,
    pub status: JobStatus,
    pub headers: Vec<crate::table::ColumnHeader>,
    pub rows: Vec<Vec<Cell>>,
    pub row_count: usize,
    pub truncated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refusal: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_sql: Option<String>,
    pub translation_warning: bool,
}

/// History entry; carries at most `HISTORY_PREVIEW_ROWS` rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobSummary {
    pub job_id: String,
    pub question: String,
    pub detected_language: Option<Language>,
    pub status: JobStatus,
    pub generated_sql: Option<String>,
    pub row_count: usize,
    pub truncated: bool,
    pub preview: Vec<Vec<Cell>>,
    pub refusal: Option<String>,
    pub error: Option<JobError>,
    pub created_at: DateTime<Utc>,
}

/// Wraps a provider and accumulates the time spent inside it.
struct TimedProvider<'a> {
    inner: &'a dyn LlmProvider,
    nanos: AtomicU64,
}

impl LlmProvider for TimedProvider<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: CompletionRequest<'_>) -> Result<String, ProviderError> {
        let t = Instant::now();
        let r = self.inner.complete(request);
        self.nanos
            .fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        r
    }
}

/// Shared dependencies of the query pipeline.
pub struct QueryService {
    catalog: Arc<Catalog>,
    store: Arc<AnalyticsStore>,
    corpus: Arc<Corpus>,
    embedder: Arc<dyn EmbeddingProvider>,
    llm: Arc<dyn LlmProvider>,
    translator: Arc<dyn TranslationProvider>,
    phrases: Arc<DictionaryTranslator>,
    template: PromptTemplate,
    audit: Arc<AuditLog>,
    settings: QuerySettings,
    sessions: RwLock<HashMap<String, SessionPermission>>,
    jobs: RwLock<HashMap<String, Arc<JobSlot>>>,
    next_seq: AtomicU64,
}

impl std::fmt::Debug for QueryService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QueryService")
            .field("settings", &self.settings)
            .field("llm", &self.llm.name())
            .finish()
    }
}

pub struct QueryServiceBuilder {
    catalog: Arc<Catalog>,
    store: Arc<AnalyticsStore>,
    llm: Arc<dyn LlmProvider>,
    corpus: Option<Arc<Corpus>>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
    translator: Option<Arc<dyn TranslationProvider>>,
    phrases: Option<Arc<DictionaryTranslator>>,
    template: Option<PromptTemplate>,
    audit: Option<Arc<AuditLog>>,
    settings: QuerySettings,
}

impl QueryServiceBuilder {
    pub fn corpus(mut self, corpus: Arc<Corpus>) -> Self {
        self.corpus = Some(corpus);
        self
    }

    pub fn embedder(mut self, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    /// Provider for question and label translation.
    pub fn translator(mut self, translator: Arc<dyn TranslationProvider>) -> Self {
        self.translator = Some(translator);
        self
    }

    /// Phrase table for result labels and values.
    pub fn phrases(mut self, phrases: Arc<DictionaryTranslator>) -> Self {
        self.phrases = Some(phrases);
        self
    }

    pub fn template(mut self, template: PromptTemplate) -> Self {
        self.template = Some(template);
        self
    }

    pub fn audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn settings(mut self, settings: QuerySettings) -> Self {
        self.settings = settings;
        self
    }

    /// Missing parts default to the hashing embedder, the built-in example
    /// corpus and phrase table, the shipped template and an in-memory audit.
    pub fn build(self) -> Arc<QueryService> {
        let embedder = self
            .embedder
            .unwrap_or_else(|| Arc::new(HashingEmbedder::default()));
        let corpus = self.corpus.unwrap_or_else(|| {
            Arc::new(Corpus::new(sample_index(
                embedder.as_ref(),
                &Guard::new(&self.catalog),
            )))
        });
        let phrases = self
            .phrases
            .unwrap_or_else(|| Arc::new(DictionaryTranslator::sample()));
        let translator = self.translator.unwrap_or_else(|| phrases.clone());
        Arc::new(QueryService {
            catalog: self.catalog,
            store: self.store,
            corpus,
            embedder,
            llm: self.llm,
            translator,
            phrases,
            template: self.template.unwrap_or_else(PromptTemplate::sample),
            audit: self.audit.unwrap_or_else(|| Arc::new(AuditLog::memory())),
            settings: self.settings,
            sessions: RwLock::new(HashMap::new()),
            jobs: RwLock::new(HashMap::new()),
            next_seq: AtomicU64::new(0),
        })
    }
}

/// What the loading phase produces.
struct Loaded {
    language: Language,
    english: String,
    example_ids: Vec<String>,
    bundle: crate::nl2sql::PromptBundle,
}

impl QueryService {
    pub fn builder(
        catalog: Arc<Catalog>,
        store: Arc<AnalyticsStore>,
        llm: Arc<dyn LlmProvider>,
    ) -> QueryServiceBuilder {
        QueryServiceBuilder {
            catalog,
            store,
            llm,
            corpus: None,
            embedder: None,
            translator: None,
            phrases: None,
            template: None,
            audit: None,
            settings: QuerySettings::default(),
        }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn store(&self) -> &Arc<AnalyticsStore> {
        &self.store
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    pub fn settings(&self) -> &QuerySettings {
        &self.settings
    }

    /// Registers or replaces a session. Allowed tables must exist in the
    /// catalog.
    pub fn register_session(&self, permission: SessionPermission) -> Result<(), ServiceError> {
        let unknown = permission.unknown_tables(&self.catalog.schema);
        if !unknown.is_empty() {
            return Err(ServiceError::InvalidPermission(format!(
                "unknown tables: {}",
                unknown.join(", ")
            )));
        }
        self.sessions
            .write()
            .insert(permission.session_token.clone(), permission);
        Ok(())
    }

    fn session(&self, token: &str) -> Result<SessionPermission, ServiceError> {
        self.sessions
            .read()
            .get(token)
            .cloned()
            .ok_or(ServiceError::Unauthenticated)
    }

    fn create_job(
        &self,
        token: &str,
        question: &str,
        hint: Option<Language>,
    ) -> Result<(Arc<JobSlot>, SessionPermission), ServiceError> {
        let perm = self.session(token)?;
        if !perm.may_query {
            return Err(ServiceError::QueryNotPermitted);
        }
        if question.trim().is_empty() {
            return Err(ServiceError::EmptyQuestion);
        }
        let job = QueryJob::new(uuid::Uuid::new_v4().to_string(), question.to_string(), hint);
        let slot = Arc::new(JobSlot {
            session_token: token.to_string(),
            seq: self.next_seq.fetch_add(1, Ordering::SeqCst),
            job: Mutex::new(job),
        });
        let id = slot.job.lock().job_id.clone();
        self.audit_event(&slot, AuditPhase::Loading, None);
        self.jobs.write().insert(id, slot.clone());
        Ok((slot, perm))
    }

    /// Creates a job in `loading` and runs its pipeline on a new thread.
    pub fn submit(
        self: &Arc<Self>,
        token: &str,
        question: &str,
        hint: Option<Language>,
    ) -> Result<String, ServiceError> {
        let (slot, perm) = self.create_job(token, question, hint)?;
        let id = slot.job.lock().job_id.clone();
        let svc = Arc::clone(self);
        std::thread::Builder::new()
            .name(format!("job-{}", &id[..8]))
            .spawn(move || svc.run_pipeline(&slot, &perm))
            .expect("job thread spawns");
        Ok(id)
    }

    /// Runs a job to completion on the calling thread.
    pub fn run_blocking(
        &self,
        token: &str,
        question: &str,
        hint: Option<Language>,
    ) -> Result<QueryJob, ServiceError> {
        let (slot, perm) = self.create_job(token, question, hint)?;
        self.run_pipeline(&slot, &perm);
        let job = slot.job.lock().clone();
        Ok(job)
    }

    fn slot(&self, token: &str, job_id: &str) -> Result<Arc<JobSlot>, ServiceError> {
        self.session(token)?;
        match self.jobs.read().get(job_id) {
            Some(slot) if slot.session_token == token => Ok(slot.clone()),
            _ => Err(ServiceError::NotFound),
        }
    }

    pub fn get_status(&self, token: &str, job_id: &str) -> Result<StatusView, ServiceError> {
        let slot = self.slot(token, job_id)?;
        let job = slot.job.lock();
        Ok(StatusView {
            job_id: job.job_id.clone(),
            status: job.status,
            timings: job.timings.clone(),
            error: job.error.clone(),
        })
    }

    pub fn get_job(&self, token: &str, job_id: &str) -> Result<QueryJob, ServiceError> {
        Ok(self.slot(token, job_id)?.job.lock().clone())
    }

    pub fn get_result(&self, token: &str, job_id: &str) -> Result<ResultView, ServiceError> {
        let slot = self.slot(token, job_id)?;
        let job = slot.job.lock();
        if !job.status.is_terminal() {
            return Err(ServiceError::NotReady(job.status));
        }
        let empty = ResultTable::empty(Vec::new());
        let table = job.result.as_ref().unwrap_or(&empty);
        Ok(ResultView {
            job_id: job.job_id.clone(),
            status: job.status,
            headers: table.headers.clone(),
            rows: table.rows.clone(),
            row_count: table.row_count,
            truncated: table.truncated,
            refusal: job.refusal.clone(),
            error: job.error.clone(),
            generated_sql: job.generated_sql.clone(),
            translation_warning: job.translation_warning,
        })
    }

    /// Finished jobs of this session, newest first.
    pub fn get_history(&self, token: &str, limit: usize) -> Result<Vec<JobSummary>, ServiceError> {
        self.session(token)?;
        let mut slots: Vec<Arc<JobSlot>> = self
            .jobs
            .read()
            .values()
            .filter(|s| s.session_token == token)
            .cloned()
            .collect();
        slots.sort_by_key(|s| std::cmp::Reverse(s.seq));
        Ok(slots
            .iter()
            .filter_map(|s| {
                let job = s.job.lock();
                job.status.is_terminal().then(|| summarize(&job))
            })
            .take(limit)
            .collect())
    }

    fn audit_event(&self, slot: &JobSlot, phase: AuditPhase, duration_ms: Option<f64>) {
        let job = slot.job.lock();
        let mut e = AuditEvent::new(&slot.session_token, &job.job_id, phase, &job.question);
        e.sql_hash = job.generated_sql.as_deref().map(sha256_hex);
        e.verdict = job.verdict.as_ref().map(|v| v.status);
        e.row_count = job.result.as_ref().map(|r| r.row_count);
        e.result_hash = job.result_hash.clone();
        e.category = job.error.as_ref().map(|err| err.category);
        e.duration_ms = duration_ms;
        if phase == AuditPhase::Completed {
            e.duration_ms = Some(job.total_ms());
            e.pipeline_ms = Some((job.total_ms() - job.provider_ms).max(0.0));
        }
        drop(job);
        if let Err(err) = self.audit.record(&e) {
            tracing::error!(error = %err, "audit event rejected");
        }
    }

    fn advance(&self, slot: &JobSlot, next: JobStatus) {
        let closed = {
            let mut job = slot.job.lock();
            job.advance(next);
            let n = job.timings.len();
            job.timings[n - 2].duration_ms
        };
        self.audit_event(slot, next.into(), Some(closed));
    }

    fn fail(&self, slot: &JobSlot, category: FailureCategory, message: String) {
        {
            let mut job = slot.job.lock();
            job.error = Some(JobError { category, message });
        }
        self.advance(slot, JobStatus::Error);
        self.finish(slot);
    }

    fn finish(&self, slot: &JobSlot) {
        slot.job.lock().close();
        self.audit_event(slot, AuditPhase::Completed, None);
    }

    fn load(
        &self,
        question: &str,
        hint: Option<Language>,
    ) -> Result<Loaded, (FailureCategory, String)> {
        let (normalized, detected) = preprocess_question(question)
            .map_err(|e| (FailureCategory::Internal, e.to_string()))?;
        let language = hint.unwrap_or(detected);
        let normalized = if hint.is_some_and(|h| h != detected) {
            crate::text::lowercase_for(&crate::text::collapse_whitespace(question), language)
        } else {
            normalized
        };
        let english = translate_question(
            &normalized,
            language,
            self.translator.as_ref(),
            &self.catalog,
        )
        .map_err(|e| (FailureCategory::ProviderUnavailable, e.to_string()))?;
        let mut examples = Vec::new();
        if self.settings.k > 0 {
            let vector = self
                .embedder
                .embed(&english)
                .map_err(|e| (FailureCategory::ProviderUnavailable, e.to_string()))?;
            let index = self.corpus.snapshot();
            if !index.is_empty() {
                let hits = index
                    .retrieve_topk(&vector, self.settings.k)
                    .map_err(|e| (FailureCategory::Internal, e.to_string()))?;
                examples = hits
                    .into_iter()
                    .map(|h| PromptExample {
                        example_id: h.pair.example_id.clone(),
                        question: h.pair.question.clone(),
                        sql: h.pair.sql.clone(),
                        similarity: h.similarity,
                    })
                    .collect();
            }
        }
        let bundle = assemble_prompt(
            &self.catalog,
            &self.template,
            &examples,
            &english,
            self.settings.k,
            self.settings.token_budget,
        )
        .map_err(|e| (FailureCategory::Internal, e.to_string()))?;
        let example_ids = bundle
            .examples_section
            .iter()
            .map(|e| e.example_id.clone())
            .collect();
        Ok(Loaded {
            language,
            english,
            example_ids,
            bundle,
        })
    }

    fn run_pipeline(&self, slot: &JobSlot, perm: &SessionPermission) {
        let (question, hint) = {
            let job = slot.job.lock();
            (job.question.clone(), job.language_hint)
        };
        let loaded = match self.load(&question, hint) {
            Ok(l) => l,
            Err((category, message)) => return self.fail(slot, category, message),
        };
        {
            let mut job = slot.job.lock();
            job.detected_language = Some(loaded.language);
            job.english_question = Some(loaded.english.clone());
            job.retrieved_example_ids = loaded.example_ids.clone();
        }
        self.advance(slot, JobStatus::GeneratingQuery);

        let guard = Guard::new(&self.catalog);
        let timed = TimedProvider {
            inner: self.llm.as_ref(),
            nanos: AtomicU64::new(0),
        };
        let generated = generate_sql(
            &loaded.bundle,
            &question,
            &timed,
            &guard,
            self.settings.max_attempts,
        );
        slot.job.lock().provider_ms = timed.nanos.load(Ordering::Relaxed) as f64 / 1e6;
        let generation = match generated {
            Ok(g) => g,
            Err(e) => return self.fail(slot, FailureCategory::ProviderUnavailable, e.to_string()),
        };
        {
            let mut job = slot.job.lock();
            job.generated_sql = generation.extracted_sql.clone();
            job.verdict = generation.guard.as_ref().map(|g| g.verdict.clone());
        }
        if generation.policy_blocked {
            let refusal = self.catalog.policy.refusal_message.clone();
            {
                let mut job = slot.job.lock();
                job.refusal = Some(refusal.clone());
                job.result = Some(ResultTable::empty(Vec::new()));
            }
            return self.fail(slot, FailureCategory::PolicyBlocked, refusal);
        }
        if let Some(reason) = generation.refusal {
            return self.fail(slot, FailureCategory::Ambiguous, reason);
        }
        let Some(outcome) = generation.guard.filter(|g| g.verdict.is_pass()) else {
            let (category, message) = match slot.job.lock().verdict.as_ref() {
                Some(v) if v.status == VerdictStatus::RejectSchema => {
                    (FailureCategory::SchemaMisalignment, v.summary())
                }
                Some(v) => (FailureCategory::Ambiguous, v.summary()),
                None => (
                    FailureCategory::Ambiguous,
                    "no statement produced".to_string(),
                ),
            };
            return self.fail(slot, category, message);
        };
        self.advance(slot, JobStatus::ExecutingQuery);

        let table = match execute_statement(
            &outcome,
            perm,
            &self.store,
            self.settings.row_cap,
            self.settings.statement_timeout,
        ) {
            Ok(t) => t,
            Err(e @ ExecError::AccessDenied { .. }) => {
                return self.fail(slot, FailureCategory::AccessDenied, e.to_string())
            }
            Err(e @ ExecError::Timeout) => {
                return self.fail(slot, FailureCategory::ExecutionTimeout, e.to_string())
            }
            Err(e) => return self.fail(slot, FailureCategory::Internal, e.to_string()),
        };
        slot.job.lock().result_hash = Some(table.content_hash());
        self.advance(slot, JobStatus::Translating);

        let translated = translate_result(
            &table,
            loaded.language,
            &self.catalog,
            &self.phrases,
            Some(self.translator.as_ref()),
        );
        {
            let mut job = slot.job.lock();
            job.result = Some(translated.table);
            job.translation_warning = translated.warning;
        }
        self.advance(slot, JobStatus::Ready);
        self.finish(slot);
    }
}

fn summarize(job: &QueryJob) -> JobSummary {
    let (row_count, truncated, preview) = job.result.as_ref().map_or((0, false, Vec::new()), |t| {
        (
            t.row_count,
            t.truncated,
            t.rows.iter().take(HISTORY_PREVIEW_ROWS).cloned().collect(),
        )
    });
    JobSummary {
        job_id: job.job_id.clone(),
        question: job.question.clone(),
        detected_language: job.detected_language,
        status: job.status,
        generated_sql: job.generated_sql.clone(),
        row_count,
        truncated,
        preview,
        refusal: job.refusal.clone(),
        error: job.error.clone(),
        created_at: job.created_at,
    }
}
