//! Few-shot ablation: the same questions run with different example
//! counts, scored from the audit trail.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::audit::AuditLog;
use super::exec::{execute_statement, SessionPermission};
use super::metrics::{compute_metrics, LabeledAnswers, MetricsReport};
use super::{QueryService, QuerySettings};
use crate::catalog::Catalog;
use crate::guard::Guard;
use crate::nl2sql::LlmProvider;
use crate::retrieval::{Corpus, EmbeddingProvider};
use crate::store::AnalyticsStore;
use crate::text::Language;

pub const DESK_QUESTIONS: &str = include_str!("../../assets/desk_questions.jsonl");

const ABLATION_SESSION: &str = "ablation";

/// A question with the statement whose result is the correct answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeskQuestion {
    pub id: String,
    pub language: Language,
    pub question: String,
    pub gold_sql: String,
}

/// The built-in 50-question labeled corpus over the demo data.
pub fn desk_corpus() -> Vec<DeskQuestion> {
    DESK_QUESTIONS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("shipped desk corpus parses"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeMetrics {
    pub shots: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub questions: usize,
    pub modes: Vec<ModeMetrics>,
}

impl AblationReport {
    pub fn mode(&self, shots: usize) -> Option<&MetricsReport> {
        self.modes
            .iter()
            .find(|m| m.shots == shots)
            .map(|m| &m.metrics)
    }
}

/// Executes every gold statement; fails on the first one the guard or the
/// store rejects.
pub fn label_answers(
    catalog: &Catalog,
    store: &AnalyticsStore,
    questions: &[DeskQuestion],
    settings: &QuerySettings,
) -> Result<LabeledAnswers, String> {
    let guard = Guard::new(catalog);
    let perm = SessionPermission::full(ABLATION_SESSION, &catalog.schema);
    let mut labels = LabeledAnswers::new();
    for q in questions {
        let outcome = guard.check(&q.gold_sql, None);
        if !outcome.verdict.is_pass() {
            return Err(format!(
                "{}: gold statement rejected: {}",
                q.id,
                outcome.verdict.summary()
            ));
        }
        let table = execute_statement(
            &outcome,
            &perm,
            store,
            settings.row_cap,
            settings.statement_timeout,
        )
        .map_err(|e| format!("{}: {e}", q.id))?;
        labels.insert(&q.question, &table);
    }
    Ok(labels)
}

/// Runs `questions` once per entry of `shots`, each time through a fresh
/// service whose only difference is the example count.
pub fn run_ablation(
    catalog: Arc<Catalog>,
    store: Arc<AnalyticsStore>,
    corpus: Arc<Corpus>,
    embedder: Arc<dyn EmbeddingProvider>,
    llm: Arc<dyn LlmProvider>,
    questions: &[DeskQuestion],
    shots: &[usize],
) -> Result<AblationReport, String> {
    let base = QuerySettings::default();
    let labels = label_answers(&catalog, &store, questions, &base)?;
    let mut modes = Vec::new();
    for &k in shots {
        let audit = Arc::new(AuditLog::memory());
        let svc = QueryService::builder(catalog.clone(), store.clone(), llm.clone())
            .corpus(corpus.clone())
            .embedder(embedder.clone())
            .audit(audit.clone())
            .settings(QuerySettings { k, ..base.clone() })
            .build();
        svc.register_session(SessionPermission::full(ABLATION_SESSION, &catalog.schema))
            .map_err(|e| e.to_string())?;
        for q in questions {
            svc.run_blocking(ABLATION_SESSION, &q.question, Some(q.language))
                .map_err(|e| e.to_string())?;
        }
        let events = audit.events().map_err(|e| e.to_string())?;
        modes.push(ModeMetrics {
            shots: k,
            metrics: compute_metrics(&events, None, Some(&labels)),
        });
    }
    Ok(AblationReport {
        questions: questions.len(),
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_corpus_shape() {
        let qs = desk_corpus();
        assert_eq!(qs.len(), 50);
        let mut ids: Vec<&str> = qs.iter().map(|q| q.id.as_str()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 50);
        for lang in Language::ALL {
            assert!(qs.iter().any(|q| q.language == lang), "{lang}");
        }
    }
}
