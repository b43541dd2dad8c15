//! Quality and latency metrics over the audit trail.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use super::audit::{question_hash, AuditEvent, AuditPhase};
use super::job::FailureCategory;
use crate::guard::VerdictStatus;
use crate::table::ResultTable;

/// Expected answers keyed by question hash; values are result content
/// hashes.
#[derive(Debug, Clone, Default)]
pub struct LabeledAnswers {
    by_question: HashMap<String, String>,
}

impl LabeledAnswers {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, question: &str, expected: &ResultTable) {
        self.by_question
            .insert(question_hash(question), expected.content_hash());
    }

    pub fn len(&self) -> usize {
        self.by_question.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_question.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub total_jobs: usize,
    /// Guard passes over all jobs.
    pub validity_rate: Option<f64>,
    /// Statements that resolved against the catalog over statements that
    /// parsed.
    pub schema_compliance_rate: Option<f64>,
    pub latency_p50_ms: Option<f64>,
    pub latency_p95_ms: Option<f64>,
    /// Latency without time spent in the language model.
    pub pipeline_p50_ms: Option<f64>,
    pub failure_categories: BTreeMap<FailureCategory, usize>,
    pub semantic_accuracy: Option<f64>,
    pub labeled_jobs: usize,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics over the jobs whose terminal summary falls inside `window`
/// (inclusive start, exclusive end; `None` means everything). An empty
/// window yields an empty report.
pub fn compute_metrics(
    events: &[AuditEvent],
    window: Option<(DateTime<Utc>, DateTime<Utc>)>,
    labels: Option<&LabeledAnswers>,
) -> MetricsReport {
    let mut jobs: BTreeMap<&str, &AuditEvent> = BTreeMap::new();
    for e in events {
        if e.phase != AuditPhase::Completed
            || window.is_some_and(|(from, to)| e.timestamp < from || e.timestamp >= to)
        {
            continue;
        }
        jobs.insert(&e.job_id, e);
    }
    let total = jobs.len();
    let count = |f: &dyn Fn(&AuditEvent) -> bool| jobs.values().filter(|e| f(e)).count();
    let passed = count(&|e| e.verdict == Some(VerdictStatus::Pass));
    let parsed = count(&|e| e.verdict.is_some_and(|v| v != VerdictStatus::RejectSyntax));
    let schema_ok = count(&|e| {
        matches!(
            e.verdict,
            Some(VerdictStatus::Pass | VerdictStatus::RejectPolicy)
        )
    });

    let sorted = |f: fn(&AuditEvent) -> Option<f64>| {
        let mut v: Vec<f64> = jobs.values().filter_map(|e| f(e)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let latency = sorted(|e| e.duration_ms);
    let pipeline = sorted(|e| e.pipeline_ms);

    let mut failure_categories = BTreeMap::new();
    for e in jobs.values() {
        if let Some(c) = e.category {
            *failure_categories.entry(c).or_insert(0) += 1;
        }
    }

    let (mut labeled, mut correct) = (0, 0);
    if let Some(labels) = labels {
        for e in jobs.values() {
            if let Some(expected) = labels.by_question.get(&e.question_hash) {
                labeled += 1;
                correct += usize::from(e.result_hash.as_ref() == Some(expected));
            }
        }
    }

    MetricsReport {
        total_jobs: total,
        validity_rate: ratio(passed, total),
        schema_compliance_rate: ratio(schema_ok, parsed),
        latency_p50_ms: percentile(&latency, 50.0),
        latency_p95_ms: percentile(&latency, 95.0),
        pipeline_p50_ms: percentile(&pipeline, 50.0),
        failure_categories,
        semantic_accuracy: labels.and_then(|_| ratio(correct, labeled)),
        labeled_jobs: labeled,
    }
}

/// Parses `7d`, `24h`, `30m` or `45s`.
pub fn parse_window(text: &str) -> Option<Duration> {
    let text = text.trim();
    let split = text.find(|c: char| !c.is_ascii_digit())?;
    let n: i64 = text[..split].parse().ok()?;
    match &text[split..] {
        "d" => Duration::try_days(n),
        "h" => Duration::try_hours(n),
        "m" => Duration::try_minutes(n),
        "s" => Duration::try_seconds(n),
        _ => None,
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |r| format!("{:.1}%", r * 100.0))
}

fn ms(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |m| format!("{m:.1} ms"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "jobs: {}", self.total_jobs)?;
        writeln!(f, "validity: {}", pct(self.validity_rate))?;
        writeln!(f, "schema compliance: {}", pct(self.schema_compliance_rate))?;
        writeln!(f, "latency p50: {}", ms(self.latency_p50_ms))?;
        writeln!(f, "latency p95: {}", ms(self.latency_p95_ms))?;
        if self.semantic_accuracy.is_some() {
            writeln!(
                f,
                "semantic accuracy: {} over {} labeled",
                pct(self.semantic_accuracy),
                self.labeled_jobs
            )?;
        }
        for (c, n) in &self.failure_categories {
            writeln!(f, "failures[{}]: {n}", c.as_str())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn done(
        job: &str,
        verdict: Option<VerdictStatus>,
        category: Option<FailureCategory>,
        ms: f64,
    ) -> AuditEvent {
        let mut e = AuditEvent::new("s", job, AuditPhase::Completed, job);
        e.verdict = verdict;
        e.category = category;
        e.duration_ms = Some(ms);
        e
    }

    #[test]
    fn nine_of_ten_is_ninety_percent() {
        let mut ev: Vec<AuditEvent> = (0..9)
            .map(|i| done(&format!("j{i}"), Some(VerdictStatus::Pass), None, i as f64))
            .collect();
        ev.push(done(
            "j9",
            Some(VerdictStatus::RejectSchema),
            Some(FailureCategory::SchemaMisalignment),
            9.0,
        ));
        let r = compute_metrics(&ev, None, None);
        assert_eq!(r.total_jobs, 10);
        assert_eq!(format!("{:.1}", r.validity_rate.unwrap() * 100.0), "90.0");
        assert_eq!(r.schema_compliance_rate, Some(0.9));
        assert_eq!(r.latency_p50_ms, Some(4.0));
        assert_eq!(r.latency_p95_ms, Some(9.0));
    }

    #[test]
    fn policy_blocked_count() {
        let ev = vec![
            done("a", None, Some(FailureCategory::PolicyBlocked), 1.0),
            done(
                "b",
                Some(VerdictStatus::RejectPolicy),
                Some(FailureCategory::PolicyBlocked),
                1.0,
            ),
            done("c", Some(VerdictStatus::Pass), None, 1.0),
        ];
        let r = compute_metrics(&ev, None, None);
        assert_eq!(r.failure_categories[&FailureCategory::PolicyBlocked], 2);
        // Policy rejections still resolved against the schema.
        assert_eq!(r.schema_compliance_rate, Some(1.0));
    }

    #[test]
    fn empty_window_is_empty_report() {
        let r = compute_metrics(&[], None, None);
        assert_eq!(
            (r.total_jobs, r.validity_rate, r.latency_p50_ms),
            (0, None, None)
        );
        let ev = vec![done("a", Some(VerdictStatus::Pass), None, 1.0)];
        let future = Utc::now() + Duration::days(1);
        assert_eq!(
            compute_metrics(&ev, Some((future, future + Duration::days(1))), None).total_jobs,
            0
        );
    }

    #[test]
    fn windows_parse() {
        assert_eq!(parse_window("7d"), Some(Duration::days(7)));
        assert_eq!(parse_window("36h"), Some(Duration::hours(36)));
        assert_eq!(parse_window("7w"), None);
        assert_eq!(parse_window("d"), None);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(10.0));
        assert_eq!(percentile(&v, 95.0), Some(19.0));
        assert_eq!(percentile(&v, 100.0), Some(20.0));
        assert_eq!(percentile(&[], 50.0), None);
    }
}
