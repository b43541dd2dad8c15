//! Release acceptance suite. Every criterion prints one PASS or FAIL line;
//! the process exits non-zero when any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tolmach_core::catalog::{sample_catalog, Catalog};
use tolmach_core::cleaning::{Pipeline, RawRecord};
use tolmach_core::fixtures::{demo_employees, seeded_store, DEMO_EMPLOYEES, DEMO_SEED};
use tolmach_core::guard::{Guard, ParamValue};
use tolmach_core::nl2sql::ExampleEchoProvider;
use tolmach_core::retrieval::{
    sample_index, Corpus, EmbeddingProvider, ExamplePair, HashingEmbedder, SearchMode, VectorIndex,
};
use tolmach_core::service::{
    desk_corpus, is_lifecycle_prefix, run_ablation, AuditLog, AuditPhase, JobStatus, QueryService,
    SessionPermission,
};
use tolmach_core::store::AnalyticsStore;
use tolmach_core::sync::{FaultPoint, MemoryCursorStore, MemorySource, SyncCursor, SyncEngine};
use tolmach_core::synth::corrupted_corpus;
use tolmach_core::table::Cell;
use tolmach_core::text::Language;

use common::{SqlGrammar, BENIGN_QUESTIONS, FORBIDDEN_QUESTIONS, INJECTION_PAYLOADS};

/// Tolerances and sizes fixed by the acceptance criteria.
const NORMALIZATION_LIMIT: Duration = Duration::from_secs(1);
const CLEAN_RECORDS: usize = 1_000;
const CLEAN_MIN_CORRECTED: f64 = 0.95;
const CLEAN_LIMIT: Duration = Duration::from_secs(30);
const RETRIEVAL_CORPUS: usize = 500;
const RETRIEVAL_PROBES: usize = 50;
const RETRIEVAL_KS: [usize; 3] = [1, 5, 10];
const RETRIEVAL_MIN_RECALL_AT_5: f64 = 0.95;
const RETRIEVAL_NPROBE: usize = 8;
const RETRIEVAL_LIMIT: Duration = Duration::from_secs(5);
const FUZZ_QUERIES: usize = 10_000;
const MIN_INJECTION_PAYLOADS: usize = 50;
const GUARD_LIMIT: Duration = Duration::from_secs(120);
const POLICY_CASES: usize = 60;
const E2E_JOBS: usize = 100;
const E2E_MEDIAN_PIPELINE_MS: f64 = 250.0;
const SYNC_DELTA: usize = 1_000;
const SYNC_FULL: usize = 10_000;
const SYNC_LIMIT: Duration = Duration::from_secs(60);

const INJECTION_TEMPLATE: &str = "SELECT COUNT(*) FROM employees WHERE actual_working_city = ?";

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("{what} took {elapsed:.2?}, limit {limit:?}")
    })
}

fn catalog() -> Arc<Catalog> {
    Arc::new(sample_catalog())
}

fn raw(id: &str, field: &str, value: &str) -> RawRecord {
    RawRecord {
        record_id: id.into(),
        modified_at: "2024-03-01T00:00:00Z".parse().unwrap(),
        fields: BTreeMap::from([(field.to_string(), value.to_string())]),
    }
}

fn reference_normalizations() -> Verdict {
    // Field, raw input, expected normalized output.
    let rows: &[(&str, &str, &str)] = &[
        ("actual_working_city", "Moskva", "Moscow"),
        ("egitimOkulAdi", "ODTU", "Middle East Technical University"),
        (
            "egitimOkulAdi",
            "Orta Dogu Teknik Universitesi",
            "Middle East Technical University",
        ),
        ("role_eng", "civil engineer", "Civil Engineer"),
        ("c_project_eng", "Gpp", "GPP"),
        ("c_project_eng", "GPP project", "GPP"),
        ("department", "İnsan kaynakları", "Human Resources"),
    ];
    let start = Instant::now();
    let pipeline = Pipeline::sample(catalog());
    for (i, (field, input, expected)) in rows.iter().enumerate() {
        let out = pipeline.clean_record(&raw(&format!("t{i}"), field, input));
        ensure(out.fields[*field] == *expected, || {
            format!(
                "{field}: {input:?} -> {:?}, want {expected:?}",
                out.fields[*field]
            )
        })?;
        ensure(!out.is_rejected(), || {
            format!("{field}: {input:?} rejected")
        })?;
    }
    within(start.elapsed(), NORMALIZATION_LIMIT, "reference cases")?;
    Ok(format!(
        "{} raw inputs across 5 rows byte-exact in {:.0?}",
        rows.len(),
        start.elapsed()
    ))
}

fn cleaning_corpus() -> Verdict {
    let cat = catalog();
    let corpus = corrupted_corpus(&cat, CLEAN_RECORDS, 0xC1EA_0001);
    let pipeline = Pipeline::sample(cat);
    let start = Instant::now();
    let first = pipeline.clean_batch(&corpus.raw);
    let again: Vec<RawRecord> = first.iter().map(|r| r.to_raw()).collect();
    let second = pipeline.clean_batch(&again);
    let elapsed = start.elapsed();

    let by_id: BTreeMap<&str, _> = first.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let misses: Vec<String> = corpus
        .planted
        .iter()
        .filter(|p| by_id[p.record_id.as_str()].fields.get(&p.field) != Some(&p.expected))
        .map(|p| {
            let got = by_id[p.record_id.as_str()].fields.get(&p.field);
            format!(
                "{} {} {:?} {:?} -> {:?}, want {:?}",
                p.record_id, p.field, p.kind, p.corrupted, got, p.expected
            )
        })
        .collect();
    for m in &misses {
        println!("    miss: {m}");
    }
    let rate = 1.0 - misses.len() as f64 / corpus.planted.len() as f64;
    ensure(rate >= CLEAN_MIN_CORRECTED, || {
        format!(
            "corrected {:.1}% < {:.0}%",
            rate * 100.0,
            CLEAN_MIN_CORRECTED * 100.0
        )
    })?;

    // Untouched fields must come through unchanged.
    let planted: BTreeSet<(&str, &str)> = corpus
        .planted
        .iter()
        .map(|p| (p.record_id.as_str(), p.field.as_str()))
        .collect();
    let mut collateral = 0;
    for truth in &corpus.truth {
        let got = by_id[truth.record_id.as_str()];
        for (k, v) in &truth.fields {
            if !planted.contains(&(truth.record_id.as_str(), k.as_str()))
                && got.fields.get(k) != Some(v)
            {
                collateral += 1;
                println!(
                    "    collateral: {} {k} {v:?} -> {:?}",
                    truth.record_id,
                    got.fields.get(k)
                );
            }
        }
    }
    ensure(collateral == 0, || {
        format!("{collateral} untouched fields changed")
    })?;

    for (a, b) in first.iter().zip(&second) {
        ensure(a.fields == b.fields, || {
            format!("{} changed on the second pass", a.record_id)
        })?;
        ensure(b.provenance.is_empty(), || {
            format!("{} gained provenance on the second pass", a.record_id)
        })?;
    }
    within(elapsed, CLEAN_LIMIT, "cleaning")?;
    Ok(format!(
        "{}/{} planted corruptions corrected ({:.1}%), second pass no-op, {} misses listed, {elapsed:.2?}",
        corpus.planted.len() - misses.len(),
        corpus.planted.len(),
        rate * 100.0,
        misses.len()
    ))
}

/// Reference top-k: cosine over every pair, descending, ties by id.
fn oracle_topk(pairs: &[ExamplePair], q: &[f32], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = pairs
        .iter()
        .map(|p| {
            let d: f64 = p
                .embedding
                .iter()
                .zip(q)
                .map(|(a, b)| f64::from(*a) * f64::from(*b))
                .sum();
            (p.example_id.clone(), d / (norm(&p.embedding) * norm(q)))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn retrieval() -> Verdict {
    let cat = sample_catalog();
    let guard = Guard::new(&cat);
    let embedder = HashingEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E7A_0005);
    let pairs: Vec<ExamplePair> = (0..RETRIEVAL_CORPUS)
        .map(|i| {
            let q = common::template_question(&mut rng);
            ExamplePair::new(
                format!("p{i:04}"),
                q,
                "SELECT COUNT(*) FROM employees",
                Language::En,
                &embedder,
            )
            .unwrap()
        })
        .collect();
    let probes: Vec<Vec<f32>> = (0..RETRIEVAL_PROBES)
        .map(|_| {
            embedder
                .embed(&common::template_question(&mut rng))
                .unwrap()
        })
        .collect();

    let oracle: Vec<Vec<Vec<(String, f64)>>> = probes
        .iter()
        .map(|q| {
            RETRIEVAL_KS
                .iter()
                .map(|&k| oracle_topk(&pairs, q, k))
                .collect()
        })
        .collect();

    let start = Instant::now();
    let mut index = VectorIndex::new(embedder.dimension());
    for p in &pairs {
        index.add(p.clone(), &guard).map_err(|e| e.to_string())?;
    }
    let mut mismatches = 0;
    for (q, wants) in probes.iter().zip(&oracle) {
        for (k, want) in RETRIEVAL_KS.into_iter().zip(wants) {
            let got: Vec<(String, f64)> = index
                .retrieve_topk(q, k)
                .unwrap()
                .iter()
                .map(|h| (h.pair.example_id.clone(), h.similarity))
                .collect();
            let same = got.len() == want.len()
                && got
                    .iter()
                    .zip(want)
                    .all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() < 1e-9);
            if !same {
                mismatches += 1;
                println!("    exact mismatch k={k}: {got:?} vs {want:?}");
            }
        }
    }
    ensure(mismatches == 0, || {
        format!("{mismatches} exact-mode mismatches")
    })?;

    index.set_mode(SearchMode::Approximate {
        nprobe: RETRIEVAL_NPROBE,
    });
    let mut recall = 0.0;
    for (q, wants) in probes.iter().zip(&oracle) {
        let want: BTreeSet<String> = wants[1].iter().map(|(id, _)| id.clone()).collect();
        let got: BTreeSet<String> = index
            .retrieve_topk(q, 5)
            .unwrap()
            .iter()
            .map(|h| h.pair.example_id.clone())
            .collect();
        recall += want.intersection(&got).count() as f64 / want.len() as f64;
    }
    recall /= probes.len() as f64;
    let elapsed = start.elapsed();
    ensure(recall >= RETRIEVAL_MIN_RECALL_AT_5, || {
        format!("approximate recall@5 {recall:.3} < {RETRIEVAL_MIN_RECALL_AT_5}")
    })?;
    within(elapsed, RETRIEVAL_LIMIT, "retrieval")?;
    Ok(format!(
        "{RETRIEVAL_CORPUS} pairs x {RETRIEVAL_PROBES} probes x k{RETRIEVAL_KS:?}: 0 mismatches; recall@5 {recall:.3} at nprobe {RETRIEVAL_NPROBE}; {elapsed:.2?}"
    ))
}

fn count_where(records: &[tolmach_core::cleaning::CleanRecord], field: &str, value: &str) -> i64 {
    records
        .iter()
        .filter(|r| r.fields.get(field).map(String::as_str) == Some(value))
        .count() as i64
}

fn guard_fuzz() -> Verdict {
    let cat = sample_catalog();
    let guard = Guard::new(&cat);
    let store = seeded_store(&cat);
    let before = store.state_hash().map_err(|e| e.to_string())?;
    let grammar = SqlGrammar::new(&cat);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6A4D_0010);
    let start = Instant::now();

    let (mut passed, mut failures) = (0, Vec::new());
    for _ in 0..FUZZ_QUERIES {
        let sql = grammar.generate(&mut rng);
        let outcome = guard.check(&sql, None);
        if !outcome.verdict.is_pass() {
            continue;
        }
        passed += 1;
        let stmt = outcome
            .statement
            .as_ref()
            .expect("passing verdicts carry a statement");
        if let Err(e) = store.execute(stmt, &outcome.output, 100_000, Duration::from_secs(5)) {
            failures.push(format!("{sql}: {e}"));
        }
    }
    for f in failures.iter().take(10) {
        println!("    fuzz failure: {f}");
    }
    ensure(failures.is_empty(), || {
        format!(
            "{} of {passed} passing statements failed to execute",
            failures.len()
        )
    })?;
    ensure(passed >= FUZZ_QUERIES / 2, || {
        format!("only {passed} of {FUZZ_QUERIES} generated statements passed")
    })?;

    // Injection: each payload is written as a properly quoted literal. The
    // guard must lift it into exactly one parameter, and execution must
    // return what an honest filter over the fixture returns.
    ensure(INJECTION_PAYLOADS.len() >= MIN_INJECTION_PAYLOADS, || {
        "too few payloads".into()
    })?;
    let truth = demo_employees(DEMO_EMPLOYEES, DEMO_SEED);
    let rows_before = store.count("employees").map_err(|e| e.to_string())?;
    for payload in INJECTION_PAYLOADS {
        let literal = payload.replace('\'', "''");
        let sql = format!("SELECT COUNT(*) FROM employees WHERE actual_working_city = '{literal}'");
        let outcome = guard.check(&sql, None);
        ensure(outcome.verdict.is_pass(), || {
            format!("{payload:?}: {}", outcome.verdict.summary())
        })?;
        let stmt = outcome.statement.as_ref().unwrap();
        ensure(
            stmt.params.len() == 1 && stmt.params[0].value == ParamValue::Text(payload.to_string()),
            || format!("{payload:?} not bound as one parameter: {:?}", stmt.params),
        )?;
        ensure(stmt.sql == INJECTION_TEMPLATE, || {
            format!("{payload:?} changed the statement: {}", stmt.sql)
        })?;
        let table = store
            .execute(stmt, &outcome.output, 10, Duration::from_secs(5))
            .map_err(|e| format!("{payload:?}: {e}"))?;
        let want = count_where(&truth, "actual_working_city", payload);
        ensure(table.rows == vec![vec![Cell::Integer(want)]], || {
            format!("{payload:?}: {:?}, honest count {want}", table.rows)
        })?;

        // The same payload pasted raw into the statement never yields a
        // second statement or a write.
        let spliced =
            format!("SELECT COUNT(*) FROM employees WHERE actual_working_city = '{payload}'");
        let o = guard.check(&spliced, None);
        if let Some(stmt) = o.statement.as_ref() {
            let _ = store.execute(stmt, &o.output, 10, Duration::from_secs(5));
        }
    }
    // A control value that does occur in the fixture.
    let control = guard.check(
        "SELECT COUNT(*) FROM employees WHERE actual_working_city = 'Moscow'",
        None,
    );
    let table = store
        .execute(
            control.statement.as_ref().unwrap(),
            &control.output,
            10,
            Duration::from_secs(5),
        )
        .unwrap();
    ensure(
        table.rows
            == vec![vec![Cell::Integer(count_where(
                &truth,
                "actual_working_city",
                "Moscow",
            ))]],
        || "control count differs from the fixture".into(),
    )?;
    ensure(
        store.count("employees").map_err(|e| e.to_string())? == rows_before,
        || "row count changed".into(),
    )?;
    ensure(
        store.state_hash().map_err(|e| e.to_string())? == before,
        || "store state changed".into(),
    )?;
    let elapsed = start.elapsed();
    within(elapsed, GUARD_LIMIT, "guard fuzz")?;
    Ok(format!(
        "{FUZZ_QUERIES} generated, {passed} passed and all executed; {} payloads bound as single parameters, store unchanged; {elapsed:.2?}",
        INJECTION_PAYLOADS.len()
    ))
}

fn service(
    cat: &Arc<Catalog>,
    store: Arc<AnalyticsStore>,
    audit: Arc<AuditLog>,
) -> Arc<QueryService> {
    let svc = QueryService::builder(cat.clone(), store, Arc::new(ExampleEchoProvider::new(0.5)))
        .audit(audit)
        .build();
    svc.register_session(SessionPermission::full("acceptance", &cat.schema))
        .unwrap();
    svc
}

fn policy() -> Verdict {
    ensure(
        FORBIDDEN_QUESTIONS.len() == POLICY_CASES && BENIGN_QUESTIONS.len() == POLICY_CASES,
        || "corpus size".into(),
    )?;
    let cat = catalog();
    let svc = service(
        &cat,
        Arc::new(seeded_store(&cat)),
        Arc::new(AuditLog::memory()),
    );
    let message = cat.policy.refusal_message.clone();
    let mut missed = Vec::new();
    for q in FORBIDDEN_QUESTIONS {
        let job = svc
            .run_blocking("acceptance", q, None)
            .map_err(|e| e.to_string())?;
        let rows = job.result.as_ref().map_or(0, |t| t.rows.len());
        if job.refusal.as_deref() != Some(message.as_str()) || rows != 0 {
            missed.push(format!("{q:?} -> refusal {:?}, {rows} rows", job.refusal));
        }
    }
    let mut false_refusals = Vec::new();
    for q in BENIGN_QUESTIONS {
        let job = svc
            .run_blocking("acceptance", q, None)
            .map_err(|e| e.to_string())?;
        if job.refusal.is_some() {
            false_refusals.push(q.to_string());
        }
    }
    for m in missed.iter().chain(&false_refusals) {
        println!("    {m}");
    }
    ensure(missed.is_empty(), || {
        format!("{} forbidden questions answered", missed.len())
    })?;
    ensure(false_refusals.is_empty(), || {
        format!("{} benign questions refused", false_refusals.len())
    })?;
    Ok(format!("{POLICY_CASES}/{POLICY_CASES} forbidden refused with zero rows, 0/{POLICY_CASES} benign refused"))
}

fn ablation() -> Verdict {
    let cat = catalog();
    let store = Arc::new(seeded_store(&cat));
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(HashingEmbedder::default());
    let corpus = Arc::new(Corpus::new(sample_index(
        embedder.as_ref(),
        &Guard::new(&cat),
    )));
    let questions = desk_corpus();
    ensure(questions.len() == 50, || {
        format!("desk corpus has {} questions", questions.len())
    })?;
    let report = run_ablation(
        cat,
        store,
        corpus,
        embedder,
        Arc::new(ExampleEchoProvider::new(0.5)),
        &questions,
        &[0, 5],
    )?;
    let zero = report.mode(0).ok_or("no 0-shot run")?;
    let five = report.mode(5).ok_or("no 5-shot run")?;
    for (name, m) in [("0-shot", zero), ("5-shot", five)] {
        ensure(m.total_jobs == questions.len(), || {
            format!("{name}: {} jobs", m.total_jobs)
        })?;
        ensure(m.semantic_accuracy.is_some(), || {
            format!("{name}: no semantic accuracy")
        })?;
        ensure(m.schema_compliance_rate.is_some(), || {
            format!("{name}: no schema compliance")
        })?;
    }
    let v = |m: &tolmach_core::service::MetricsReport| m.validity_rate.unwrap_or(0.0);
    ensure(v(five) >= v(zero), || {
        format!("5-shot validity {:.3} < 0-shot {:.3}", v(five), v(zero))
    })?;
    let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |r| format!("{:.1}%", r * 100.0));
    Ok(format!(
        "validity 0-shot {} / 5-shot {}; schema {} / {}; semantic {} / {}",
        pct(zero.validity_rate),
        pct(five.validity_rate),
        pct(zero.schema_compliance_rate),
        pct(five.schema_compliance_rate),
        pct(zero.semantic_accuracy),
        pct(five.semantic_accuracy)
    ))
}

fn end_to_end() -> Verdict {
    let cat = catalog();
    let store = Arc::new(seeded_store(&cat));
    let audit = Arc::new(AuditLog::memory());
    let svc = service(&cat, store.clone(), audit.clone());
    let before = store.state_hash().map_err(|e| e.to_string())?;

    // Scenario question against a hand filter over the fixture.
    let scenario = "How many civil engineers are working on the GPP project in Moscow?";
    let want = demo_employees(DEMO_EMPLOYEES, DEMO_SEED)
        .iter()
        .filter(|r| {
            let f = |k: &str| r.fields.get(k).map(String::as_str);
            f("role_eng") == Some("Civil Engineer")
                && f("c_project_eng") == Some("GPP")
                && f("actual_working_city") == Some("Moscow")
                && f("employee_status") == Some("true")
        })
        .count() as i64;
    let job = svc
        .run_blocking("acceptance", scenario, None)
        .map_err(|e| e.to_string())?;
    ensure(job.status == JobStatus::Ready, || {
        format!("scenario ended {:?}: {:?}", job.status, job.error)
    })?;
    let got = job.result.as_ref().map(|t| t.rows.clone());
    ensure(got == Some(vec![vec![Cell::Integer(want)]]), || {
        format!("scenario answered {got:?}, fixture count {want}")
    })?;

    let mut questions: Vec<(String, Option<Language>)> = desk_corpus()
        .into_iter()
        .map(|q| (q.question, Some(q.language)))
        .collect();
    questions.extend(
        FORBIDDEN_QUESTIONS
            .iter()
            .take(10)
            .map(|q| (q.to_string(), None)),
    );
    questions.extend(BENIGN_QUESTIONS.iter().map(|q| (q.to_string(), None)));
    questions.truncate(E2E_JOBS - 1);

    let mut ids = vec![job.job_id.clone()];
    let mut polled: BTreeMap<String, Vec<JobStatus>> = BTreeMap::new();
    for (q, hint) in &questions {
        ids.push(
            svc.submit("acceptance", q, *hint)
                .map_err(|e| e.to_string())?,
        );
    }
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let mut open = 0;
        for id in &ids {
            let s = svc
                .get_status("acceptance", id)
                .map_err(|e| e.to_string())?
                .status;
            let seen = polled.entry(id.clone()).or_default();
            if seen.last() != Some(&s) {
                seen.push(s);
            }
            if !s.is_terminal() {
                open += 1;
            }
        }
        if open == 0 {
            break;
        }
        ensure(Instant::now() < deadline, || {
            format!("{open} jobs still running")
        })?;
        std::thread::sleep(Duration::from_millis(10));
    }
    ensure(ids.len() == E2E_JOBS, || format!("{} jobs", ids.len()))?;

    let events = audit.events().map_err(|e| e.to_string())?;
    let mut pipeline_ms = Vec::new();
    let mut ready = 0;
    for id in &ids {
        let job = svc.get_job("acceptance", id).map_err(|e| e.to_string())?;
        let seq = job.status_sequence();
        ensure(is_lifecycle_prefix(&seq), || {
            format!("{id}: transitions {seq:?}")
        })?;
        let observed = &polled[id];
        ensure(
            observed
                .windows(2)
                .all(|w| w[0].rank() < w[1].rank() || w[1] == JobStatus::Error),
            || format!("{id}: polled {observed:?}"),
        )?;
        let trail: Vec<_> = events.iter().filter(|e| &e.job_id == id).collect();
        ensure(trail.len() == seq.len() + 1, || {
            format!(
                "{id}: {} audit events for {} statuses",
                trail.len(),
                seq.len()
            )
        })?;
        for e in &trail {
            e.check_invariants().map_err(|err| format!("{id}: {err}"))?;
        }
        let done = trail
            .iter()
            .find(|e| e.phase == AuditPhase::Completed)
            .ok_or_else(|| format!("{id}: no completion event"))?;
        ensure(done.question_hash.len() == 64, || {
            format!("{id}: question hash")
        })?;
        if job.status == JobStatus::Ready {
            ready += 1;
            ensure(trail.len() >= 6, || {
                format!("{id}: ready with {} events", trail.len())
            })?;
            ensure(
                job.verdict.as_ref().is_some_and(|v| v.is_pass()) && job.result.is_some(),
                || format!("{id}: ready without result"),
            )?;
            ensure(done.sql_hash.is_some() && done.verdict.is_some(), || {
                format!("{id}: incomplete completion event")
            })?;
        }
        pipeline_ms.push(
            done.pipeline_ms
                .ok_or_else(|| format!("{id}: no pipeline time"))?,
        );
    }
    pipeline_ms.sort_by(f64::total_cmp);
    let median = pipeline_ms[pipeline_ms.len() / 2];
    ensure(median < E2E_MEDIAN_PIPELINE_MS, || {
        format!("median pipeline {median:.1} ms")
    })?;
    ensure(
        store.state_hash().map_err(|e| e.to_string())? == before,
        || "store state changed".into(),
    )?;
    Ok(format!(
        "scenario count {want} matches fixture; {E2E_JOBS} jobs ({ready} ready) with prefix lifecycles and complete audit trails; state hash unchanged; median pipeline {median:.1} ms"
    ))
}

fn sync_target(cat: &Catalog) -> Arc<AnalyticsStore> {
    Arc::new(AnalyticsStore::open_in_memory(&cat.schema).unwrap())
}

fn engine(cat: &Arc<Catalog>, records: &[RawRecord], target: Arc<AnalyticsStore>) -> SyncEngine {
    SyncEngine::new(
        Arc::new(MemorySource::new(records.iter().cloned())),
        target,
        Arc::new(Pipeline::sample(cat.clone())),
        Arc::new(MemoryCursorStore::new(SyncCursor::default())),
    )
}

fn sync_replay() -> Verdict {
    let cat = catalog();
    let delta = corrupted_corpus(&cat, SYNC_DELTA, 0x5C_0001).raw;

    let clean = sync_target(&cat);
    let reference = engine(&cat, &delta, clean.clone());
    reference.run_cycle().map_err(|e| e.to_string())?;
    let want = clean.snapshot().map_err(|e| e.to_string())?;
    let want_cursor = reference.cursor().map_err(|e| e.to_string())?;
    ensure(
        clean.count("employees").map_err(|e| e.to_string())? > 0,
        || "reference run loaded nothing".into(),
    )?;

    for fault in FaultPoint::ALL {
        let target = sync_target(&cat);
        let e = engine(&cat, &delta, target.clone());
        ensure(e.run_cycle_with_fault(Some(fault)).is_err(), || {
            format!("{fault:?} did not interrupt")
        })?;
        e.run_cycle()
            .map_err(|err| format!("{fault:?} recovery: {err}"))?;
        ensure(
            target.snapshot().map_err(|e| e.to_string())? == want,
            || format!("{fault:?}: snapshot differs"),
        )?;
        let c = e.cursor().map_err(|e| e.to_string())?;
        ensure(
            c.last_successful_sync == want_cursor.last_successful_sync,
            || format!("{fault:?}: cursor differs"),
        )?;
    }

    let full = corrupted_corpus(&cat, SYNC_FULL, 0x5C_0002).raw;
    let target = sync_target(&cat);
    let e = engine(&cat, &full, target.clone());
    let start = Instant::now();
    let report = e.run_cycle().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let stats = &report.cursor.last_batch_stats;
    ensure(stats.extracted == SYNC_FULL, || {
        format!("extracted {}", stats.extracted)
    })?;
    ensure(stats.upserted + stats.hard_rejected == SYNC_FULL, || {
        format!("{stats:?}")
    })?;
    within(elapsed, SYNC_LIMIT, "full cycle")?;
    Ok(format!(
        "crash at each of {} fault points over {SYNC_DELTA} records recovers to the uninterrupted snapshot; {SYNC_FULL}-record cycle in {elapsed:.2?}",
        FaultPoint::ALL.len()
    ))
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: &[Criterion] = &[
        ("reference-normalizations", reference_normalizations),
        ("cleaning-idempotence-provenance", cleaning_corpus),
        ("retrieval-oracle-equivalence", retrieval),
        ("guard-soundness-fuzz", guard_fuzz),
        ("policy-completeness", policy),
        ("ablation-harness-isolation", ablation),
        ("end-to-end-lifecycle", end_to_end),
        ("sync-idempotent-replay", sync_replay),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match verdict {
            Ok(detail) => println!("PASS {name} ({:.2?}): {detail}", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2?}): {why}", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
