//! Invariants checked over generated inputs.

mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tolmach_core::catalog::{sample_catalog, Catalog};
use tolmach_core::cleaning::{
    estimate_jaccard, exact_jaccard, levenshtein, shingles, MinHasher, Pipeline, RawRecord,
};
use tolmach_core::fixtures::{base_time, demo_employees, seeded_store, DEMO_EMPLOYEES, DEMO_SEED};
use tolmach_core::guard::{parse_sql, render, Guard};
use tolmach_core::retrieval::{EmbeddingProvider, ExamplePair, HashingEmbedder, VectorIndex};
use tolmach_core::service::{
    execute_statement, is_lifecycle_prefix, FailureCategory, JobStatus, QueryJob, SessionPermission,
};
use tolmach_core::store::{AnalyticsStore, DEFAULT_ROW_CAP, DEFAULT_STATEMENT_TIMEOUT};
use tolmach_core::table::Cell;
use tolmach_core::text::Language;

use common::SqlGrammar;

fn catalog() -> &'static Catalog {
    static CAT: OnceLock<Catalog> = OnceLock::new();
    CAT.get_or_init(sample_catalog)
}

fn store() -> &'static AnalyticsStore {
    static STORE: OnceLock<AnalyticsStore> = OnceLock::new();
    STORE.get_or_init(|| seeded_store(catalog()))
}

/// Textbook Wagner-Fischer over chars.
fn dp_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn word() -> impl Strategy<Value = String> {
    "[a-zçğışöüа-я ]{0,12}"
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(a in word(), b in word(), c in word()) {
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab, dp_levenshtein(&a, &b));
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        prop_assert!(ab >= a.chars().count().abs_diff(b.chars().count()));
    }

    #[test]
    fn render_round_trips(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sql = SqlGrammar::new(catalog()).generate(&mut rng);
        let ast = parse_sql(&sql).map_err(|e| TestCaseError::fail(format!("{sql}: {e}")))?;
        let text = render(&ast);
        let again = parse_sql(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(ast.normalized(), again.normalized(), "{} => {}", sql, text);
        prop_assert_eq!(render(&again), text);
    }

    #[test]
    fn pii_never_leaves_the_store(shape in 0usize..8, limit in 1usize..20) {
        let projection = [
            "adines_number",
            "adines_number AS n",
            "e.adines_number AS id",
            "UPPER(adines_number)",
            "TRIM(adines_number) AS t",
            "full_name || adines_number",
            "*",
            "full_name, LOWER(adines_number) AS x",
        ][shape];
        let sql = format!("SELECT {projection} FROM employees e LIMIT {limit}");
        let outcome = Guard::new(catalog()).check(&sql, None);
        if !outcome.verdict.is_pass() {
            return Ok(());
        }
        let perm = SessionPermission::full("p", &catalog().schema);
        let table = execute_statement(&outcome, &perm, store(), DEFAULT_ROW_CAP, DEFAULT_STATEMENT_TIMEOUT)
            .map_err(|e| TestCaseError::fail(format!("{sql}: {e}")))?;
        let secrets: Vec<String> = demo_employees(DEMO_EMPLOYEES, DEMO_SEED)
            .into_iter()
            .filter_map(|r| r.fields.get("adines_number").cloned())
            .collect();
        for row in &table.rows {
            for cell in row {
                let text = match cell {
                    Cell::Text(s) => s.clone(),
                    Cell::Integer(i) => i.to_string(),
                    Cell::Decimal(d) => d.to_string(),
                    Cell::Null => continue,
                };
                prop_assert!(!secrets.iter().any(|s| text.contains(s.as_str())), "{} leaked {}", sql, text);
            }
        }
    }

    #[test]
    fn topk_is_sorted_and_prefix_stable(query in "[a-z ]{3,30}", k in 1usize..12) {
        let index = example_index();
        let q = HashingEmbedder::default().embed(&format!("how many {query}")).unwrap();
        let big = index.retrieve_topk(&q, k + 3).unwrap();
        let small = index.retrieve_topk(&q, k).unwrap();
        prop_assert_eq!(small.len(), k.min(index.len()));
        prop_assert!(big.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        let a: Vec<&str> = small.iter().map(|h| h.pair.example_id.as_str()).collect();
        let b: Vec<&str> = big.iter().take(k).map(|h| h.pair.example_id.as_str()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn minhash_tracks_exact_jaccard(a in "[a-z]{6,40}", b in "[a-z]{6,40}", cut in 0usize..6) {
        let b = format!("{}{}", &a[..a.len().saturating_sub(cut)], b);
        let (sa, sb) = (shingles(&a, 3), shingles(&b, 3));
        let h = MinHasher::new(256, 7);
        let est = estimate_jaccard(&h.signature(&sa), &h.signature(&sb));
        let exact = exact_jaccard(&sa, &sb);
        prop_assert!((est - exact).abs() <= 0.25, "est {} exact {}", est, exact);
        if sa == sb {
            prop_assert_eq!(est, 1.0);
        }
    }

    #[test]
    fn cleaning_is_idempotent_with_consistent_provenance(fields in proptest::collection::btree_map(field_name(), field_value(), 1..6)) {
        let pipeline = pipeline();
        let raw = RawRecord { record_id: "r".into(), modified_at: base_time(), fields: fields.clone() };
        let once = pipeline.clean_record(&raw);
        let twice = pipeline.clean_record(&once.to_raw());
        prop_assert_eq!(&once.fields, &twice.fields);
        prop_assert!(twice.provenance.is_empty(), "{:?}", twice.provenance);

        for (field, chain) in &once.provenance {
            prop_assert!(!chain.is_empty());
            prop_assert_eq!(Some(&chain[0].before), fields.get(field));
            prop_assert_eq!(Some(&chain[chain.len() - 1].after), once.fields.get(field));
            prop_assert!(chain.windows(2).all(|w| w[0].after == w[1].before));
            prop_assert!(chain.iter().all(|t| t.before != t.after));
        }
        for (field, value) in &once.fields {
            if !once.provenance.contains_key(field) {
                prop_assert_eq!(Some(value), fields.get(field));
            }
        }
    }

    #[test]
    fn job_transitions_follow_the_lifecycle(steps in proptest::collection::vec(0usize..6, 0..10)) {
        let all = [
            JobStatus::Loading,
            JobStatus::GeneratingQuery,
            JobStatus::ExecutingQuery,
            JobStatus::Translating,
            JobStatus::Ready,
            JobStatus::Error,
        ];
        let mut job = QueryJob::new("j".into(), "q".into(), None);
        let mut seen = vec![JobStatus::Loading];
        for s in steps {
            let next = all[s];
            let cur = *seen.last().unwrap();
            let idx = |s: JobStatus| all.iter().position(|x| *x == s).unwrap();
            let legal = !matches!(cur, JobStatus::Ready | JobStatus::Error) && (next == JobStatus::Error || idx(next) == idx(cur) + 1);
            prop_assert_eq!(cur.can_advance_to(next), legal, "{} -> {}", cur, next);
            if legal {
                if next == JobStatus::Error {
                    job.fail(FailureCategory::Internal, "x");
                } else {
                    job.advance(next);
                }
                seen.push(next);
            }
        }
        prop_assert_eq!(job.status_sequence(), seen.clone());
        prop_assert!(is_lifecycle_prefix(&seen));
    }

    #[test]
    fn lifecycle_prefix_matches_oracle(seq in proptest::collection::vec(0usize..6, 0..7)) {
        let all = [
            JobStatus::Loading,
            JobStatus::GeneratingQuery,
            JobStatus::ExecutingQuery,
            JobStatus::Translating,
            JobStatus::Ready,
            JobStatus::Error,
        ];
        let seq: Vec<JobStatus> = seq.into_iter().map(|i| all[i]).collect();
        let body_len = if seq.last() == Some(&JobStatus::Error) { seq.len() - 1 } else { seq.len() };
        let want = seq[..body_len].iter().enumerate().all(|(i, s)| *s == all[i]);
        prop_assert_eq!(is_lifecycle_prefix(&seq), want, "{:?}", seq);
    }
}

fn field_name() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("actual_working_city".to_string()),
        Just("country".to_string()),
        Just("role_eng".to_string()),
        Just("department".to_string()),
        Just("c_project_eng".to_string()),
        Just("egitimOkulAdi".to_string()),
        Just("full_name".to_string()),
        Just("employee_status".to_string()),
    ]
}

fn field_value() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("Moscow".to_string()),
        Just("moskova".to_string()),
        Just("  ANKARA ".to_string()),
        Just("Civil Engneer".to_string()),
        Just("İnşaat Mühendisi".to_string()),
        Just("Москва".to_string()),
        Just("GPP".to_string()),
        Just("true".to_string()),
        "[A-Za-z ]{0,14}",
    ]
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| Pipeline::sample(std::sync::Arc::new(sample_catalog())))
}

fn example_index() -> &'static VectorIndex {
    static INDEX: OnceLock<VectorIndex> = OnceLock::new();
    INDEX.get_or_init(|| {
        let cat = catalog();
        let guard = Guard::new(cat);
        let embedder = HashingEmbedder::default();
        let mut index = VectorIndex::new(embedder.dimension());
        let tables: BTreeSet<&str> = cat.schema.tables.iter().map(|t| t.name.as_str()).collect();
        let mut n = 0;
        for t in &tables {
            for city in ["Moscow", "Ankara", "Kazan", "Istanbul"] {
                let q = format!("how many rows in {t} for {city}");
                let sql = format!("SELECT COUNT(*) FROM {t}");
                index
                    .add(
                        ExamplePair::new(format!("ex{n:03}"), q, sql, Language::En, &embedder)
                            .unwrap(),
                        &guard,
                    )
                    .unwrap();
                n += 1;
            }
        }
        index
    })
}
