//! Few-shot example corpus: validated question/SQL pairs stored as unit
//! vectors, searched by cosine similarity.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guard::{Guard, ValidationVerdict};
use crate::text::{collapse_whitespace, fnv1a64, fold_case, Language};

pub const DEFAULT_DIMENSION: usize = 1536;
pub const DEFAULT_K: usize = 5;
const NORM_TOLERANCE: f64 = 1e-6;
const CORPUS_FORMAT: &str = "tolmach-corpus";

/// Seed question/SQL pairs, one JSON object per line, without vectors.
pub const SAMPLE_EXAMPLES: &str = include_str!("../assets/examples.jsonl");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    Empty,
    #[error("embedding service unavailable: {0}")]
    Unavailable(String),
    #[error("embedding service returned an invalid response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, vector has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding for `{id}` is not unit length (norm {norm})")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("example `{id}` failed the guard: {summary}")]
    GuardRejected { id: String, summary: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corpus: {0}")]
    Index(#[from] IndexError),
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
}

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Deterministic feature-hashing embedder over character 3-grams of the
/// case-folded text.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let norm = collapse_whitespace(&fold_case(text));
        if norm.is_empty() {
            return Err(EmbedError::Empty);
        }
        let chars: Vec<char> = format!(" {norm} ").chars().collect();
        let mut v = vec![0f64; self.dimension];
        for gram in chars.windows(3) {
            let s: String = gram.iter().collect();
            v[(fnv1a64(s.as_bytes()) % self.dimension as u64) as usize] += 1.0;
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| (x / len) as f32).collect())
    }
}

/// [`HashingEmbedder`] at the default dimension.
pub fn embed_fallback(text: &str) -> Result<Vec<f32>, EmbedError> {
    HashingEmbedder::default().embed(text)
}

/// Adapter for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            dimension,
            agent,
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::Empty);
        }
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(serde_json::json!({ "model": self.model, "input": text }))
            .map_err(|e| EmbedError::Unavailable(e.to_string()))?;
        let parsed: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        let v = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbedError::BadResponse("no embedding".into()))?
            .embedding;
        if v.len() != self.dimension {
            return Err(EmbedError::BadResponse(format!(
                "expected {} values, got {}",
                self.dimension,
                v.len()
            )));
        }
        Ok(normalize(&v))
    }
}

fn normalize(v: &[f32]) -> Vec<f32> {
    let len = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if len == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| (f64::from(*x) / len) as f32).collect()
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (l2(a), l2(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub example_id: String,
    /// English-normalized question.
    pub question: String,
    pub sql: String,
    pub language: Language,
    pub embedding: Vec<f32>,
    pub validated_at: DateTime<Utc>,
}

impl ExamplePair {
    /// Embeds `question` with `embedder`.
    pub fn new(
        example_id: impl Into<String>,
        question: impl Into<String>,
        sql: impl Into<String>,
        language: Language,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Self, EmbedError> {
        let question = question.into();
        let embedding = embedder.embed(&question)?;
        Ok(Self {
            example_id: example_id.into(),
            question,
            sql: sql.into(),
            language,
            embedding,
            validated_at: Utc::now(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exact,
    /// Inverted-file search: spherical k-means lists, probing the `nprobe`
    /// lists whose centroids are closest to the query.
    Approximate { nprobe: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub pair: &'a ExamplePair,
    pub similarity: f64,
}

#[derive(Debug, Clone)]
struct Ivf {
    centroids: Vec<Vec<f32>>,
    lists: Vec<Vec<usize>>,
}

/// Example vectors in `example_id` order.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<ExamplePair>,
    mode: SearchMode,
    ivf: OnceLock<Ivf>,
}

impl VectorIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: Vec::new(),
            mode: SearchMode::Exact,
            ivf: OnceLock::new(),
        }
    }

    pub fn with_mode(mut self, mode: SearchMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn set_mode(&mut self, mode: SearchMode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> SearchMode {
        self.mode
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ExamplePair] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&ExamplePair> {
        self.position(id).ok().map(|i| &self.entries[i])
    }

    fn position(&self, id: &str) -> Result<usize, usize> {
        self.entries
            .binary_search_by(|e| e.example_id.as_str().cmp(id))
    }

    fn check_vector(&self, id: &str, v: &[f32]) -> Result<(), IndexError> {
        if v.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: v.len(),
            });
        }
        let norm = l2(v);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(IndexError::NotUnitNorm {
                id: id.to_string(),
                norm,
            });
        }
        Ok(())
    }

    /// Adds or replaces an example after checking its vector and running its
    /// SQL through the guard.
    pub fn add(&mut self, pair: ExamplePair, guard: &Guard<'_>) -> Result<(), IndexError> {
        let verdict = guard.check(&pair.sql, None).verdict;
        if !verdict.is_pass() {
            return Err(IndexError::GuardRejected {
                id: pair.example_id,
                summary: verdict.summary(),
            });
        }
        self.insert_unchecked_sql(pair)
    }

    fn insert_unchecked_sql(&mut self, pair: ExamplePair) -> Result<(), IndexError> {
        self.check_vector(&pair.example_id, &pair.embedding)?;
        match self.position(&pair.example_id) {
            Ok(i) => self.entries[i] = pair,
            Err(i) => self.entries.insert(i, pair),
        }
        self.ivf = OnceLock::new();
        Ok(())
    }

    pub fn remove(&mut self, id: &str) -> Option<ExamplePair> {
        let i = self.position(id).ok()?;
        self.ivf = OnceLock::new();
        Some(self.entries.remove(i))
    }

    /// The `k` most similar examples, descending by similarity, ties by
    /// `example_id`. An empty index yields an empty list.
    pub fn retrieve_topk(&self, query: &[f32], k: usize) -> Result<Vec<Hit<'_>>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let candidates: Vec<usize> = match self.mode {
            SearchMode::Exact => (0..self.entries.len()).collect(),
            SearchMode::Approximate { nprobe } => self.probe(query, nprobe.max(1)),
        };
        let mut hits: Vec<(usize, f64)> = candidates
            .into_iter()
            .map(|i| (i, cosine(query, &self.entries[i].embedding)))
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(i, similarity)| Hit {
                pair: &self.entries[i],
                similarity,
            })
            .collect())
    }

    fn probe(&self, query: &[f32], nprobe: usize) -> Vec<usize> {
        let ivf = self.ivf.get_or_init(|| build_ivf(&self.entries));
        let mut order: Vec<(usize, f64)> = ivf
            .centroids
            .iter()
            .enumerate()
            .map(|(c, v)| (c, dot(query, v)))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut out: Vec<usize> = order
            .iter()
            .take(nprobe)
            .flat_map(|(c, _)| ivf.lists[*c].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Re-runs the guard over every stored example; returns the failures.
    pub fn verify(&self, guard: &Guard<'_>) -> Vec<(String, ValidationVerdict)> {
        self.entries
            .iter()
            .filter_map(|e| {
                let v = guard.check(&e.sql, None).verdict;
                (!v.is_pass()).then(|| (e.example_id.clone(), v))
            })
            .collect()
    }

    /// Writes the corpus as JSON lines: a header, then one example per line
    /// with its vector as base64 little-endian `f32`. The file is replaced
    /// atomically.
    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut out = std::io::BufWriter::new(File::create(&tmp)?);
        let header = CorpusHeader {
            format: CORPUS_FORMAT.into(),
            dimension: self.dimension,
            count: self.entries.len(),
        };
        writeln!(
            out,
            "{}",
            serde_json::to_string(&header).expect("header serializes")
        )?;
        for e in &self.entries {
            let bytes: Vec<u8> = e.embedding.iter().flat_map(|x| x.to_le_bytes()).collect();
            let line = CorpusLine {
                example_id: e.example_id.clone(),
                question: e.question.clone(),
                sql: e.sql.clone(),
                language: e.language,
                validated_at: e.validated_at,
                vector: B64.encode(bytes),
            };
            writeln!(
                out,
                "{}",
                serde_json::to_string(&line).expect("line serializes")
            )?;
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a corpus written by [`VectorIndex::persist`]. Any malformed or
    /// missing line fails the whole load.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, message: String| CorpusError::Parse { line, message };
        let header: CorpusHeader = match lines.next() {
            Some((_, text)) => {
                serde_json::from_str(&text?).map_err(|e| parse_err(1, e.to_string()))?
            }
            None => return Err(parse_err(1, "missing header".into())),
        };
        if header.format != CORPUS_FORMAT {
            return Err(parse_err(1, format!("unknown format `{}`", header.format)));
        }
        let mut index = VectorIndex::new(header.dimension);
        for (i, text) in lines {
            let text = text?;
            if text.trim().is_empty() {
                continue;
            }
            let line: CorpusLine =
                serde_json::from_str(&text).map_err(|e| parse_err(i + 1, e.to_string()))?;
            let bytes = B64
                .decode(&line.vector)
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            if bytes.len() % 4 != 0 {
                return Err(parse_err(
                    i + 1,
                    "vector length is not a multiple of 4 bytes".into(),
                ));
            }
            let embedding = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let pair = ExamplePair {
                example_id: line.example_id,
                question: line.question,
                sql: line.sql,
                language: line.language,
                embedding,
                validated_at: line.validated_at,
            };
            index
                .insert_unchecked_sql(pair)
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
        }
        if index.len() != header.count {
            return Err(parse_err(
                header.count + 1,
                format!("expected {} examples, found {}", header.count, index.len()),
            ));
        }
        Ok(index)
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    dimension: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    example_id: String,
    question: String,
    sql: String,
    language: Language,
    validated_at: DateTime<Utc>,
    vector: String,
}

fn build_ivf(entries: &[ExamplePair]) -> Ivf {
    let n = entries.len();
    if n == 0 {
        return Ivf {
            centroids: Vec::new(),
            lists: Vec::new(),
        };
    }
    let nlist = ((n as f64).sqrt().round() as usize).clamp(1, n);
    let mut centroids: Vec<Vec<f32>> = (0..nlist)
        .map(|c| entries[c * n / nlist].embedding.clone())
        .collect();
    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        for (i, e) in entries.iter().enumerate() {
            assign[i] = nearest(&centroids, &e.embedding);
        }
        let dim = entries[0].embedding.len();
        let mut sums = vec![vec![0f64; dim]; nlist];
        for (i, e) in entries.iter().enumerate() {
            for (s, x) in sums[assign[i]].iter_mut().zip(&e.embedding) {
                *s += f64::from(*x);
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            let len = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len > 0.0 {
                centroids[c] = sum.into_iter().map(|x| (x / len) as f32).collect();
            }
        }
    }
    let mut lists = vec![Vec::new(); nlist];
    for (i, e) in entries.iter().enumerate() {
        lists[nearest(&centroids, &e.embedding)].push(i);
    }
    Ivf { centroids, lists }
}

fn nearest(centroids: &[Vec<f32>], v: &[f32]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(v, centroid);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// Shared corpus: lock-free snapshots for readers, one writer at a time.
/// A reader holds an `Arc` to the index it started with, so it never sees a
/// half-applied write.
pub struct Corpus {
    current: RwLock<Arc<VectorIndex>>,
    writer: Mutex<()>,
}

impl Corpus {
    pub fn new(index: VectorIndex) -> Self {
        Self {
            current: RwLock::new(Arc::new(index)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<VectorIndex> {
        self.current.read().clone()
    }

    pub fn add(&self, pair: ExamplePair, guard: &Guard<'_>) -> Result<(), IndexError> {
        let _w = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        next.add(pair, guard)?;
        *self.current.write() = Arc::new(next);
        Ok(())
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let _w = self.writer.lock();
        self.snapshot().persist(path)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct SeedLine {
    example_id: String,
    question: String,
    sql: String,
    #[serde(default = "default_language")]
    language: Language,
}

fn default_language() -> Language {
    Language::En
}

/// Embeds and guard-checks seed lines (`example_id`, `question`, `sql`,
/// optional `language`) into a new index.
pub fn index_from_seed(
    text: &str,
    embedder: &dyn EmbeddingProvider,
    guard: &Guard<'_>,
) -> Result<VectorIndex, CorpusError> {
    let mut index = VectorIndex::new(embedder.dimension());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let seed: SeedLine = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let pair = ExamplePair::new(
            seed.example_id,
            seed.question,
            seed.sql,
            seed.language,
            embedder,
        )
        .map_err(IndexError::from)?;
        index.add(pair, guard)?;
    }
    Ok(index)
}

/// The built-in seed corpus over the sample catalog.
pub fn sample_index(embedder: &dyn EmbeddingProvider, guard: &Guard<'_>) -> VectorIndex {
    index_from_seed(SAMPLE_EXAMPLES, embedder, guard).expect("shipped examples are valid")
}

/// Top-k by plain cosine over every entry; the reference the index is
/// tested against.
pub fn brute_force_topk(entries: &[ExamplePair], query: &[f32], k: usize) -> Vec<(String, f64)> {
    let mut all: BTreeMap<String, f64> = BTreeMap::new();
    for e in entries {
        all.insert(e.example_id.clone(), cosine(query, &e.embedding));
    }
    let mut v: Vec<(String, f64)> = all.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}
