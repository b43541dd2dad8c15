//! Service configuration: a TOML file plus `TOLMACH_<SECTION>_<KEY>`
//! environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::audit::{AuditLog, FileAuditSink};
use super::exec::SessionPermission;
use super::{QueryService, QuerySettings};
use crate::catalog::{load_catalog, sample_catalog, Catalog};
use crate::cleaning::{
    DictionaryTranslator, HttpTranslator, Pipeline, PipelineConfig, TranslationProvider,
};
use crate::guard::Guard;
use crate::nl2sql::{
    ExampleEchoProvider, HttpChatProvider, LlmProvider, PromptTemplate, ProviderConfig,
};
use crate::retrieval::{
    sample_index, Corpus, EmbeddingProvider, HashingEmbedder, HttpEmbedder, VectorIndex,
    DEFAULT_DIMENSION,
};
use crate::store::AnalyticsStore;

pub const ENV_PREFIX: &str = "TOLMACH_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    /// SQLite file; in-memory when unset.
    pub path: Option<PathBuf>,
    /// Load the demo tables into an empty store.
    pub demo_data: bool,
}

impl Default for StoreSection {
    fn default() -> Self {
        Self {
            path: None,
            demo_data: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Offline provider that replays the most similar example.
    Echo,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub temperature: f32,
    pub max_output_tokens: usize,
    pub min_similarity: f64,
}

impl Default for ProviderSection {
    fn default() -> Self {
        let p = ProviderConfig::default();
        Self {
            kind: ProviderKind::Echo,
            endpoint: None,
            model: p.model,
            api_key_env: None,
            timeout_secs: crate::nl2sql::DEFAULT_PROVIDER_TIMEOUT.as_secs_f64(),
            temperature: p.temperature,
            max_output_tokens: p.max_output_tokens,
            min_similarity: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub kind: EmbeddingKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub dimension: usize,
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Hashing,
            endpoint: None,
            model: "text-embedding-ada-002".into(),
            dimension: DEFAULT_DIMENSION,
            api_key_env: None,
            timeout_secs: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationKind {
    Dictionary,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationSection {
    pub kind: TranslationKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
}

impl Default for TranslationSection {
    fn default() -> Self {
        Self {
            kind: TranslationKind::Dictionary,
            endpoint: None,
            timeout_secs: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    /// JSON-lines export of the source system.
    pub source: Option<PathBuf>,
    pub cursor: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub interval_hours: f64,
    /// Run the scheduler inside `serve`.
    pub enabled: bool,
}

impl Default for SyncSection {
    fn default() -> Self {
        Self {
            source: None,
            cursor: None,
            report: None,
            interval_hours: crate::sync::DEFAULT_CYCLE_INTERVAL.as_secs_f64() / 3600.0,
            enabled: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub server: ServerSection,
    pub catalog: PathSection,
    pub pipeline: PathSection,
    pub template: PathSection,
    pub store: StoreSection,
    pub corpus: PathSection,
    pub audit: PathSection,
    pub provider: ProviderSection,
    pub embedding: EmbeddingSection,
    pub translation: TranslationSection,
    pub query: QuerySettings,
    pub sync: SyncSection,
    pub sessions: Vec<SessionPermission>,
}

fn env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn secs(v: f64, what: &str) -> Result<Duration, ConfigError> {
    Duration::try_from_secs_f64(v).map_err(|_| {
        ConfigError::Invalid(format!("{what} must be a non-negative number of seconds"))
    })
}

impl ServiceConfig {
    /// Parses `text` and applies overrides from `env`. A variable
    /// `TOLMACH_QUERY_ROW_CAP=500` sets `[query] row_cap = 500`; values are
    /// read as TOML literals, falling back to plain strings.
    pub fn parse(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (name, raw) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let rest = rest.to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else {
                continue;
            };
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = entry else {
                return Err(ConfigError::Invalid(format!(
                    "{name}: `{section}` is not a section"
                )));
            };
            t.insert(key.to_string(), env_value(&raw));
        }
        let cfg: ServiceConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::parse(&text, std::env::vars())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.query.max_attempts == 0 {
            return Err(ConfigError::Invalid(
                "query.max_attempts must be at least 1".into(),
            ));
        }
        if self.query.row_cap == 0 {
            return Err(ConfigError::Invalid(
                "query.row_cap must be at least 1".into(),
            ));
        }
        if self.provider.kind == ProviderKind::Http && self.provider.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "provider.kind = \"http\" needs provider.endpoint".into(),
            ));
        }
        if self.embedding.kind == EmbeddingKind::Http && self.embedding.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "embedding.kind = \"http\" needs embedding.endpoint".into(),
            ));
        }
        if self.translation.kind == TranslationKind::Http && self.translation.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "translation.kind = \"http\" needs translation.endpoint".into(),
            ));
        }
        secs(self.provider.timeout_secs, "provider.timeout_secs")?;
        secs(self.sync.interval_hours * 3600.0, "sync.interval_hours")?;
        Ok(())
    }

    pub fn sync_interval(&self) -> Duration {
        Duration::from_secs_f64(self.sync.interval_hours * 3600.0)
    }

    pub fn load_catalog(&self) -> Result<Catalog, ConfigError> {
        match &self.catalog.path {
            Some(p) => {
                load_catalog(p).map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))
            }
            None => Ok(sample_catalog()),
        }
    }

    pub fn pipeline(&self, catalog: Arc<Catalog>) -> Result<Pipeline, ConfigError> {
        let config = match &self.pipeline.path {
            Some(p) => PipelineConfig::load(p)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?,
            None => PipelineConfig::sample(),
        };
        let table =
            Pipeline::translator_for(&config).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Pipeline::new(catalog, config, Arc::new(table))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn open_store(&self, catalog: &Catalog) -> Result<AnalyticsStore, ConfigError> {
        let store = match &self.store.path {
            Some(p) => AnalyticsStore::open(p, &catalog.schema),
            None => AnalyticsStore::open_in_memory(&catalog.schema),
        }
        .map_err(|e| ConfigError::Invalid(format!("store: {e}")))?;
        let empty = store
            .count(store.record_table())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?
            == 0;
        if self.store.demo_data && empty {
            crate::fixtures::seed_store(&store)
                .map_err(|e| ConfigError::Invalid(format!("demo data: {e}")))?;
        }
        Ok(store)
    }

    fn api_key(var: &Option<String>) -> Option<String> {
        var.as_ref().and_then(|v| std::env::var(v).ok())
    }

    pub fn embedder(&self) -> Arc<dyn EmbeddingProvider> {
        let e = &self.embedding;
        match (e.kind, &e.endpoint) {
            (EmbeddingKind::Http, Some(url)) => {
                let mut h = HttpEmbedder::new(
                    url,
                    &e.model,
                    e.dimension,
                    Duration::from_secs_f64(e.timeout_secs),
                );
                if let Some(k) = Self::api_key(&e.api_key_env) {
                    h = h.with_api_key(k);
                }
                Arc::new(h)
            }
            _ => Arc::new(HashingEmbedder {
                dimension: e.dimension,
            }),
        }
    }

    pub fn corpus(
        &self,
        catalog: &Catalog,
        embedder: &dyn EmbeddingProvider,
    ) -> Result<Corpus, ConfigError> {
        match &self.corpus.path {
            Some(p) if p.exists() => {
                let index = VectorIndex::load(p)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?;
                Ok(Corpus::new(index))
            }
            _ => Ok(Corpus::new(sample_index(embedder, &Guard::new(catalog)))),
        }
    }

    pub fn llm(&self) -> Arc<dyn LlmProvider> {
        let p = &self.provider;
        match (p.kind, &p.endpoint) {
            (ProviderKind::Http, Some(url)) => {
                let config = ProviderConfig {
                    model: p.model.clone(),
                    temperature: p.temperature,
                    max_output_tokens: p.max_output_tokens,
                };
                let mut h =
                    HttpChatProvider::new(url, config, Duration::from_secs_f64(p.timeout_secs));
                if let Some(k) = Self::api_key(&p.api_key_env) {
                    h = h.with_api_key(k);
                }
                Arc::new(h)
            }
            _ => Arc::new(ExampleEchoProvider::new(p.min_similarity)),
        }
    }

    pub fn translator(&self) -> Arc<dyn TranslationProvider> {
        match (self.translation.kind, &self.translation.endpoint) {
            (TranslationKind::Http, Some(url)) => Arc::new(HttpTranslator::new(
                url,
                Duration::from_secs_f64(self.translation.timeout_secs),
            )),
            _ => Arc::new(DictionaryTranslator::sample()),
        }
    }

    pub fn audit_log(&self) -> Result<AuditLog, ConfigError> {
        match &self.audit.path {
            Some(p) => {
                let sink = FileAuditSink::open(p)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", p.display())))?;
                Ok(AuditLog::new(Box::new(sink)))
            }
            None => Ok(AuditLog::memory()),
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        match &self.template.path {
            Some(p) => PromptTemplate::load(p).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(PromptTemplate::sample()),
        }
    }

    /// Builds the whole service and registers the configured sessions.
    pub fn build_service(
        &self,
        catalog: Arc<Catalog>,
        store: Arc<AnalyticsStore>,
    ) -> Result<Arc<QueryService>, ConfigError> {
        let embedder = self.embedder();
        let corpus = Arc::new(self.corpus(&catalog, embedder.as_ref())?);
        let svc = QueryService::builder(catalog, store, self.llm())
            .embedder(embedder)
            .corpus(corpus)
            .translator(self.translator())
            .template(self.template()?)
            .audit(Arc::new(self.audit_log()?))
            .settings(self.query.clone())
            .build();
        for s in &self.sessions {
            svc.register_session(s.clone())
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(svc)
    }
}
