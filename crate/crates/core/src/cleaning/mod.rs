//! Record cleaning: translation normalization, spelling correction, entity
//! canonicalization and rule validation, applied in that order.
//!
//! Each stage works field by field and records what it changed. A failing
//! stage flags the field and leaves the value as it was; only configuration
//! problems stop the pipeline.

mod dedupe;
mod distance;
mod entity;
mod spelling;
mod translate;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    Catalog, EntityDomain, RuleKind, Severity, STAGE_ENTITY, STAGE_SPELLING, STAGE_TRANSLATION,
};
use crate::text::{repair_mojibake, title_case, Language};

pub use dedupe::{
    cluster_near_duplicates, estimate_jaccard, exact_jaccard, shingles, DedupeError,
    DuplicateCluster, LshParams, MinHasher,
};
pub use distance::{levenshtein, phonetic_code};
pub use entity::{canonicalize_entity, default_max_distance, EntityMatch};
pub use spelling::{
    correct_spelling, token_budget, Correction, DictionaryError, SpellingDictionary,
    DEFAULT_MAX_EDIT_DISTANCE, SAMPLE_DICTIONARY,
};
pub use translate::{
    is_english, normalize_translation, DictionaryTranslator, HttpTranslator, TranslationError,
    TranslationProvider, SAMPLE_TRANSLATIONS,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub record_id: String,
    pub modified_at: DateTime<Utc>,
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Translation,
    Spelling,
    Entity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transform {
    pub stage: Stage,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleViolation {
    pub rule_id: String,
    pub fields: Vec<String>,
    pub message: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub record_id: String,
    pub modified_at: DateTime<Utc>,
    pub fields: BTreeMap<String, String>,
    /// Changed fields only, transforms in application order.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, Vec<Transform>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<RuleViolation>,
}

impl CleanRecord {
    /// True when a reject-severity rule fired; such records are not loaded.
    pub fn is_rejected(&self) -> bool {
        self.flags.iter().any(|f| f.severity == Severity::Reject)
    }

    pub fn provenance_len(&self) -> usize {
        self.provenance.values().map(Vec::len).sum()
    }

    pub fn to_raw(&self) -> RawRecord {
        RawRecord {
            record_id: self.record_id.clone(),
            modified_at: self.modified_at,
            fields: self.fields.clone(),
        }
    }
}

/// What the pipeline does with one field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRule {
    #[serde(default)]
    pub translate: bool,
    #[serde(default)]
    pub spell: bool,
    #[serde(default)]
    pub domain: Option<EntityDomain>,
    /// Title-case the value when no canonical entity matches.
    #[serde(default)]
    pub title_case: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    pub translation: bool,
    pub spelling: bool,
    pub entity: bool,
    pub validation: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            translation: true,
            spelling: true,
            entity: true,
            validation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupeConfig {
    pub identity_fields: Vec<String>,
    pub shingle_size: usize,
    pub num_hashes: usize,
    pub bands: usize,
    pub threshold: f64,
}

impl Default for DedupeConfig {
    fn default() -> Self {
        let p = LshParams::default();
        Self {
            identity_fields: [
                "full_name",
                "birth_date",
                "country",
                "actual_working_city",
                "contract_company",
            ]
            .map(String::from)
            .to_vec(),
            shingle_size: p.shingle_size,
            num_hashes: p.num_hashes,
            bands: p.bands,
            threshold: p.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default = "default_edit_distance")]
    pub max_edit_distance: usize,
    /// Fixed fuzzy-match limit for entities; by default it depends on length.
    #[serde(default)]
    pub entity_max_distance: Option<usize>,
    #[serde(default)]
    pub source_language_hint: Option<Language>,
    #[serde(default)]
    pub dictionary_path: Option<PathBuf>,
    #[serde(default)]
    pub translations_path: Option<PathBuf>,
    pub fields: BTreeMap<String, FieldRule>,
    #[serde(default)]
    pub dedupe: DedupeConfig,
}

fn default_edit_distance() -> usize {
    DEFAULT_MAX_EDIT_DISTANCE
}

pub const SAMPLE_PIPELINE_CONFIG: &str = include_str!("../../assets/pipeline.toml");

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn sample() -> Self {
        Self::from_toml(SAMPLE_PIPELINE_CONFIG).expect("shipped pipeline config parses")
    }

    pub fn lsh_params(&self) -> LshParams {
        LshParams {
            shingle_size: self.dedupe.shingle_size,
            num_hashes: self.dedupe.num_hashes,
            bands: self.dedupe.bands,
            threshold: self.dedupe.threshold,
            ..LshParams::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Translation(#[from] TranslationError),
    #[error(transparent)]
    Dedupe(#[from] DedupeError),
    #[error("record file line {line}: {message}")]
    Records { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Loaded stage resources. Immutable and shareable across threads.
#[derive(Clone)]
pub struct Pipeline {
    catalog: Arc<Catalog>,
    config: PipelineConfig,
    dict: SpellingDictionary,
    translator: Arc<dyn TranslationProvider>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("dictionary_terms", &self.dict.len())
            .finish()
    }
}

impl Pipeline {
    /// Builds the pipeline, loading the dictionary from the configured path
    /// or the built-in one. Field rules must name catalog columns.
    pub fn new(
        catalog: Arc<Catalog>,
        config: PipelineConfig,
        translator: Arc<dyn TranslationProvider>,
    ) -> Result<Self, PipelineError> {
        for name in config.fields.keys() {
            if !catalog.schema.has_column_anywhere(name) {
                return Err(PipelineError::Config(format!(
                    "field rule `{name}` does not name a catalog column"
                )));
            }
        }
        config.lsh_params().validate()?;
        let mut dict = match &config.dictionary_path {
            Some(path) => SpellingDictionary::load(path, config.max_edit_distance)?,
            None => SpellingDictionary::parse(SAMPLE_DICTIONARY, config.max_edit_distance)?,
        };
        dict.add_entity_tokens(&catalog.entities);
        Ok(Self {
            catalog,
            config,
            dict,
            translator,
        })
    }

    /// Pipeline over the sample catalog with the built-in translation table.
    pub fn sample(catalog: Arc<Catalog>) -> Self {
        Self::new(
            catalog,
            PipelineConfig::sample(),
            Arc::new(DictionaryTranslator::sample()),
        )
        .expect("sample pipeline builds")
    }

    /// Translator named by the config: the configured table file or the
    /// built-in one.
    pub fn translator_for(config: &PipelineConfig) -> Result<DictionaryTranslator, PipelineError> {
        match &config.translations_path {
            Some(path) => Ok(DictionaryTranslator::parse(&std::fs::read_to_string(
                path,
            )?)?),
            None => Ok(DictionaryTranslator::sample()),
        }
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn dictionary(&self) -> &SpellingDictionary {
        &self.dict
    }

    fn rule_for(&self, field: &str) -> Option<&FieldRule> {
        self.config.fields.get(field).or_else(|| {
            self.config
                .fields
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(field))
                .map(|(_, v)| v)
        })
    }

    fn stage_flag(&self, rule_id: &str, field: &str, message: String) -> RuleViolation {
        let severity = self
            .catalog
            .rules
            .get(rule_id)
            .map_or(Severity::FlagForReview, |r| r.severity);
        RuleViolation {
            rule_id: rule_id.to_string(),
            fields: vec![field.to_string()],
            message,
            severity,
        }
    }

    /// Splits run-together compounds the dictionary knows (`highschool` →
    /// `high school`).
    fn split_compounds(&self, value: &str) -> String {
        value
            .split(' ')
            .map(|w| {
                self.dict
                    .split_compound(w)
                    .map_or_else(|| w.to_string(), str::to_string)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn clean_field(
        &self,
        name: &str,
        value: &str,
        flags: &mut Vec<RuleViolation>,
    ) -> (String, Vec<Transform>) {
        let mut current = value.to_string();
        let mut chain = Vec::new();
        let Some(rule) = self.rule_for(name) else {
            return (current, chain);
        };
        if value.trim().is_empty() {
            return (current, chain);
        }
        let mut apply = |stage: Stage, next: String, current: &mut String| {
            if next != *current {
                chain.push(Transform {
                    stage,
                    before: current.clone(),
                    after: next.clone(),
                });
                *current = next;
            }
        };
        let stages = &self.config.stages;

        if stages.translation && rule.translate {
            let repaired = repair_mojibake(&current);
            match normalize_translation(
                &repaired,
                self.config.source_language_hint,
                self.translator.as_ref(),
                &self.dict,
            ) {
                Ok(t) => apply(Stage::Translation, t, &mut current),
                Err(e) => flags.push(self.stage_flag(
                    STAGE_TRANSLATION,
                    name,
                    format!("{e}; raw value kept"),
                )),
            }
        }

        if stages.spelling && rule.spell {
            let c = correct_spelling(&current, &self.dict);
            if !c.unknown.is_empty() {
                flags.push(self.stage_flag(
                    STAGE_SPELLING,
                    name,
                    format!("no dictionary candidate for {}", c.unknown.join(", ")),
                ));
            }
            apply(Stage::Spelling, c.text, &mut current);
        }

        if stages.entity {
            if let Some(domain) = rule.domain {
                let max = self
                    .config
                    .entity_max_distance
                    .unwrap_or_else(|| default_max_distance(&current));
                let m = canonicalize_entity(&current, self.catalog.entities.table(domain), max);
                let next = if m.matched {
                    m.canonical
                } else {
                    flags.push(self.stage_flag(
                        STAGE_ENTITY,
                        name,
                        format!("`{current}` is not a known {domain}"),
                    ));
                    if rule.title_case {
                        title_case(&self.split_compounds(&current))
                    } else {
                        current.clone()
                    }
                };
                apply(Stage::Entity, next, &mut current);
            } else if rule.title_case {
                let next = title_case(&self.split_compounds(&current));
                apply(Stage::Entity, next, &mut current);
            }
        }
        (current, chain)
    }

    /// Runs every stage over one record. Never fails on data problems.
    pub fn clean_record(&self, raw: &RawRecord) -> CleanRecord {
        let mut fields = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        let mut flags = Vec::new();
        for (name, value) in &raw.fields {
            let (cleaned, chain) = self.clean_field(name, value, &mut flags);
            if !chain.is_empty() {
                provenance.insert(name.clone(), chain);
            }
            fields.insert(name.clone(), cleaned);
        }
        let mut record = CleanRecord {
            record_id: raw.record_id.clone(),
            modified_at: raw.modified_at,
            fields,
            provenance,
            flags: Vec::new(),
        };
        if self.config.stages.validation {
            flags.extend(validate_record(&record, &self.catalog));
        }
        record.flags = flags;
        record
    }

    pub fn clean_batch(&self, records: &[RawRecord]) -> Vec<CleanRecord> {
        records.iter().map(|r| self.clean_record(r)).collect()
    }

    /// Near-duplicate clusters over the configured identity fields.
    pub fn dedupe(&self, records: &[CleanRecord]) -> Result<Vec<DuplicateCluster>, DedupeError> {
        detect_near_duplicates_with(
            records,
            &self.config.dedupe.identity_fields,
            &self.config.lsh_params(),
        )
    }
}

/// Evaluates every catalog rule against the record's current values.
pub fn validate_record(record: &CleanRecord, catalog: &Catalog) -> Vec<RuleViolation> {
    catalog
        .rules
        .rules()
        .iter()
        .filter(|r| !matches!(r.kind, RuleKind::Stage))
        .filter_map(|r| match r.evaluate(&record.fields, &catalog.entities) {
            crate::catalog::RuleOutcome::Violated { fields, message } => Some(RuleViolation {
                rule_id: r.id.clone(),
                fields,
                message,
                severity: r.severity,
            }),
            _ => None,
        })
        .collect()
}

fn identity_text(record: &CleanRecord, identity_fields: &[String]) -> String {
    identity_fields
        .iter()
        .filter_map(|f| record.fields.get(f))
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn detect_near_duplicates_with(
    records: &[CleanRecord],
    identity_fields: &[String],
    params: &LshParams,
) -> Result<Vec<DuplicateCluster>, DedupeError> {
    let items: Vec<(String, String)> = records
        .iter()
        .map(|r| (r.record_id.clone(), identity_text(r, identity_fields)))
        .collect();
    cluster_near_duplicates(&items, params)
}

/// Near-duplicate detection over the default identity fields with the
/// default 0.8 threshold.
pub fn detect_near_duplicates(
    records: &[CleanRecord],
    shingle_size: usize,
    num_hashes: usize,
    bands: usize,
) -> Result<Vec<DuplicateCluster>, DedupeError> {
    let params = LshParams {
        shingle_size,
        num_hashes,
        bands,
        ..LshParams::default()
    };
    detect_near_duplicates_with(records, &DedupeConfig::default().identity_fields, &params)
}

/// Reads JSON-lines records, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
) -> Result<Vec<T>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| PipelineError::Records {
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<(), PipelineError> {
    for item in items {
        serde_json::to_writer(&mut writer, item).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// One line of the flagged-record report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagReportLine {
    pub record_id: String,
    pub rule_id: String,
    pub severity: Severity,
    pub fields: Vec<String>,
    pub message: String,
}

pub fn flag_report(records: &[CleanRecord]) -> Vec<FlagReportLine> {
    records
        .iter()
        .flat_map(|r| {
            r.flags.iter().map(|f| FlagReportLine {
                record_id: r.record_id.clone(),
                rule_id: f.rule_id.clone(),
                severity: f.severity,
                fields: f.fields.clone(),
                message: f.message.clone(),
            })
        })
        .collect()
}
