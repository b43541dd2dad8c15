//! Translation providers: a dictionary-backed implementation and an HTTP
//! adapter for an external machine-translation service.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spelling::SpellingDictionary;
use crate::text::{
    ascii_alpha_ratio, fold_confusables, lookup_key, match_case, word_tokens, Language,
};

/// Built-in phrase table, tab-separated `source_lang target_lang source target`.
pub const SAMPLE_TRANSLATIONS: &str = include_str!("../../assets/translations.tsv");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranslationError {
    #[error("translation service unavailable: {0}")]
    Unavailable(String),
    #[error("translation service returned an invalid response: {0}")]
    BadResponse(String),
    #[error("translation table line {line}: {message}")]
    Table { line: usize, message: String },
}

pub trait TranslationProvider: Send + Sync {
    /// Translates `text` into `target`. `source` is a hint; `None` lets the
    /// provider detect the language.
    fn translate(
        &self,
        text: &str,
        source: Option<Language>,
        target: Language,
    ) -> Result<String, TranslationError>;
}

fn phrase_key(s: &str) -> String {
    fold_confusables(&lookup_key(s))
}

/// Deterministic phrase-table translator. Greedily replaces the longest
/// known phrase at each position and keeps unknown words as they are.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTranslator {
    tables: HashMap<(Language, Language), HashMap<String, String>>,
    max_words: usize,
}

impl DictionaryTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, TranslationError> {
        let mut t = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let table_err = |message: String| TranslationError::Table {
                line: i + 1,
                message,
            };
            let [from, to, source, target] = cols[..] else {
                return Err(table_err(format!(
                    "expected 4 tab-separated columns, found {}",
                    cols.len()
                )));
            };
            let from = Language::parse(from)
                .ok_or_else(|| table_err(format!("unknown language `{from}`")))?;
            let to =
                Language::parse(to).ok_or_else(|| table_err(format!("unknown language `{to}`")))?;
            t.insert(from, to, source, target.trim());
        }
        Ok(t)
    }

    pub fn sample() -> Self {
        Self::parse(SAMPLE_TRANSLATIONS).expect("shipped translation table parses")
    }

    pub fn insert(&mut self, from: Language, to: Language, source: &str, target: &str) {
        let key = phrase_key(source);
        self.max_words = self.max_words.max(key.split(' ').count());
        self.tables
            .entry((from, to))
            .or_default()
            .insert(key, target.to_string());
    }

    /// Exact whole-phrase entry, if any.
    pub fn phrase(&self, from: Language, to: Language, text: &str) -> Option<&str> {
        self.tables
            .get(&(from, to))?
            .get(&phrase_key(text))
            .map(String::as_str)
    }

    fn lookup(&self, sources: &[Language], target: Language, key: &str) -> Option<&str> {
        sources
            .iter()
            .filter_map(|s| self.tables.get(&(*s, target)))
            .find_map(|t| t.get(key))
            .map(String::as_str)
    }
}

impl TranslationProvider for DictionaryTranslator {
    fn translate(
        &self,
        text: &str,
        source: Option<Language>,
        target: Language,
    ) -> Result<String, TranslationError> {
        if source == Some(target) {
            return Ok(text.to_string());
        }
        let sources: Vec<Language> = match source {
            Some(s) => vec![s],
            None => Language::ALL.into_iter().filter(|l| *l != target).collect(),
        };
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut out: Vec<String> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            let mut matched = false;
            for n in (1..=self.max_words.min(words.len() - i)).rev() {
                let span = &words[i..i + n];
                let joined = span.join(" ");
                let trimmed = joined.trim_matches(|c: char| !c.is_alphanumeric());
                if let Some(found) = self.lookup(&sources, target, &phrase_key(trimmed)) {
                    let lead = &joined[..joined.find(trimmed).unwrap_or(0)];
                    let trail = &joined[lead.len() + trimmed.len()..];
                    let rendered = if n == 1 && found.split(' ').count() == 1 {
                        match_case(trimmed, found)
                    } else {
                        found.to_string()
                    };
                    out.push(format!("{lead}{rendered}{trail}"));
                    i += n;
                    matched = true;
                    break;
                }
            }
            if !matched {
                out.push(words[i].to_string());
                i += 1;
            }
        }
        Ok(out.join(" "))
    }
}

#[derive(Debug, Serialize)]
struct HttpRequest<'a> {
    q: &'a str,
    source: &'a str,
    target: &'a str,
    format: &'static str,
}

#[derive(Debug, Deserialize)]
struct HttpResponse {
    #[serde(rename = "translatedText")]
    translated_text: String,
}

/// Adapter for a LibreTranslate-compatible `/translate` endpoint.
#[derive(Debug, Clone)]
pub struct HttpTranslator {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTranslator {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl TranslationProvider for HttpTranslator {
    fn translate(
        &self,
        text: &str,
        source: Option<Language>,
        target: Language,
    ) -> Result<String, TranslationError> {
        let body = HttpRequest {
            q: text,
            source: source.map_or("auto", Language::code),
            target: target.code(),
            format: "text",
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| TranslationError::Unavailable(e.to_string()))?;
        let parsed: HttpResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| TranslationError::BadResponse(e.to_string()))?;
        Ok(parsed.translated_text)
    }
}

/// A value is already English when at least 90% of its letters are ASCII
/// and every word is known to the dictionary (which includes the canonical
/// entity vocabulary).
pub fn is_english(value: &str, dict: &SpellingDictionary) -> bool {
    ascii_alpha_ratio(value) >= 0.9
        && word_tokens(value)
            .into_iter()
            .filter(|t| !t.chars().any(|c| c.is_ascii_digit()))
            .all(|t| dict.contains(t))
}

/// Translation stage for one value. English values pass through unchanged.
pub fn normalize_translation(
    value: &str,
    source_language_hint: Option<Language>,
    translator: &dyn TranslationProvider,
    dict: &SpellingDictionary,
) -> Result<String, TranslationError> {
    if is_english(value, dict) {
        return Ok(value.to_string());
    }
    translator.translate(value, source_language_hint, Language::En)
}
