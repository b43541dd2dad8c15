//! Question to SQL: normalize and translate the question, retrieve similar
//! examples, assemble the prompt, and ask a model for a guarded query.

mod prompt;
mod provider;
mod result;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::Catalog;
use crate::cleaning::{TranslationError, TranslationProvider};
use crate::guard::{Guard, GuardOutcome, VerdictStatus};
use crate::text::{
    collapse_whitespace, fold_case, fold_confusables, lookup_key, lowercase_for, word_tokens,
    Language,
};

pub use prompt::{
    approx_tokens, assemble_prompt, render_rules, ChatMessages, PromptBundle, PromptExample,
    PromptTemplate, DEFAULT_TOKEN_BUDGET, SAMPLE_TEMPLATE,
};
pub use provider::{
    extract_sql, CompletionRequest, ExampleEchoProvider, HttpChatProvider, LlmProvider,
    ProviderConfig, ProviderError, ScriptedProvider, DEFAULT_PROVIDER_TIMEOUT, UNGROUNDED_GUESS,
};
pub use result::{translate_result, TranslatedTable};

pub const DEFAULT_MAX_ATTEMPTS: usize = 2;
/// Reply prefix the prompt asks the model to use for restricted questions.
pub const REFUSE_MARKER: &str = "REFUSE:";
/// Extra tries on transport failure within one attempt.
pub const TRANSPORT_RETRIES: usize = 2;

#[derive(Debug, Error)]
pub enum Nl2SqlError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("question translation failed: {0}")]
    Translation(#[from] TranslationError),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

const TR_STOPWORDS: &[&str] = &[
    "kaç",
    "kac",
    "ve",
    "bir",
    "bu",
    "hangi",
    "nedir",
    "ne",
    "için",
    "icin",
    "olan",
    "mi",
    "mı",
    "mu",
    "mü",
    "ile",
    "de",
    "da",
    "nerede",
    "toplam",
    "göster",
    "goster",
    "listele",
    "var",
    "kişi",
    "kisi",
    "çalışan",
    "calisan",
    "projesinde",
    "sayısı",
    "sayisi",
    "en",
    "çok",
    "cok",
    "gibi",
];
const EN_STOPWORDS: &[&str] = &[
    "the", "how", "many", "what", "which", "who", "is", "are", "in", "on", "of", "for", "and",
    "or", "list", "show", "number", "work", "working", "average", "with", "per", "by", "there",
    "do", "does",
];
const TURKISH_LETTERS: &[char] = &['ç', 'ğ', 'ı', 'ö', 'ş', 'ü', 'Ç', 'Ğ', 'İ', 'Ö', 'Ş', 'Ü'];

/// Script first (any Cyrillic letter means Russian), then Turkish-only
/// letters and a stopword vote. Ties go to English.
pub fn detect_language(text: &str) -> Language {
    if text.chars().any(crate::text::is_cyrillic) {
        return Language::Ru;
    }
    let folded = fold_case(text);
    let tokens = word_tokens(&folded);
    let tr_letters = text.chars().filter(|c| TURKISH_LETTERS.contains(c)).count();
    let tr = tokens.iter().filter(|t| TR_STOPWORDS.contains(t)).count()
        + 2 * usize::from(tr_letters > 0);
    let en = tokens.iter().filter(|t| EN_STOPWORDS.contains(t)).count();
    if tr > en {
        Language::Tr
    } else {
        Language::En
    }
}

/// Trims, collapses whitespace, detects the language and lowercases with
/// that language's rules (Turkish dotted and dotless I).
pub fn preprocess_question(question: &str) -> Result<(String, Language), Nl2SqlError> {
    let collapsed = collapse_whitespace(question);
    if collapsed.is_empty() {
        return Err(Nl2SqlError::EmptyQuestion);
    }
    let lang = detect_language(&collapsed);
    Ok((lowercase_for(&collapsed, lang), lang))
}

fn entity_key(s: &str) -> String {
    fold_confusables(&lookup_key(s))
}

fn placeholder(i: usize) -> String {
    format!("QENT{i}Q")
}

/// Replaces catalog entity mentions (canonical names and variants, longest
/// first) with placeholders. Returns the text and the canonical names in
/// placeholder order. A Turkish case suffix after an apostrophe is dropped
/// with the name (`Moskva'da`).
fn protect_entities(text: &str, catalog: &Catalog) -> (String, Vec<String>) {
    let mut variants = std::collections::HashMap::new();
    for table in catalog.entities.iter() {
        for (variant, canonical) in table.all_variants() {
            variants
                .entry(entity_key(variant))
                .or_insert_with(|| canonical.to_string());
        }
    }
    let max_words = catalog.entities.max_variant_words();
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut out = Vec::new();
    let mut found: Vec<String> = Vec::new();
    let mut i = 0;
    'outer: while i < words.len() {
        for n in (1..=max_words.min(words.len() - i)).rev() {
            let mut span = words[i..i + n].join(" ");
            let mut trail = String::new();
            if let Some(pos) = span.rfind(['\'', '\u{2019}']) {
                if pos > span.rfind(' ').map_or(0, |p| p + 1) {
                    trail = span[pos..]
                        .trim_start_matches(['\'', '\u{2019}'])
                        .chars()
                        .filter(|c| !c.is_alphanumeric())
                        .collect();
                    span.truncate(pos);
                }
            }
            let core = span.trim_matches(|c: char| !c.is_alphanumeric());
            if core.is_empty() {
                continue;
            }
            if let Some(canonical) = variants.get(&entity_key(core)) {
                let lead = &span[..span.find(core).unwrap_or(0)];
                let tail = &span[lead.len() + core.len()..];
                let idx = match found.iter().position(|c| c == canonical) {
                    Some(idx) => idx,
                    None => {
                        found.push(canonical.clone());
                        found.len() - 1
                    }
                };
                out.push(format!("{lead}{}{tail}{trail}", placeholder(idx)));
                i += n;
                continue 'outer;
            }
        }
        out.push(words[i].to_string());
        i += 1;
    }
    (out.join(" "), found)
}

fn restore_entities(text: &str, entities: &[String]) -> String {
    let mut out = text.to_string();
    for (i, canonical) in entities.iter().enumerate().rev() {
        let ph = placeholder(i);
        let lower = ph.to_lowercase();
        if out.contains(&ph) {
            out = out.replace(&ph, canonical);
        } else if out.contains(&lower) {
            out = out.replace(&lower, canonical);
        } else {
            out = format!("{out} {canonical}");
        }
    }
    out
}

/// English form of a normalized question. English passes through; other
/// languages have catalog entity names pinned to their canonical form
/// before the provider translates the rest.
pub fn translate_question(
    question: &str,
    lang: Language,
    translator: &dyn TranslationProvider,
    catalog: &Catalog,
) -> Result<String, Nl2SqlError> {
    if lang == Language::En {
        return Ok(question.to_string());
    }
    let (protected, entities) = protect_entities(question, catalog);
    let translated = translator.translate(&protected, Some(lang), Language::En)?;
    Ok(collapse_whitespace(&restore_entities(
        &translated,
        &entities,
    )))
}

/// Result of asking the model for SQL.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationOutcome {
    /// Reply text of the last provider call; empty when none was made.
    pub raw_text: String,
    pub extracted_sql: Option<String>,
    /// Provider calls that produced a reply.
    pub attempts: usize,
    pub refusal: Option<String>,
    /// The refusal came from the restricted-topic policy.
    pub policy_blocked: bool,
    #[serde(skip)]
    pub guard: Option<GuardOutcome>,
}

impl GenerationOutcome {
    fn refused(reason: String, raw_text: String, attempts: usize) -> Self {
        Self {
            raw_text,
            extracted_sql: None,
            attempts,
            refusal: Some(reason),
            policy_blocked: false,
            guard: None,
        }
    }

    fn blocked(catalog: &Catalog, raw_text: String, attempts: usize) -> Self {
        Self {
            policy_blocked: true,
            ..Self::refused(catalog.policy.refusal_message.clone(), raw_text, attempts)
        }
    }

    /// True when the final SQL passed the guard.
    pub fn is_valid(&self) -> bool {
        self.guard.as_ref().is_some_and(|g| g.verdict.is_pass())
    }
}

/// First forbidden term in any of `texts`.
pub fn policy_screen(catalog: &Catalog, texts: &[&str]) -> Option<String> {
    texts.iter().find_map(|t| catalog.policy.match_forbidden(t))
}

fn call_with_retries(
    provider: &dyn LlmProvider,
    request: CompletionRequest<'_>,
) -> Result<String, ProviderError> {
    let mut last = None;
    for _ in 0..=TRANSPORT_RETRIES {
        match provider.complete(request) {
            Ok(text) => return Ok(text),
            Err(e @ ProviderError::Transport(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one try"))
}

/// Asks the provider for SQL and guards it, retrying with the guard's
/// findings until a statement passes or `max_attempts` replies were used.
/// Questions that hit the forbidden-topic screen are refused without
/// calling the provider, and so are statements the policy check rejects.
/// `source_question` is the user's original wording.
pub fn generate_sql(
    bundle: &PromptBundle,
    source_question: &str,
    provider: &dyn LlmProvider,
    guard: &Guard<'_>,
    max_attempts: usize,
) -> Result<GenerationOutcome, Nl2SqlError> {
    let catalog = guard.catalog();
    if policy_screen(catalog, &[source_question, &bundle.question_section]).is_some() {
        return Ok(GenerationOutcome::blocked(catalog, String::new(), 0));
    }
    let mut feedback: Option<String> = None;
    let mut last = GenerationOutcome::refused("no attempt made".into(), String::new(), 0);
    for attempt in 1..=max_attempts.max(1) {
        let raw = call_with_retries(
            provider,
            CompletionRequest {
                bundle,
                attempt,
                feedback: feedback.as_deref(),
            },
        )?;
        let Some(sql) = extract_sql(&raw) else {
            if raw.trim_start().starts_with(REFUSE_MARKER) {
                return Ok(GenerationOutcome::blocked(catalog, raw, attempt));
            }
            let reason = raw
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("provider returned no SQL")
                .trim()
                .to_string();
            return Ok(GenerationOutcome::refused(reason, raw, attempt));
        };
        let outcome = guard.check(&sql, Some(source_question));
        if outcome.verdict.status == VerdictStatus::RejectPolicy {
            return Ok(GenerationOutcome {
                extracted_sql: Some(sql),
                guard: Some(outcome),
                ..GenerationOutcome::blocked(catalog, raw, attempt)
            });
        }
        let pass = outcome.verdict.is_pass();
        feedback = Some(outcome.verdict.summary());
        last = GenerationOutcome {
            raw_text: raw,
            extracted_sql: Some(sql),
            attempts: attempt,
            refusal: None,
            policy_blocked: false,
            guard: Some(outcome),
        };
        if pass {
            break;
        }
    }
    Ok(last)
}
