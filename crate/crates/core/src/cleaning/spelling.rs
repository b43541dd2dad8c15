//! Dictionary spelling correction with a precomputed deletion index.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use thiserror::Error;

use super::distance::levenshtein_chars;
use crate::catalog::EntityTables;
use crate::text::{fold_case, fold_confusables, match_case, repair_mojibake, word_tokens};

pub const DEFAULT_MAX_EDIT_DISTANCE: usize = 2;

/// Built-in English domain dictionary, one `term frequency` per line.
pub const SAMPLE_DICTIONARY: &str = include_str!("../../assets/dictionary.txt");

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("cannot read dictionary {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dictionary line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Lookup key for a single token.
fn term_key(s: &str) -> String {
    fold_confusables(&fold_case(s))
}

#[derive(Debug, Clone)]
pub struct SpellingDictionary {
    terms: HashMap<String, u64>,
    /// Phrase with its spaces removed → the phrase (`highschool` → `high school`).
    compounds: HashMap<String, String>,
    /// Case-folded spellings as inserted, before confusable folding.
    surface: HashSet<String>,
    deletes: HashMap<String, Vec<String>>,
    max_edit_distance: usize,
}

impl SpellingDictionary {
    pub fn new(max_edit_distance: usize) -> Self {
        Self {
            terms: HashMap::new(),
            compounds: HashMap::new(),
            surface: HashSet::new(),
            deletes: HashMap::new(),
            max_edit_distance,
        }
    }

    /// Parses `term frequency` lines; `#` starts a comment. A term may be a
    /// multi-word phrase, in which case each word and the joined compound are
    /// added.
    pub fn parse(text: &str, max_edit_distance: usize) -> Result<Self, DictionaryError> {
        let mut dict = Self::new(max_edit_distance);
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (term, freq) = match line.rsplit_once(char::is_whitespace) {
                Some((term, freq)) => {
                    let freq = freq.parse::<u64>().map_err(|_| DictionaryError::Parse {
                        line: i + 1,
                        message: format!("frequency `{freq}` is not a non-negative integer"),
                    })?;
                    (term.trim(), freq)
                }
                None => (line, 1),
            };
            dict.insert(term, freq);
        }
        Ok(dict)
    }

    pub fn load(path: impl AsRef<Path>, max_edit_distance: usize) -> Result<Self, DictionaryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DictionaryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, max_edit_distance)
    }

    /// Sample dictionary plus every token of the catalog's canonical names
    /// and variants.
    pub fn sample(entities: &EntityTables) -> Self {
        let mut dict = Self::parse(SAMPLE_DICTIONARY, DEFAULT_MAX_EDIT_DISTANCE)
            .expect("shipped dictionary parses");
        dict.add_entity_tokens(entities);
        dict
    }

    pub fn add_entity_tokens(&mut self, entities: &EntityTables) {
        for table in entities.iter() {
            for (variant, canonical) in table.all_variants() {
                for text in [variant, canonical] {
                    for token in word_tokens(text) {
                        if !self.contains(token) {
                            self.insert(token, 1);
                        }
                    }
                }
            }
        }
    }

    pub fn insert(&mut self, term: &str, frequency: u64) {
        for w in word_tokens(term) {
            self.surface.insert(fold_case(w));
        }
        let words: Vec<String> = word_tokens(term).into_iter().map(term_key).collect();
        if words.len() > 1 {
            let compound: String = words.concat();
            self.compounds.insert(compound.clone(), words.join(" "));
            self.insert_word(compound, frequency);
        }
        for w in words {
            self.insert_word(w, frequency);
        }
    }

    fn insert_word(&mut self, word: String, frequency: u64) {
        if word.is_empty() {
            return;
        }
        let entry = self.terms.entry(word.clone()).or_insert(0);
        if *entry > 0 {
            *entry = (*entry).max(frequency);
            return;
        }
        *entry = frequency.max(1);
        for d in deletes(&word, self.max_edit_distance) {
            self.deletes.entry(d).or_default().push(word.clone());
        }
    }

    pub fn max_edit_distance(&self) -> usize {
        self.max_edit_distance
    }

    pub fn contains(&self, token: &str) -> bool {
        self.terms.contains_key(&term_key(token))
    }

    pub fn frequency(&self, token: &str) -> Option<u64> {
        self.terms.get(&term_key(token)).copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, u64)> {
        self.terms.iter().map(|(t, f)| (t.as_str(), *f))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Deletion-index entries, for inspection.
    pub fn deletion_index(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.deletes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// The phrase a run-together compound stands for.
    pub fn split_compound(&self, token: &str) -> Option<&str> {
        self.compounds.get(&term_key(token)).map(String::as_str)
    }

    /// Nearest dictionary term within `max_distance` (capped by the
    /// dictionary limit): smallest distance, then higher frequency, then
    /// lexicographic.
    pub fn lookup(&self, token: &str, max_distance: usize) -> Option<(&str, usize)> {
        let key = term_key(token);
        if let Some((term, _)) = self.terms.get_key_value(&key) {
            return Some((term.as_str(), 0));
        }
        let max_distance = max_distance.min(self.max_edit_distance);
        let input: Vec<char> = key.chars().collect();
        let mut seen = BTreeSet::new();
        let mut best: Option<(&str, usize, u64)> = None;
        for d in deletes(&key, max_distance) {
            let Some(candidates) = self.deletes.get(&d) else {
                continue;
            };
            for cand in candidates {
                if !seen.insert(cand.as_str()) {
                    continue;
                }
                let cand_chars: Vec<char> = cand.chars().collect();
                if cand_chars.len().abs_diff(input.len()) > max_distance {
                    continue;
                }
                let dist = levenshtein_chars(&input, &cand_chars);
                if dist > max_distance {
                    continue;
                }
                let freq = self.terms[cand];
                let better = match best {
                    None => true,
                    Some((b, bd, bf)) => {
                        (dist, std::cmp::Reverse(freq), cand.as_str())
                            < (bd, std::cmp::Reverse(bf), b)
                    }
                };
                if better {
                    best = Some((cand.as_str(), dist, freq));
                }
            }
        }
        best.map(|(t, d, _)| (t, d))
    }
}

/// All strings reachable from `word` by deleting up to `max` characters,
/// including `word` itself.
fn deletes(word: &str, max: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    out.insert(word.to_string());
    let mut frontier = vec![word.chars().collect::<Vec<char>>()];
    for _ in 0..max {
        let mut next = Vec::new();
        for chars in &frontier {
            if chars.len() <= 1 {
                continue;
            }
            for i in 0..chars.len() {
                let mut v = chars.clone();
                v.remove(i);
                let s: String = v.iter().collect();
                if out.insert(s) {
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    out
}

/// Outcome of correcting one value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correction {
    pub text: String,
    /// Tokens with no candidate within the distance limit.
    pub unknown: Vec<String>,
}

/// Edit-distance budget for a token: one edit per three characters, capped
/// by the dictionary limit. Tokens shorter than three characters are never
/// corrected.
pub fn token_budget(token_chars: usize, max_edit_distance: usize) -> usize {
    (token_chars / 3).min(max_edit_distance)
}

/// Replaces each out-of-dictionary token with its nearest term, keeping the
/// token's case pattern and all separators. Non-ASCII tokens (after
/// confusable folding) and tokens with digits are left alone.
pub fn correct_spelling(value: &str, dict: &SpellingDictionary) -> Correction {
    let value = repair_mojibake(value);
    let mut text = String::with_capacity(value.len());
    let mut unknown = Vec::new();
    let mut word = String::new();
    let mut flush = |word: &mut String, text: &mut String| {
        if word.is_empty() {
            return;
        }
        let folded = term_key(word);
        let correctable = folded.chars().all(|c| c.is_ascii_alphabetic());
        if !correctable || dict.contains(word) {
            if correctable && folded != fold_case(word) && !dict.surface.contains(&fold_case(word))
            {
                text.push_str(&match_case(word, &folded));
            } else {
                text.push_str(word);
            }
        } else {
            let budget = token_budget(folded.chars().count(), dict.max_edit_distance);
            match dict.lookup(word, budget).filter(|_| budget > 0) {
                Some((term, _)) => text.push_str(&match_case(word, term)),
                None => {
                    unknown.push(word.clone());
                    text.push_str(word);
                }
            }
        }
        word.clear();
    };
    for c in value.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut text);
            text.push(c);
        }
    }
    flush(&mut word, &mut text);
    Correction { text, unknown }
}
