//! Corrupted record corpora with known answers, for measuring the cleaning
//! pipeline and exercising sync at volume.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, EntityDomain};
use crate::cleaning::{CleanRecord, RawRecord, SAMPLE_TRANSLATIONS};
use crate::fixtures::demo_employees;
use crate::text::{fold_case, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// One or two letter edits inside a long enough word.
    Typo,
    /// A known alternative spelling or abbreviation of the canonical value.
    Variant,
    /// The value written in Turkish or Russian.
    Foreign,
    /// Case and spacing noise.
    Casing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCorruption {
    pub record_id: String,
    pub field: String,
    pub kind: CorruptionKind,
    pub corrupted: String,
    pub expected: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub raw: Vec<RawRecord>,
    pub truth: Vec<CleanRecord>,
    pub planted: Vec<PlantedCorruption>,
}

/// Fields the generator corrupts, with their entity domain.
pub const CORRUPTIBLE: &[(&str, Option<EntityDomain>)] = &[
    ("actual_working_city", Some(EntityDomain::City)),
    ("country", None),
    ("egitimOkulAdi", Some(EntityDomain::School)),
    ("role_eng", Some(EntityDomain::Role)),
    ("department", Some(EntityDomain::Department)),
    ("c_project_eng", Some(EntityDomain::Project)),
];

/// Foreign spellings of English values from the built-in phrase table.
fn foreign_forms() -> BTreeMap<String, Vec<String>> {
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in SAMPLE_TRANSLATIONS.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        if let [from, "en", source, target] = cols[..] {
            if from != "en" && !line.starts_with('#') {
                out.entry(target.trim().to_string())
                    .or_default()
                    .push(source.to_string());
            }
        }
    }
    out
}

fn typo(rng: &mut ChaCha8Rng, value: &str) -> Option<String> {
    let words: Vec<&str> = value.split(' ').collect();
    let candidates: Vec<usize> = (0..words.len())
        .filter(|&i| {
            words[i].chars().count() >= 5 && words[i].chars().all(|c| c.is_ascii_alphabetic())
        })
        .collect();
    let &w = candidates.choose(rng)?;
    let mut chars: Vec<char> = words[w].chars().collect();
    let edits = if chars.len() >= 6 && rng.random_bool(0.5) {
        2
    } else {
        1
    };
    let mut touched = Vec::new();
    for _ in 0..edits {
        // Interior positions only; the first letter carries the case.
        let pos = loop {
            let p = rng.random_range(1..chars.len());
            if !touched.contains(&p) {
                break p;
            }
        };
        touched.push(pos);
        let orig = chars[pos].to_ascii_lowercase();
        let repl = loop {
            let c = rng.random_range(b'a'..=b'z') as char;
            if c != orig {
                break c;
            }
        };
        chars[pos] = repl;
    }
    let mut out: Vec<String> = words.iter().map(|s| s.to_string()).collect();
    out[w] = chars.into_iter().collect();
    Some(out.join(" "))
}

fn casing(rng: &mut ChaCha8Rng, value: &str) -> String {
    match rng.random_range(0..3) {
        0 => format!("  {}  ", value.to_uppercase()),
        1 => value.to_lowercase(),
        _ => value.split(' ').collect::<Vec<_>>().join("   "),
    }
}

/// `n` records from the demo generator with about half of them carrying
/// one or two planted corruptions. Same seed, same corpus.
pub fn corrupted_corpus(catalog: &Catalog, n: usize, seed: u64) -> SynthCorpus {
    let truth = demo_employees(n, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE00);
    let foreign = foreign_forms();
    let mut raw = Vec::with_capacity(n);
    let mut planted = Vec::new();
    for record in &truth {
        let mut fields = record.fields.clone();
        if rng.random_bool(0.55) {
            let count = if rng.random_bool(0.3) { 2 } else { 1 };
            let mut used = Vec::new();
            for _ in 0..count {
                let (field, domain) = *CORRUPTIBLE.choose(&mut rng).unwrap();
                let Some(expected) = record.fields.get(field).cloned() else {
                    continue;
                };
                if used.contains(&field) {
                    continue;
                }
                let variants: Vec<(String, Option<Language>)> = domain
                    .map(|d| {
                        catalog
                            .entities
                            .table(d)
                            .entries()
                            .filter(|(c, _)| *c == expected)
                            .flat_map(|(_, vs)| vs.iter().map(|v| (v.text.clone(), v.lang)))
                            .collect()
                    })
                    .unwrap_or_default();
                let latin: Vec<&String> = variants
                    .iter()
                    .filter(|(_, l)| l.is_none())
                    .map(|(t, _)| t)
                    .collect();
                let mut foreign_forms: Vec<String> = variants
                    .iter()
                    .filter(|(_, l)| l.is_some())
                    .map(|(t, _)| t.clone())
                    .collect();
                foreign_forms.extend(foreign.get(&expected).into_iter().flatten().cloned());
                let kind = *[
                    CorruptionKind::Typo,
                    CorruptionKind::Variant,
                    CorruptionKind::Foreign,
                    CorruptionKind::Casing,
                ]
                .choose(&mut rng)
                .unwrap();
                let corrupted = match kind {
                    CorruptionKind::Typo => typo(&mut rng, &expected),
                    CorruptionKind::Variant => latin.choose(&mut rng).map(|s| s.to_string()),
                    CorruptionKind::Foreign => foreign_forms.choose(&mut rng).cloned(),
                    CorruptionKind::Casing => Some(casing(&mut rng, &expected)),
                };
                let Some(corrupted) = corrupted.filter(|c| {
                    *c != expected && fold_case(c) != fold_case(&expected)
                        || kind == CorruptionKind::Casing && *c != expected
                }) else {
                    continue;
                };
                fields.insert(field.to_string(), corrupted.clone());
                used.push(field);
                planted.push(PlantedCorruption {
                    record_id: record.record_id.clone(),
                    field: field.to_string(),
                    kind,
                    corrupted,
                    expected,
                });
            }
        }
        raw.push(RawRecord {
            record_id: record.record_id.clone(),
            modified_at: record.modified_at,
            fields,
        });
    }
    SynthCorpus {
        raw,
        truth,
        planted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::sample_catalog;
    use crate::cleaning::levenshtein;

    #[test]
    fn deterministic_with_every_kind() {
        let cat = sample_catalog();
        let a = corrupted_corpus(&cat, 300, 11);
        let b = corrupted_corpus(&cat, 300, 11);
        assert_eq!(a.planted, b.planted);
        assert_eq!(a.raw, b.raw);
        for kind in [
            CorruptionKind::Typo,
            CorruptionKind::Variant,
            CorruptionKind::Foreign,
            CorruptionKind::Casing,
        ] {
            assert!(a.planted.iter().any(|p| p.kind == kind), "{kind:?}");
        }
    }

    #[test]
    fn typos_stay_within_two_edits() {
        let cat = sample_catalog();
        let c = corrupted_corpus(&cat, 500, 3);
        for p in c.planted.iter().filter(|p| p.kind == CorruptionKind::Typo) {
            let d = levenshtein(&p.corrupted, &p.expected);
            assert!((1..=2).contains(&d), "{p:?}");
        }
    }

    #[test]
    fn uncorrupted_fields_match_truth() {
        let cat = sample_catalog();
        let c = corrupted_corpus(&cat, 200, 5);
        for (raw, truth) in c.raw.iter().zip(&c.truth) {
            for (k, v) in &raw.fields {
                let planted = c
                    .planted
                    .iter()
                    .any(|p| p.record_id == raw.record_id && p.field == *k);
                assert_eq!(planted, v != &truth.fields[k], "{} {k}", raw.record_id);
            }
        }
    }
}
