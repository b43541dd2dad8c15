//! Canonicalization of institution, city, project, role and department names.

use super::distance::{levenshtein_chars, phonetic_code};
use crate::catalog::CanonicalEntityTable;
use crate::text::{fold_confusables, lookup_key, title_case};

/// Default fuzzy-match limit: 2 edits for values up to 10 characters, 3 above.
pub fn default_max_distance(value: &str) -> usize {
    if value.chars().count() <= 10 {
        2
    } else {
        3
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityMatch {
    pub canonical: String,
    pub matched: bool,
    /// Edit distance to the winning variant; `None` when unmatched.
    pub distance: Option<usize>,
}

fn match_key(s: &str) -> Vec<char> {
    fold_confusables(&lookup_key(s)).chars().collect()
}

/// Exact variant lookup, then the nearest variant within `max_distance`.
/// A fuzzy candidate must also be within one edit per three characters of
/// the shorter string, so distinct short codes never merge. Ties prefer an
/// equal phonetic code, then the lexicographically smaller variant.
/// Unmatched values come back title-cased.
pub fn canonicalize_entity(
    value: &str,
    table: &CanonicalEntityTable,
    max_distance: usize,
) -> EntityMatch {
    if let Some(canonical) = table.lookup(value) {
        return EntityMatch {
            canonical: canonical.to_string(),
            matched: true,
            distance: Some(0),
        };
    }
    let key = match_key(value);
    if let Some((_, canonical)) = table.all_variants().find(|(v, _)| match_key(v) == key) {
        return EntityMatch {
            canonical: canonical.to_string(),
            matched: true,
            distance: Some(0),
        };
    }
    let code = phonetic_code(value);
    let mut best: Option<(usize, bool, String, &str)> = None;
    for (variant, canonical) in table.all_variants() {
        let vkey = match_key(variant);
        let limit = max_distance.min(key.len().min(vkey.len()) / 3);
        if vkey.len().abs_diff(key.len()) > limit {
            continue;
        }
        let d = levenshtein_chars(&key, &vkey);
        if d > limit {
            continue;
        }
        let phonetic_differs = code.is_empty() || phonetic_code(variant) != code;
        let rank = (d, phonetic_differs, variant.to_string(), canonical);
        if best
            .as_ref()
            .is_none_or(|b| (rank.0, rank.1, &rank.2) < (b.0, b.1, &b.2))
        {
            best = Some(rank);
        }
    }
    match best {
        Some((d, _, _, canonical)) => EntityMatch {
            canonical: canonical.to_string(),
            matched: true,
            distance: Some(d),
        },
        None => EntityMatch {
            canonical: title_case(value),
            matched: false,
            distance: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{sample_catalog, EntityDomain};

    fn canon(domain: EntityDomain, value: &str) -> (String, bool) {
        let cat = sample_catalog();
        let m = canonicalize_entity(
            value,
            cat.entities.table(domain),
            default_max_distance(value),
        );
        (m.canonical, m.matched)
    }

    #[test]
    fn table_one_examples() {
        assert_eq!(canon(EntityDomain::Project, "Gpp"), ("GPP".into(), true));
        assert_eq!(
            canon(EntityDomain::Project, "GPP project"),
            ("GPP".into(), true)
        );
        assert_eq!(
            canon(EntityDomain::School, "ODTU"),
            ("Middle East Technical University".into(), true)
        );
        assert_eq!(
            canon(EntityDomain::School, "Orta Dogu Teknik Universitesi"),
            ("Middle East Technical University".into(), true)
        );
        assert_eq!(canon(EntityDomain::City, "Moskva"), ("Moscow".into(), true));
        assert_eq!(
            canon(EntityDomain::Role, "civil engineer"),
            ("Civil Engineer".into(), true)
        );
    }

    #[test]
    fn fuzzy_and_phonetic() {
        assert_eq!(
            canon(EntityDomain::City, "Moskova"),
            ("Moscow".into(), true)
        );
        assert_eq!(
            canon(EntityDomain::Role, "Civil Enginer"),
            ("Civil Engineer".into(), true)
        );
        assert_eq!(canon(EntityDomain::City, "Kazn"), ("Kazan".into(), true));
        // Short codes do not absorb each other.
        assert_eq!(canon(EntityDomain::Department, "HX"), ("HX".into(), false));
    }

    #[test]
    fn unmatched_is_title_cased() {
        let empty = crate::catalog::CanonicalEntityTable::new(EntityDomain::City);
        let m = canonicalize_entity("Zzyzx", &empty, 2);
        assert_eq!((m.canonical.as_str(), m.matched), ("Zzyzx", false));
        assert_eq!(
            canon(EntityDomain::Role, "drilling supervisor"),
            ("Drilling Supervisor".into(), false)
        );
    }
}
