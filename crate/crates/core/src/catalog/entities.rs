use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CatalogError;
use crate::text::{lookup_key, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityDomain {
    School,
    City,
    Project,
    Role,
    Department,
}

impl EntityDomain {
    pub const ALL: [EntityDomain; 5] = [
        EntityDomain::School,
        EntityDomain::City,
        EntityDomain::Project,
        EntityDomain::Role,
        EntityDomain::Department,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityDomain::School => "school",
            EntityDomain::City => "city",
            EntityDomain::Project => "project",
            EntityDomain::Role => "role",
            EntityDomain::Department => "department",
        }
    }
}

impl fmt::Display for EntityDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityDomain {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityDomain::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CatalogError::Invalid(format!("unknown entity domain `{s}`")))
    }
}

/// A known spelling of a canonical entity, optionally tagged with its language.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Variant {
    pub text: String,
    pub lang: Option<Language>,
}

impl Variant {
    pub fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            lang: None,
        }
    }
}

/// Canonical forms and their variants for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalEntityTable {
    pub domain: EntityDomain,
    entries: BTreeMap<String, Vec<Variant>>,
    index: HashMap<String, String>,
}

impl CanonicalEntityTable {
    pub fn new(domain: EntityDomain) -> Self {
        Self {
            domain,
            entries: BTreeMap::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a canonical form with its variants. The canonical form is always
    /// registered as a variant of itself. A variant already mapped to a
    /// different canonical form is an error.
    pub fn insert(&mut self, canonical: &str, variants: Vec<Variant>) -> Result<(), CatalogError> {
        let canonical = canonical.trim().to_string();
        if canonical.is_empty() {
            return Err(CatalogError::Invalid(format!(
                "empty canonical form in domain `{}`",
                self.domain
            )));
        }
        let mut all = vec![Variant::plain(canonical.clone())];
        all.extend(variants);
        for v in &all {
            let key = lookup_key(&v.text);
            if key.is_empty() {
                return Err(CatalogError::Invalid(format!(
                    "empty variant for `{canonical}`"
                )));
            }
            match self.index.get(&key) {
                Some(existing) if *existing != canonical => {
                    return Err(CatalogError::Duplicate {
                        kind: "entity variant",
                        name: v.text.clone(),
                        scope: format!(
                            "domain `{}` (maps to both `{existing}` and `{canonical}`)",
                            self.domain
                        ),
                    })
                }
                _ => {
                    self.index.insert(key, canonical.clone());
                }
            }
        }
        let entry = self.entries.entry(canonical.clone()).or_default();
        for v in all.into_iter().skip(1) {
            if !entry
                .iter()
                .any(|e| lookup_key(&e.text) == lookup_key(&v.text))
                && lookup_key(&v.text) != lookup_key(&canonical)
            {
                entry.push(v);
            }
        }
        Ok(())
    }

    pub fn lookup(&self, variant: &str) -> Option<&str> {
        self.index.get(&lookup_key(variant)).map(String::as_str)
    }

    /// Canonical forms with their explicit (non-self) variants.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[Variant])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Every (variant text, canonical) pair, canonical self-variants included.
    pub fn all_variants(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().flat_map(|(canonical, variants)| {
            std::iter::once((canonical.as_str(), canonical.as_str())).chain(
                variants
                    .iter()
                    .map(move |v| (v.text.as_str(), canonical.as_str())),
            )
        })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// One table per domain; every domain is present, possibly empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTables {
    tables: BTreeMap<EntityDomain, CanonicalEntityTable>,
}

impl Default for EntityTables {
    fn default() -> Self {
        Self {
            tables: EntityDomain::ALL
                .into_iter()
                .map(|d| (d, CanonicalEntityTable::new(d)))
                .collect(),
        }
    }
}

impl EntityTables {
    pub fn table(&self, domain: EntityDomain) -> &CanonicalEntityTable {
        &self.tables[&domain]
    }

    pub fn table_mut(&mut self, domain: EntityDomain) -> &mut CanonicalEntityTable {
        self.tables.get_mut(&domain).expect("all domains present")
    }

    pub fn lookup(&self, domain: EntityDomain, variant: &str) -> Option<&str> {
        self.table(domain).lookup(variant)
    }

    /// Looks a variant up in every domain, returning the first hit in domain order.
    pub fn lookup_any(&self, variant: &str) -> Option<(EntityDomain, &str)> {
        self.tables
            .values()
            .find_map(|t| t.lookup(variant).map(|c| (t.domain, c)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CanonicalEntityTable> {
        self.tables.values()
    }

    /// Longest variant length in words, for n-gram scanning of free text.
    pub fn max_variant_words(&self) -> usize {
        self.tables
            .values()
            .flat_map(|t| t.all_variants().map(|(v, _)| v.split_whitespace().count()))
            .max()
            .unwrap_or(1)
    }
}
