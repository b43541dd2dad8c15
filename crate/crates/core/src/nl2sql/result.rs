//! Translation of result tables back into the user's language.

use serde::Serialize;

use crate::catalog::{Catalog, SemanticType};
use crate::cleaning::{DictionaryTranslator, TranslationProvider};
use crate::table::{Cell, ResultTable};
use crate::text::{fold_case, Language};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslatedTable {
    pub table: ResultTable,
    /// Set when the provider failed and some labels stayed in English.
    pub warning: bool,
}

fn entity_in(catalog: &Catalog, value: &str, target: Language) -> Option<String> {
    let key = fold_case(value);
    catalog.entities.iter().find_map(|t| {
        t.entries()
            .find(|(canonical, _)| fold_case(canonical) == key)
            .and_then(|(_, variants)| {
                let tagged = || variants.iter().filter(|v| v.lang == Some(target));
                let native = |v: &&crate::catalog::Variant| {
                    target != Language::Ru || v.text.chars().any(crate::text::is_cyrillic)
                };
                tagged()
                    .find(native)
                    .or_else(|| tagged().next())
                    .map(|v| v.text.clone())
            })
    })
}

/// Translates header labels and categorical cells. Labels go through the
/// phrase table first and `provider` second; categorical text cells use the
/// phrase table, then the catalog's language-tagged variants, and are never
/// sent to the provider. Numeric, date and identifier cells are untouched.
pub fn translate_result(
    table: &ResultTable,
    target: Language,
    catalog: &Catalog,
    phrases: &DictionaryTranslator,
    provider: Option<&dyn TranslationProvider>,
) -> TranslatedTable {
    let mut out = table.clone();
    if target == Language::En {
        return TranslatedTable {
            table: out,
            warning: false,
        };
    }
    let mut warning = false;
    for header in &mut out.headers {
        if let Some(t) = phrases.phrase(Language::En, target, &header.label) {
            header.label = t.to_string();
        } else if let Some(p) = provider {
            match p.translate(&header.label.replace('_', " "), Some(Language::En), target) {
                Ok(t) => header.label = t,
                Err(e) => {
                    tracing::warn!(error = %e, "result label translation failed");
                    warning = true;
                }
            }
        }
    }
    let categorical: Vec<bool> = table
        .headers
        .iter()
        .map(|h| matches!(h.semantic_type, SemanticType::Text | SemanticType::Boolean))
        .collect();
    for row in &mut out.rows {
        for (cell, is_cat) in row.iter_mut().zip(&categorical) {
            if !is_cat {
                continue;
            }
            if let Cell::Text(value) = cell {
                let phrase = phrases
                    .phrase(Language::En, target, value)
                    .map(str::to_string);
                if let Some(t) = phrase.or_else(|| entity_in(catalog, value, target)) {
                    *value = t;
                }
            }
        }
    }
    TranslatedTable {
        table: out,
        warning,
    }
}
