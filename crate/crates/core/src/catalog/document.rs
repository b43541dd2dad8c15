//! Serde model of the catalog file.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    BusinessDefault, Catalog, CatalogError, EntityDomain, EntityTables, PolicyRules,
    QualifiedColumn, RuleDef, RuleSet, SchemaCatalog, TableDef, Variant, DEFAULT_REFUSAL_MESSAGE,
};
use crate::text::Language;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogDocument {
    pub version: u64,
    pub functions_allowed: Vec<String>,
    pub tables: Vec<TableDef>,
    pub policy: PolicyDocument,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entities: Vec<EntityDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<RuleDef>,
}

fn select_only() -> Vec<String> {
    vec!["SELECT".to_string()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    #[serde(default = "select_only")]
    pub allowed_statement_kinds: Vec<String>,
    #[serde(default)]
    pub refusal_message: Option<String>,
    #[serde(default)]
    pub pii_redact_columns: Vec<String>,
    pub forbidden_topic_terms: BTreeMap<Language, Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub business_defaults: Vec<BusinessDefault>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityDocument {
    pub domain: EntityDomain,
    pub canonical: String,
    #[serde(default)]
    pub variants: Vec<VariantDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantDocument {
    Plain(String),
    Tagged { text: String, lang: Language },
}

impl From<VariantDocument> for Variant {
    fn from(v: VariantDocument) -> Self {
        match v {
            VariantDocument::Plain(text) => Variant { text, lang: None },
            VariantDocument::Tagged { text, lang } => Variant {
                text,
                lang: Some(lang),
            },
        }
    }
}

impl From<&Variant> for VariantDocument {
    fn from(v: &Variant) -> Self {
        match v.lang {
            None => VariantDocument::Plain(v.text.clone()),
            Some(lang) => VariantDocument::Tagged {
                text: v.text.clone(),
                lang,
            },
        }
    }
}

impl CatalogDocument {
    pub fn into_catalog(self) -> Result<Catalog, CatalogError> {
        let schema = SchemaCatalog {
            version: self.version,
            tables: self.tables,
            functions_allowed: self
                .functions_allowed
                .iter()
                .map(|f| f.trim().to_ascii_uppercase())
                .collect(),
        };
        let mut pii = BTreeSet::new();
        for raw in &self.policy.pii_redact_columns {
            let qc = QualifiedColumn::parse(raw).ok_or_else(|| {
                CatalogError::Invalid(format!(
                    "pii_redact_columns entry `{raw}` must be `table.column`"
                ))
            })?;
            pii.insert(qc);
        }
        let policy = PolicyRules {
            forbidden_topic_terms: self.policy.forbidden_topic_terms,
            pii_redact_columns: pii,
            business_defaults: self.policy.business_defaults,
            allowed_statement_kinds: self.policy.allowed_statement_kinds,
            refusal_message: self
                .policy
                .refusal_message
                .unwrap_or_else(|| DEFAULT_REFUSAL_MESSAGE.to_string()),
        };
        let mut entities = EntityTables::default();
        for e in self.entities {
            entities.table_mut(e.domain).insert(
                &e.canonical,
                e.variants.into_iter().map(Variant::from).collect(),
            )?;
        }
        let catalog = Catalog {
            schema,
            policy,
            entities,
            rules: RuleSet::new(self.rules),
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn from_catalog(catalog: &Catalog) -> Self {
        let entities = catalog
            .entities
            .iter()
            .flat_map(|table| {
                table
                    .entries()
                    .map(move |(canonical, variants)| EntityDocument {
                        domain: table.domain,
                        canonical: canonical.to_string(),
                        variants: variants.iter().map(VariantDocument::from).collect(),
                    })
            })
            .collect();
        CatalogDocument {
            version: catalog.schema.version,
            functions_allowed: catalog.schema.functions_allowed.iter().cloned().collect(),
            tables: catalog.schema.tables.clone(),
            policy: PolicyDocument {
                allowed_statement_kinds: catalog.policy.allowed_statement_kinds.clone(),
                refusal_message: Some(catalog.policy.refusal_message.clone()),
                pii_redact_columns: catalog
                    .policy
                    .pii_redact_columns
                    .iter()
                    .map(ToString::to_string)
                    .collect(),
                forbidden_topic_terms: catalog.policy.forbidden_topic_terms.clone(),
                business_defaults: catalog.policy.business_defaults.clone(),
            },
            entities,
            rules: catalog.rules.rules().to_vec(),
        }
    }
}
