//! Schema whitelist, safety policy, canonical entity tables, and record rules.
//!
//! All four live in one versioned TOML document so the policy layer can be
//! reviewed and diffed as a unit. [`Catalog`] is immutable once loaded;
//! reloading produces a new instance that consumers swap in.

mod document;
mod entities;
mod prompt;
mod rules;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{fold_case, Language};

pub use document::CatalogDocument;
pub use entities::{CanonicalEntityTable, EntityDomain, EntityTables, Variant};
pub use prompt::serialize_schema_for_prompt;
pub use rules::{
    RuleDef, RuleKind, RuleOutcome, RuleSet, Severity, STAGE_ENTITY, STAGE_SPELLING,
    STAGE_TRANSLATION,
};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("catalog parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate {kind} `{name}` in {scope}")]
    Duplicate {
        kind: &'static str,
        name: String,
        scope: String,
    },
    #[error("{context} references unknown {kind} `{name}`")]
    DanglingReference {
        context: String,
        kind: &'static str,
        name: String,
    },
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticType {
    Text,
    Integer,
    Decimal,
    Date,
    Boolean,
    Identifier,
}

impl SemanticType {
    pub fn as_str(self) -> &'static str {
        match self {
            SemanticType::Text => "text",
            SemanticType::Integer => "integer",
            SemanticType::Decimal => "decimal",
            SemanticType::Date => "date",
            SemanticType::Boolean => "boolean",
            SemanticType::Identifier => "identifier",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, SemanticType::Integer | SemanticType::Decimal)
    }
}

impl fmt::Display for SemanticType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub semantic_type: SemanticType,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pii: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        let key = fold_case(name);
        self.columns.iter().find(|c| fold_case(&c.name) == key)
    }
}

/// `table.column`, compared case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualifiedColumn {
    pub table: String,
    pub column: String,
}

impl QualifiedColumn {
    pub fn new(table: &str, column: &str) -> Self {
        Self {
            table: fold_case(table),
            column: fold_case(column),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (t, c) = s.split_once('.')?;
        if t.is_empty() || c.is_empty() || c.contains('.') {
            return None;
        }
        Some(Self::new(t.trim(), c.trim()))
    }
}

impl fmt::Display for QualifiedColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// Signature of a function the guard can whitelist. Only functions the
/// execution engine implements natively may appear in a catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionSig {
    pub name: &'static str,
    pub min_args: usize,
    pub max_args: Option<usize>,
    /// Aggregate when called with exactly one argument.
    pub aggregate: bool,
}

pub const KNOWN_FUNCTIONS: &[FunctionSig] = &[
    FunctionSig {
        name: "COUNT",
        min_args: 1,
        max_args: Some(1),
        aggregate: true,
    },
    FunctionSig {
        name: "SUM",
        min_args: 1,
        max_args: Some(1),
        aggregate: true,
    },
    FunctionSig {
        name: "AVG",
        min_args: 1,
        max_args: Some(1),
        aggregate: true,
    },
    FunctionSig {
        name: "MIN",
        min_args: 1,
        max_args: None,
        aggregate: true,
    },
    FunctionSig {
        name: "MAX",
        min_args: 1,
        max_args: None,
        aggregate: true,
    },
    FunctionSig {
        name: "LOWER",
        min_args: 1,
        max_args: Some(1),
        aggregate: false,
    },
    FunctionSig {
        name: "UPPER",
        min_args: 1,
        max_args: Some(1),
        aggregate: false,
    },
    FunctionSig {
        name: "LENGTH",
        min_args: 1,
        max_args: Some(1),
        aggregate: false,
    },
    FunctionSig {
        name: "TRIM",
        min_args: 1,
        max_args: Some(1),
        aggregate: false,
    },
    FunctionSig {
        name: "ABS",
        min_args: 1,
        max_args: Some(1),
        aggregate: false,
    },
    FunctionSig {
        name: "ROUND",
        min_args: 1,
        max_args: Some(2),
        aggregate: false,
    },
    FunctionSig {
        name: "COALESCE",
        min_args: 2,
        max_args: None,
        aggregate: false,
    },
    FunctionSig {
        name: "NULLIF",
        min_args: 2,
        max_args: Some(2),
        aggregate: false,
    },
    FunctionSig {
        name: "SUBSTR",
        min_args: 2,
        max_args: Some(3),
        aggregate: false,
    },
];

pub fn function_sig(name: &str) -> Option<&'static FunctionSig> {
    let upper = name.to_ascii_uppercase();
    KNOWN_FUNCTIONS.iter().find(|f| f.name == upper)
}

/// The whitelist universe: tables, columns, and callable functions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaCatalog {
    pub version: u64,
    pub tables: Vec<TableDef>,
    /// Upper-case function names.
    pub functions_allowed: BTreeSet<String>,
}

impl SchemaCatalog {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        let key = fold_case(name);
        self.tables.iter().find(|t| fold_case(&t.name) == key)
    }

    pub fn column(&self, qc: &QualifiedColumn) -> Option<&ColumnDef> {
        self.table(&qc.table)?.column(&qc.column)
    }

    /// True when some table has a column of this name.
    pub fn has_column_anywhere(&self, column: &str) -> bool {
        self.tables.iter().any(|t| t.column(column).is_some())
    }

    pub fn function_allowed(&self, name: &str) -> bool {
        self.functions_allowed.contains(&name.to_ascii_uppercase())
    }

    pub fn pii_columns(&self) -> Vec<QualifiedColumn> {
        self.tables
            .iter()
            .flat_map(|t| {
                t.columns
                    .iter()
                    .filter(|c| c.pii)
                    .map(|c| QualifiedColumn::new(&t.name, &c.name))
            })
            .collect()
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let mut seen_tables = BTreeSet::new();
        for table in &self.tables {
            if !seen_tables.insert(fold_case(&table.name)) {
                return Err(CatalogError::Duplicate {
                    kind: "table",
                    name: table.name.clone(),
                    scope: "catalog".into(),
                });
            }
            if table.columns.is_empty() {
                return Err(CatalogError::Invalid(format!(
                    "table `{}` has no columns",
                    table.name
                )));
            }
            let mut seen_cols = BTreeSet::new();
            for col in &table.columns {
                if !seen_cols.insert(fold_case(&col.name)) {
                    return Err(CatalogError::Duplicate {
                        kind: "column",
                        name: col.name.clone(),
                        scope: format!("table `{}`", table.name),
                    });
                }
            }
        }
        for f in &self.functions_allowed {
            if function_sig(f).is_none() {
                return Err(CatalogError::Invalid(format!(
                    "function `{f}` is not supported by the execution engine"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessDefault {
    pub concept: String,
    pub predicate: String,
}

/// Safety policy: forbidden topics, PII redaction, business defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyRules {
    /// Per-language terms; a trailing `*` marks a stem matched at token start.
    pub forbidden_topic_terms: BTreeMap<Language, Vec<String>>,
    pub pii_redact_columns: BTreeSet<QualifiedColumn>,
    pub business_defaults: Vec<BusinessDefault>,
    pub allowed_statement_kinds: Vec<String>,
    pub refusal_message: String,
}

pub const DEFAULT_REFUSAL_MESSAGE: &str =
    "This question concerns restricted financial information (salary, bonus, premium or compensation) and cannot be answered.";

impl PolicyRules {
    /// Returns the first forbidden term matched by any token of `text`, across
    /// all languages at once.
    pub fn match_forbidden(&self, text: &str) -> Option<String> {
        let folded = crate::text::fold_confusables(&fold_case(text));
        let tokens = crate::text::word_tokens(&folded);
        self.match_forbidden_tokens(tokens.iter().copied())
    }

    pub fn match_forbidden_tokens<'a>(
        &self,
        tokens: impl IntoIterator<Item = &'a str>,
    ) -> Option<String> {
        let tokens: Vec<&str> = tokens.into_iter().collect();
        for terms in self.forbidden_topic_terms.values() {
            for term in terms {
                let term_folded = crate::text::fold_confusables(&fold_case(term));
                let hit = match term_folded.strip_suffix('*') {
                    Some(stem) => tokens.iter().any(|t| t.starts_with(stem)),
                    None => tokens.iter().any(|t| *t == term_folded),
                };
                if hit {
                    return Some(term.clone());
                }
            }
        }
        None
    }

    pub fn is_pii(&self, qc: &QualifiedColumn) -> bool {
        self.pii_redact_columns.contains(qc)
    }
}

/// The loaded, validated document.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub schema: SchemaCatalog,
    pub policy: PolicyRules,
    pub entities: EntityTables,
    pub rules: RuleSet,
}

impl Catalog {
    pub fn version(&self) -> u64 {
        self.schema.version
    }

    /// Parses and validates catalog text.
    pub fn from_toml(text: &str) -> Result<Catalog, CatalogError> {
        let doc: CatalogDocument = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |span| line_col(text, span.start));
            CatalogError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        doc.into_catalog()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&CatalogDocument::from_catalog(self))
            .expect("catalog document serializes")
    }

    fn validate(&self) -> Result<(), CatalogError> {
        self.schema.validate()?;
        for qc in &self.policy.pii_redact_columns {
            if self.schema.column(qc).is_none() {
                return Err(CatalogError::DanglingReference {
                    context: "policy.pii_redact_columns".into(),
                    kind: "column",
                    name: qc.to_string(),
                });
            }
        }
        for lang in Language::ALL {
            if self
                .policy
                .forbidden_topic_terms
                .get(&lang)
                .is_none_or(|t| t.is_empty())
            {
                return Err(CatalogError::Invalid(format!(
                    "policy has no forbidden topic terms for language `{lang}`"
                )));
            }
        }
        if self
            .policy
            .allowed_statement_kinds
            .iter()
            .any(|k| !k.eq_ignore_ascii_case("SELECT"))
        {
            return Err(CatalogError::Invalid(
                "only SELECT may appear in allowed_statement_kinds".into(),
            ));
        }
        for default in &self.policy.business_defaults {
            let expr = crate::guard::parse_expression(&default.predicate).map_err(|e| {
                CatalogError::Invalid(format!(
                    "business default `{}` predicate: {}",
                    default.concept, e.message
                ))
            })?;
            for col in expr.column_refs() {
                let known = match &col.qualifier {
                    Some(t) => self
                        .schema
                        .column(&QualifiedColumn::new(&t.value, &col.name.value))
                        .is_some(),
                    None => self.schema.has_column_anywhere(&col.name.value),
                };
                if !known {
                    return Err(CatalogError::DanglingReference {
                        context: format!("business default `{}`", default.concept),
                        kind: "column",
                        name: col.name.value.clone(),
                    });
                }
            }
        }
        self.rules.validate(&self.schema, &self.entities)?;
        Ok(())
    }
}

/// Reads and validates a catalog document.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Catalog::from_toml(&text)
}

/// Canonical entity lookup by domain (case-insensitive, whitespace-normalized).
pub fn lookup_canonical(catalog: &Catalog, domain: EntityDomain, variant: &str) -> Option<String> {
    catalog.entities.lookup(domain, variant).map(str::to_string)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let prefix = &text[..offset.min(text.len())];
    let line = prefix.matches('\n').count() + 1;
    let column = prefix
        .rfind('\n')
        .map_or(prefix.chars().count(), |i| prefix[i + 1..].chars().count())
        + 1;
    (line, column)
}

/// Sample catalog covering the fields used throughout the test fixtures.
pub const SAMPLE_CATALOG: &str = include_str!("../../assets/catalog.toml");

pub fn sample_catalog() -> Catalog {
    Catalog::from_toml(SAMPLE_CATALOG).expect("shipped sample catalog is valid")
}

/// Builds a name → column map for a table, keyed by folded name.
pub fn column_index(table: &TableDef) -> HashMap<String, &ColumnDef> {
    table
        .columns
        .iter()
        .map(|c| (fold_case(&c.name), c))
        .collect()
}
