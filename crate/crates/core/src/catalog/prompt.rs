use std::fmt::Write;

use super::Catalog;
use crate::text::fold_case;

/// Stable text rendering of the schema and business defaults for the model
/// prompt. Tables and columns are ordered by case-folded name.
pub fn serialize_schema_for_prompt(catalog: &Catalog) -> String {
    let schema = &catalog.schema;
    let mut out = String::new();
    let _ = writeln!(out, "-- schema version {}", schema.version);
    let mut tables: Vec<_> = schema.tables.iter().collect();
    tables.sort_by_key(|t| (fold_case(&t.name), t.name.clone()));
    for table in tables {
        let _ = writeln!(out, "TABLE {} (", table.name);
        let mut columns: Vec<_> = table.columns.iter().collect();
        columns.sort_by_key(|c| (fold_case(&c.name), c.name.clone()));
        for col in columns {
            let pii = if col.pii {
                " -- PII, redacted in results"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  {} {}{}",
                col.name,
                col.semantic_type.as_str().to_uppercase(),
                pii
            );
        }
        out.push_str(")\n");
    }
    let functions: Vec<&str> = schema
        .functions_allowed
        .iter()
        .map(String::as_str)
        .collect();
    let _ = writeln!(out, "ALLOWED FUNCTIONS: {}", functions.join(", "));
    if !catalog.policy.business_defaults.is_empty() {
        out.push_str("BUSINESS DEFAULTS:\n");
        for d in &catalog.policy.business_defaults {
            let _ = writeln!(out, "  - \"{}\" means {}", d.concept, d.predicate);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{sample_catalog, Catalog, ColumnDef, SemanticType};

    const ONE_TABLE: &str = r#"
version = 1
functions_allowed = ["COUNT"]
[[tables]]
name = "employees"
columns = [
  { name = "role_eng", type = "text" },
  { name = "Actual_working_city", type = "text" },
  { name = "employee_status", type = "boolean" },
]
[policy]
[policy.forbidden_topic_terms]
en = ["salary"]
tr = ["maaş*"]
ru = ["зарплат*"]
[[policy.business_defaults]]
concept = "active employees"
predicate = "employee_status = 'true'"
"#;

    #[test]
    fn one_table_block_with_sorted_columns() {
        let cat = Catalog::from_toml(ONE_TABLE).unwrap();
        let text = serialize_schema_for_prompt(&cat);
        assert_eq!(text.matches("TABLE ").count(), 1);
        let a = text.find("Actual_working_city").unwrap();
        let e = text.find("employee_status").unwrap();
        let r = text.find("role_eng").unwrap();
        assert!(a < e && e < r, "{text}");
    }

    #[test]
    fn deterministic_bytes() {
        let cat = sample_catalog();
        assert_eq!(
            serialize_schema_for_prompt(&cat),
            serialize_schema_for_prompt(&cat.clone())
        );
    }

    #[test]
    fn business_default_predicate_verbatim() {
        let cat = Catalog::from_toml(ONE_TABLE).unwrap();
        assert!(serialize_schema_for_prompt(&cat).contains("employee_status = 'true'"));
    }

    #[test]
    fn different_column_sets_render_differently() {
        let cat = Catalog::from_toml(ONE_TABLE).unwrap();
        let mut other = cat.clone();
        other.schema.tables[0].columns.push(ColumnDef {
            name: "department".into(),
            semantic_type: SemanticType::Text,
            pii: false,
        });
        assert_ne!(
            serialize_schema_for_prompt(&cat),
            serialize_schema_for_prompt(&other)
        );
    }
}
