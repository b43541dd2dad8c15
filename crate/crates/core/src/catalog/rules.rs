use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CatalogError, EntityDomain, EntityTables, SchemaCatalog};
use crate::text::lookup_key;

/// Rule ids the cleaning stages use when they flag a field themselves.
pub const STAGE_TRANSLATION: &str = "stage.translation";
pub const STAGE_SPELLING: &str = "stage.spelling";
pub const STAGE_ENTITY: &str = "stage.entity";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    FlagForReview,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    /// City must belong to the record's country.
    CountryCity {
        country_field: String,
        city_field: String,
        allowed: BTreeMap<String, Vec<String>>,
    },
    /// When `flag_field` equals `when`, every field in `forbidden_fields` must be empty.
    FlagExclusive {
        flag_field: String,
        when: String,
        forbidden_fields: Vec<String>,
    },
    /// A mapped role may only appear in its listed departments.
    RoleDepartment {
        role_field: String,
        department_field: String,
        allowed: BTreeMap<String, Vec<String>>,
    },
    AllowedValues {
        field: String,
        values: Vec<String>,
    },
    /// Field value must resolve in a canonical entity table.
    KnownEntity {
        field: String,
        domain: EntityDomain,
    },
    /// Raised by a cleaning stage, never evaluated by `validate_record`.
    Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDef {
    pub id: String,
    pub description: String,
    pub severity: Severity,
    #[serde(flatten)]
    pub kind: RuleKind,
}

/// Result of evaluating one rule against one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleOutcome {
    Satisfied,
    NotApplicable,
    Violated {
        fields: Vec<String>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    rules: Vec<RuleDef>,
}

fn field<'a>(fields: &'a BTreeMap<String, String>, name: &str) -> Option<&'a str> {
    let value = fields.get(name).or_else(|| {
        fields
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    })?;
    let trimmed = value.trim();
    (!trimmed.is_empty()).then_some(trimmed)
}

fn contains_folded(list: &[String], value: &str) -> bool {
    let key = lookup_key(value);
    list.iter().any(|v| lookup_key(v) == key)
}

fn find_folded<'a, V>(map: &'a BTreeMap<String, V>, key: &str) -> Option<(&'a String, &'a V)> {
    let key = lookup_key(key);
    map.iter().find(|(k, _)| lookup_key(k) == key)
}

impl RuleDef {
    pub fn evaluate(
        &self,
        fields: &BTreeMap<String, String>,
        entities: &EntityTables,
    ) -> RuleOutcome {
        match &self.kind {
            RuleKind::Stage => RuleOutcome::NotApplicable,
            RuleKind::CountryCity {
                country_field,
                city_field,
                allowed,
            } => {
                let (Some(country), Some(city)) =
                    (field(fields, country_field), field(fields, city_field))
                else {
                    return RuleOutcome::NotApplicable;
                };
                if let Some((name, cities)) = find_folded(allowed, country) {
                    if contains_folded(cities, city) {
                        RuleOutcome::Satisfied
                    } else {
                        RuleOutcome::Violated {
                            fields: vec![country_field.clone(), city_field.clone()],
                            message: format!("city `{city}` is not a known city of `{name}`"),
                        }
                    }
                } else if let Some((owner, _)) = allowed
                    .iter()
                    .find(|(_, cities)| contains_folded(cities, city))
                {
                    RuleOutcome::Violated {
                        fields: vec![country_field.clone(), city_field.clone()],
                        message: format!("city `{city}` belongs to `{owner}`, not `{country}`"),
                    }
                } else {
                    RuleOutcome::NotApplicable
                }
            }
            RuleKind::FlagExclusive {
                flag_field,
                when,
                forbidden_fields,
            } => {
                let Some(flag) = field(fields, flag_field) else {
                    return RuleOutcome::NotApplicable;
                };
                if lookup_key(flag) != lookup_key(when) {
                    return RuleOutcome::Satisfied;
                }
                let present: Vec<String> = forbidden_fields
                    .iter()
                    .filter(|f| field(fields, f).is_some())
                    .cloned()
                    .collect();
                if present.is_empty() {
                    RuleOutcome::Satisfied
                } else {
                    let mut involved = vec![flag_field.clone()];
                    involved.extend(present.iter().cloned());
                    RuleOutcome::Violated {
                        fields: involved,
                        message: format!(
                            "{flag_field} = '{flag}' but {} is set",
                            present.join(", ")
                        ),
                    }
                }
            }
            RuleKind::RoleDepartment {
                role_field,
                department_field,
                allowed,
            } => {
                let (Some(role), Some(dept)) =
                    (field(fields, role_field), field(fields, department_field))
                else {
                    return RuleOutcome::NotApplicable;
                };
                match find_folded(allowed, role) {
                    Some((_, depts)) if contains_folded(depts, dept) => RuleOutcome::Satisfied,
                    Some((name, depts)) => RuleOutcome::Violated {
                        fields: vec![role_field.clone(), department_field.clone()],
                        message: format!(
                            "role `{name}` is not allowed in department `{dept}` (allowed: {})",
                            depts.join(", ")
                        ),
                    },
                    None => RuleOutcome::NotApplicable,
                }
            }
            RuleKind::AllowedValues {
                field: name,
                values,
            } => match field(fields, name) {
                None => RuleOutcome::NotApplicable,
                Some(v) if contains_folded(values, v) => RuleOutcome::Satisfied,
                Some(v) => RuleOutcome::Violated {
                    fields: vec![name.clone()],
                    message: format!("`{v}` is not one of {}", values.join(", ")),
                },
            },
            RuleKind::KnownEntity {
                field: name,
                domain,
            } => match field(fields, name) {
                None => RuleOutcome::NotApplicable,
                Some(v) if entities.lookup(*domain, v).is_some() => RuleOutcome::Satisfied,
                Some(v) => RuleOutcome::Violated {
                    fields: vec![name.clone()],
                    message: format!("`{v}` does not resolve to a known {domain}"),
                },
            },
        }
    }

    fn referenced_fields(&self) -> Vec<&str> {
        match &self.kind {
            RuleKind::CountryCity {
                country_field,
                city_field,
                ..
            } => vec![country_field, city_field],
            RuleKind::FlagExclusive {
                flag_field,
                forbidden_fields,
                ..
            } => std::iter::once(flag_field.as_str())
                .chain(forbidden_fields.iter().map(String::as_str))
                .collect(),
            RuleKind::RoleDepartment {
                role_field,
                department_field,
                ..
            } => vec![role_field, department_field],
            RuleKind::AllowedValues { field, .. } | RuleKind::KnownEntity { field, .. } => {
                vec![field]
            }
            RuleKind::Stage => Vec::new(),
        }
    }
}

fn builtin_stage_rules() -> Vec<RuleDef> {
    [
        (
            STAGE_TRANSLATION,
            "translation provider failed; raw value kept",
        ),
        (
            STAGE_SPELLING,
            "token has no dictionary candidate within the edit-distance limit",
        ),
        (STAGE_ENTITY, "value did not match any canonical entity"),
    ]
    .into_iter()
    .map(|(id, description)| RuleDef {
        id: id.to_string(),
        description: description.to_string(),
        severity: Severity::FlagForReview,
        kind: RuleKind::Stage,
    })
    .collect()
}

impl RuleSet {
    /// Builds a rule set, adding the stage rules when the document omits them.
    pub fn new(mut rules: Vec<RuleDef>) -> Self {
        for builtin in builtin_stage_rules() {
            if !rules.iter().any(|r| r.id == builtin.id) {
                rules.push(builtin);
            }
        }
        Self { rules }
    }

    pub fn rules(&self) -> &[RuleDef] {
        &self.rules
    }

    pub fn get(&self, id: &str) -> Option<&RuleDef> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub(super) fn validate(
        &self,
        schema: &SchemaCatalog,
        _entities: &EntityTables,
    ) -> Result<(), CatalogError> {
        let mut ids = BTreeSet::new();
        for rule in &self.rules {
            if !ids.insert(rule.id.as_str()) {
                return Err(CatalogError::Duplicate {
                    kind: "rule id",
                    name: rule.id.clone(),
                    scope: "rules".into(),
                });
            }
            for f in rule.referenced_fields() {
                if !schema.has_column_anywhere(f) {
                    return Err(CatalogError::DanglingReference {
                        context: format!("rule `{}`", rule.id),
                        kind: "column",
                        name: f.to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn country_rule() -> RuleDef {
        RuleDef {
            id: "country_city".into(),
            description: String::new(),
            severity: Severity::FlagForReview,
            kind: RuleKind::CountryCity {
                country_field: "country".into(),
                city_field: "city".into(),
                allowed: BTreeMap::from([
                    ("Russia".to_string(), vec!["Moscow".to_string()]),
                    ("Turkey".to_string(), vec!["Ankara".to_string()]),
                ]),
            },
        }
    }

    #[test]
    fn country_city_outcomes() {
        let e = EntityTables::default();
        let r = country_rule();
        assert_eq!(
            r.evaluate(&rec(&[("country", "Russia"), ("city", "Moscow")]), &e),
            RuleOutcome::Satisfied
        );
        assert!(matches!(
            r.evaluate(&rec(&[("country", "Russia"), ("city", "Ankara")]), &e),
            RuleOutcome::Violated { .. }
        ));
        assert!(matches!(
            r.evaluate(&rec(&[("country", "Kazakhstan"), ("city", "Moscow")]), &e),
            RuleOutcome::Violated { .. }
        ));
        assert_eq!(
            r.evaluate(&rec(&[("country", "Kazakhstan"), ("city", "Almaty")]), &e),
            RuleOutcome::NotApplicable
        );
        assert_eq!(
            r.evaluate(&rec(&[("city", "Moscow")]), &e),
            RuleOutcome::NotApplicable
        );
    }

    #[test]
    fn stage_rules_always_present() {
        let set = RuleSet::new(Vec::new());
        assert!(set.get(STAGE_TRANSLATION).is_some());
        assert!(set.get(STAGE_SPELLING).is_some());
        assert!(set.get(STAGE_ENTITY).is_some());
    }
}
