//! Permission-gated execution of guarded statements.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::SchemaCatalog;
use crate::guard::{redact_results, GuardOutcome};
use crate::store::{AnalyticsStore, StoreError};
use crate::table::ResultTable;
use crate::text::fold_case;

/// What one session may do. Table names compare case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPermission {
    pub session_token: String,
    pub allowed_tables: BTreeSet<String>,
    #[serde(default = "yes")]
    pub may_query: bool,
}

fn yes() -> bool {
    true
}

impl SessionPermission {
    /// Every catalog table, query allowed.
    pub fn full(token: impl Into<String>, schema: &SchemaCatalog) -> Self {
        Self {
            session_token: token.into(),
            allowed_tables: schema.tables.iter().map(|t| t.name.clone()).collect(),
            may_query: true,
        }
    }

    pub fn tables(token: impl Into<String>, tables: &[&str]) -> Self {
        Self {
            session_token: token.into(),
            allowed_tables: tables.iter().map(|t| t.to_string()).collect(),
            may_query: true,
        }
    }

    pub fn allows(&self, table: &str) -> bool {
        let key = fold_case(table);
        self.allowed_tables.iter().any(|t| fold_case(t) == key)
    }

    /// Names of allowed tables that the catalog does not define.
    pub fn unknown_tables(&self, schema: &SchemaCatalog) -> Vec<String> {
        self.allowed_tables
            .iter()
            .filter(|t| schema.table(t).is_none())
            .cloned()
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("access denied")]
    AccessDenied { table: String },
    #[error("statement did not pass validation")]
    NotValidated,
    #[error("execution timeout")]
    Timeout,
    #[error(transparent)]
    Store(StoreError),
}

/// Runs a guarded statement for a session. The permission check happens
/// before the store is touched. Results are capped at `row_cap` and
/// redacted per the verdict.
pub fn execute_statement(
    outcome: &GuardOutcome,
    permission: &SessionPermission,
    store: &AnalyticsStore,
    row_cap: usize,
    timeout: Duration,
) -> Result<ResultTable, ExecError> {
    let (Some(ast), Some(stmt)) = (&outcome.ast, &outcome.statement) else {
        return Err(ExecError::NotValidated);
    };
    if !outcome.verdict.is_pass() {
        return Err(ExecError::NotValidated);
    }
    if let Some(t) = ast
        .select
        .tables()
        .into_iter()
        .find(|t| !permission.allows(&t.name.value))
    {
        return Err(ExecError::AccessDenied {
            table: t.name.value.clone(),
        });
    }
    let mut table = store
        .execute(stmt, &outcome.output, row_cap, timeout)
        .map_err(|e| match e {
            StoreError::Timeout => ExecError::Timeout,
            other => ExecError::Store(other),
        })?;
    redact_results(&mut table, &outcome.verdict.redactions);
    Ok(table)
}
