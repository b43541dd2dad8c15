//! SQL guard: parses generated SQL into a SELECT-only AST, checks it against
//! the schema whitelist and safety policy, and produces a parameterized
//! statement for execution.
//!
//! Every statement passes three gates in order. Syntax failures stop the
//! pipeline immediately; schema and policy findings are collected together
//! into one verdict, schema findings first.

pub mod ast;
mod lexer;
mod params;
mod parser;
mod policy;
mod redact;
mod render;
mod schema;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;

pub use ast::{Span, SqlAst};
pub use params::{parameterize, Param, ParamValue, ParameterizedStatement};
pub use parser::{parse_expression, parse_sql};
pub use policy::check_policy;
pub use redact::{redact_results, PlannedRedaction, REDACTION_MARKER};
pub use render::{render, render_expr};
pub use schema::{check_schema, output_columns, OutputColumn};

/// Parse failure with the byte range it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{message} at {}..{}", span.start, span.end)]
pub struct SyntaxError {
    pub message: String,
    pub span: Span,
}

impl SyntaxError {
    pub fn new(message: impl Into<String>, span: Span) -> Self {
        Self {
            message: message.into(),
            span,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GuardError {
    #[error("unsupported literal `{0}`")]
    UnsupportedLiteral(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    RejectSyntax,
    RejectSchema,
    RejectPolicy,
}

impl VerdictStatus {
    /// Process exit code used by `guard check`.
    pub fn exit_code(self) -> i32 {
        match self {
            VerdictStatus::Pass => 0,
            VerdictStatus::RejectSyntax => 1,
            VerdictStatus::RejectSchema => 2,
            VerdictStatus::RejectPolicy => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictStatus::Pass => "pass",
            VerdictStatus::RejectSyntax => "reject_syntax",
            VerdictStatus::RejectSchema => "reject_schema",
            VerdictStatus::RejectPolicy => "reject_policy",
        }
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingCode {
    Syntax,
    UnknownTable,
    UnknownColumn,
    UnknownQualifier,
    AmbiguousColumn,
    DuplicateTableName,
    FunctionNotAllowed,
    WrongArity,
    AggregateMisuse,
    HavingWithoutGroupBy,
    PositionOutOfRange,
    ForbiddenColumn,
    ForbiddenTerm,
    ForbiddenQuestion,
}

impl FindingCode {
    pub fn status(self) -> VerdictStatus {
        match self {
            FindingCode::Syntax => VerdictStatus::RejectSyntax,
            FindingCode::ForbiddenColumn
            | FindingCode::ForbiddenTerm
            | FindingCode::ForbiddenQuestion => VerdictStatus::RejectPolicy,
            _ => VerdictStatus::RejectSchema,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub code: FindingCode,
    pub span: Span,
    pub message: String,
}

/// Outcome of guarding one statement. `status == Pass` exactly when
/// `findings` is empty. Redactions may accompany a pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationVerdict {
    pub status: VerdictStatus,
    pub findings: Vec<Finding>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub redactions: Vec<PlannedRedaction>,
}

impl ValidationVerdict {
    pub fn pass() -> Self {
        Self {
            status: VerdictStatus::Pass,
            findings: Vec::new(),
            redactions: Vec::new(),
        }
    }

    pub fn from_findings(findings: Vec<Finding>) -> Self {
        let status = if findings
            .iter()
            .any(|f| f.code.status() == VerdictStatus::RejectSchema)
        {
            VerdictStatus::RejectSchema
        } else if findings
            .iter()
            .any(|f| f.code.status() == VerdictStatus::RejectPolicy)
        {
            VerdictStatus::RejectPolicy
        } else if findings.is_empty() {
            VerdictStatus::Pass
        } else {
            VerdictStatus::RejectSyntax
        };
        Self {
            status,
            findings,
            redactions: Vec::new(),
        }
    }

    pub fn syntax(err: &SyntaxError) -> Self {
        Self::from_findings(vec![Finding {
            code: FindingCode::Syntax,
            span: err.span,
            message: err.message.clone(),
        }])
    }

    pub fn is_pass(&self) -> bool {
        self.status == VerdictStatus::Pass
    }

    /// One-line summary for retry prompts and logs.
    pub fn summary(&self) -> String {
        if self.findings.is_empty() {
            return self.status.to_string();
        }
        let parts: Vec<String> = self.findings.iter().map(|f| f.message.clone()).collect();
        format!("{}: {}", self.status, parts.join("; "))
    }

    /// Stable JSON rendering for snapshots and the CLI.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

/// Everything the pipeline needs from guarding one statement.
#[derive(Debug, Clone)]
pub struct GuardOutcome {
    pub verdict: ValidationVerdict,
    pub ast: Option<SqlAst>,
    pub statement: Option<ParameterizedStatement>,
    pub output: Vec<OutputColumn>,
}

/// Facade running all guard stages against one catalog.
#[derive(Debug, Clone, Copy)]
pub struct Guard<'a> {
    catalog: &'a Catalog,
}

impl<'a> Guard<'a> {
    pub fn new(catalog: &'a Catalog) -> Self {
        Self { catalog }
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    /// Parse, bind, policy-check and parameterize. `question` is the
    /// originating natural-language question when there is one.
    pub fn check(&self, sql: &str, question: Option<&str>) -> GuardOutcome {
        let mut ast = match parse_sql(sql) {
            Ok(ast) => ast,
            Err(err) => {
                return GuardOutcome {
                    verdict: ValidationVerdict::syntax(&err),
                    ast: None,
                    statement: None,
                    output: Vec::new(),
                }
            }
        };
        let schema_verdict = check_schema(&mut ast, &self.catalog.schema);
        let policy_verdict = check_policy(&ast, self.catalog, question);
        let mut findings = schema_verdict.findings;
        findings.extend(policy_verdict.findings);
        let mut verdict = ValidationVerdict::from_findings(findings);
        verdict.redactions = policy_verdict.redactions;
        let output = output_columns(&ast, &self.catalog.schema);
        let statement = if verdict.is_pass() {
            match parameterize(&ast, &self.catalog.schema) {
                Ok(stmt) => Some(stmt),
                Err(err) => {
                    verdict = ValidationVerdict::from_findings(vec![Finding {
                        code: FindingCode::Syntax,
                        span: ast.select.span,
                        message: err.to_string(),
                    }]);
                    None
                }
            }
        } else {
            None
        };
        GuardOutcome {
            verdict,
            ast: Some(ast),
            statement,
            output,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::sample_catalog;

    #[test]
    fn exit_codes() {
        let cat = sample_catalog();
        let g = Guard::new(&cat);
        assert_eq!(
            g.check("SELECT COUNT(*) FROM employees", None)
                .verdict
                .status
                .exit_code(),
            0
        );
        assert_eq!(
            g.check("DELETE FROM employees", None)
                .verdict
                .status
                .exit_code(),
            1
        );
        assert_eq!(
            g.check("SELECT salary_amount FROM employees", None)
                .verdict
                .status
                .exit_code(),
            2
        );
        assert_eq!(
            g.check(
                "SELECT COUNT(*) FROM employees WHERE department = 'bonus'",
                None
            )
            .verdict
            .status
            .exit_code(),
            3
        );
    }

    #[test]
    fn schema_findings_reported_before_policy() {
        let cat = sample_catalog();
        let v = Guard::new(&cat)
            .check(
                "SELECT salary_amount FROM employees WHERE role_eng = 'bonus'",
                None,
            )
            .verdict;
        assert_eq!(v.status, VerdictStatus::RejectSchema);
        assert!(v
            .findings
            .iter()
            .any(|f| f.code == FindingCode::ForbiddenTerm));
        assert_eq!(v.findings[0].code, FindingCode::UnknownColumn);
    }

    #[test]
    fn verdict_json_is_stable() {
        let cat = sample_catalog();
        let v = Guard::new(&cat)
            .check("SELECT nope FROM employees", None)
            .verdict;
        assert_eq!(
            v.to_json(),
            r#"{
  "status": "reject_schema",
  "findings": [
    {
      "code": "unknown_column",
      "span": {
        "start": 7,
        "end": 11
      },
      "message": "unknown column `nope`"
    }
  ]
}"#
        );
    }
}
