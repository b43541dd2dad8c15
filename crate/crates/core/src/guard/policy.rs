//! Safety policy: forbidden financial topics and PII redaction planning.

use super::ast::*;
use super::redact::PlannedRedaction;
use super::schema::output_columns;
use super::{Finding, FindingCode, ValidationVerdict};
use crate::catalog::{Catalog, QualifiedColumn};
use crate::text::identifier_tokens;

/// Checks a bound AST (see [`super::check_schema`]) against the policy.
///
/// Forbidden terms are searched in the originating question, in every
/// identifier (column, table, alias) split into words, and in string
/// literals. Outputs that carry PII values are planned for redaction.
pub fn check_policy(ast: &SqlAst, catalog: &Catalog, question: Option<&str>) -> ValidationVerdict {
    let policy = &catalog.policy;
    let select = &ast.select;
    let mut findings = Vec::new();

    if let Some(term) = question.and_then(|q| policy.match_forbidden(q)) {
        findings.push(Finding {
            code: FindingCode::ForbiddenQuestion,
            span: select.span,
            message: format!("question mentions restricted topic `{term}`"),
        });
    }

    let check_ident =
        |ident: &Ident, code: FindingCode, what: &str, findings: &mut Vec<Finding>| {
            let tokens = identifier_tokens(&ident.value);
            if let Some(term) = policy.match_forbidden_tokens(tokens.iter().map(String::as_str)) {
                findings.push(Finding {
                    code,
                    span: ident.span,
                    message: format!("{what} `{}` matches restricted topic `{term}`", ident.value),
                });
            }
        };

    for t in select.tables() {
        check_ident(&t.name, FindingCode::ForbiddenTerm, "table", &mut findings);
        if let Some(a) = &t.alias {
            check_ident(a, FindingCode::ForbiddenTerm, "alias", &mut findings);
        }
    }
    for item in &select.projection {
        if let SelectItem::Expr { alias: Some(a), .. } = item {
            check_ident(a, FindingCode::ForbiddenTerm, "alias", &mut findings);
        }
    }
    for (_, expr) in select.clause_exprs() {
        expr.walk(&mut |e| match &e.kind {
            ExprKind::Column(c) => {
                let code = match c.binding {
                    Binding::OutputAlias(_) => FindingCode::ForbiddenTerm,
                    _ => FindingCode::ForbiddenColumn,
                };
                check_ident(&c.name, code, "column", &mut findings);
            }
            ExprKind::Literal(Literal::String(s)) => {
                if let Some(term) = policy.match_forbidden(s) {
                    findings.push(Finding {
                        code: FindingCode::ForbiddenTerm,
                        span: e.span,
                        message: format!("literal matches restricted topic `{term}`"),
                    });
                }
            }
            _ => {}
        });
    }
    findings.sort_by_key(|f| (f.span.start, f.span.end));

    let mut verdict = ValidationVerdict::from_findings(findings);
    verdict.redactions = plan_redactions(ast, catalog);
    verdict
}

fn plan_redactions(ast: &SqlAst, catalog: &Catalog) -> Vec<PlannedRedaction> {
    let pii = |qc: &QualifiedColumn| {
        catalog.policy.is_pii(qc) || catalog.schema.column(qc).is_some_and(|c| c.pii)
    };
    output_columns(ast, &catalog.schema)
        .into_iter()
        .enumerate()
        .filter_map(|(index, col)| {
            let hit = col.exposed.iter().find(|qc| pii(qc))?;
            Some(PlannedRedaction {
                output_index: index,
                label: col.label,
                column: hit.to_string(),
            })
        })
        .collect()
}
