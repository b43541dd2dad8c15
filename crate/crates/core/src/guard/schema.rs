//! Name resolution against the schema whitelist.

use serde::Serialize;

use super::ast::*;
use super::render::render_expr;
use super::{Finding, FindingCode, ValidationVerdict};
use crate::catalog::{function_sig, QualifiedColumn, SchemaCatalog, SemanticType, TableDef};
use crate::text::fold_case;

struct Scope<'a> {
    name: String,
    table: Option<&'a TableDef>,
}

struct OutputAlias {
    name: String,
    index: usize,
    aggregate: bool,
}

/// Binds every column reference in `ast` and reports whitelist violations.
/// Bindings are written into the AST so later stages can use them.
pub fn check_schema(ast: &mut SqlAst, schema: &SchemaCatalog) -> ValidationVerdict {
    let mut findings = Vec::new();
    let select = &mut ast.select;

    let mut scopes: Vec<Scope<'_>> = Vec::new();
    for t in select.tables() {
        let table = schema.table(&t.name.value);
        if table.is_none() {
            findings.push(finding(
                FindingCode::UnknownTable,
                t.name.span,
                format!("unknown table `{}`", t.name.value),
            ));
        }
        let name = fold_case(&t.scope_name().value);
        if scopes.iter().any(|s| s.name == name) {
            findings.push(finding(
                FindingCode::DuplicateTableName,
                t.scope_name().span,
                format!(
                    "table name `{}` is used more than once",
                    t.scope_name().value
                ),
            ));
        }
        scopes.push(Scope { name, table });
    }

    let aliases: Vec<OutputAlias> = select
        .projection
        .iter()
        .enumerate()
        .filter_map(|(index, item)| match item {
            SelectItem::Expr {
                expr,
                alias: Some(a),
                ..
            } => Some(OutputAlias {
                name: fold_case(&a.value),
                index,
                aggregate: contains_aggregate(expr),
            }),
            _ => None,
        })
        .collect();

    for item in &select.projection {
        if let SelectItem::QualifiedWildcard { qualifier, span } = item {
            if !scopes.iter().any(|s| s.name == fold_case(&qualifier.value)) {
                findings.push(finding(
                    FindingCode::UnknownQualifier,
                    *span,
                    format!("unknown table or alias `{}`", qualifier.value),
                ));
            }
        }
    }

    let join_count = select.joins.len();
    let mut join_index = 0;
    for (clause, expr) in select.clause_exprs_mut() {
        let visible = match clause {
            Clause::JoinOn => {
                join_index += 1;
                &scopes[..=join_index]
            }
            _ => &scopes[..],
        };
        let mut ctx = Ctx {
            schema,
            scopes: visible,
            aliases: &aliases,
            clause,
            findings: &mut findings,
        };
        ctx.resolve(expr);
        ctx.check_functions(expr, false);
    }
    debug_assert_eq!(join_index, join_count);

    if select.having.is_some() && select.group_by.is_empty() {
        let span = select.having.as_ref().map(|h| h.span).unwrap_or_default();
        findings.push(finding(
            FindingCode::HavingWithoutGroupBy,
            span,
            "HAVING requires GROUP BY".into(),
        ));
    }

    let all_tables_known = scopes.iter().all(|s| s.table.is_some());
    let output_len = if all_tables_known {
        Some(output_columns(ast, schema).len())
    } else {
        None
    };
    let select = &ast.select;
    for expr in &select.group_by {
        if let Some(n) = position(expr) {
            check_position(n, output_len, expr.span, "GROUP BY", &mut findings);
            if let Some(SelectItem::Expr { expr: target, .. }) = n
                .checked_sub(1)
                .and_then(|i| select.projection.get(i as usize))
            {
                if contains_aggregate(target) {
                    findings.push(finding(
                        FindingCode::AggregateMisuse,
                        expr.span,
                        format!("GROUP BY position {n} refers to an aggregate"),
                    ));
                }
            }
        }
        if let ExprKind::Column(ColumnRef {
            binding: Binding::OutputAlias(i),
            name,
            ..
        }) = &expr.kind
        {
            if aliases.iter().any(|a| a.index == *i && a.aggregate) {
                findings.push(finding(
                    FindingCode::AggregateMisuse,
                    expr.span,
                    format!("GROUP BY alias `{}` refers to an aggregate", name.value),
                ));
            }
        }
    }
    for item in &select.order_by {
        if let Some(n) = position(&item.expr) {
            check_position(n, output_len, item.expr.span, "ORDER BY", &mut findings);
        }
    }

    ValidationVerdict::from_findings(findings)
}

fn finding(code: FindingCode, span: Span, message: String) -> Finding {
    Finding {
        code,
        span,
        message,
    }
}

/// Integer literal used as a 1-based output position.
fn position(expr: &Expr) -> Option<u64> {
    match &expr.kind {
        ExprKind::Literal(lit @ Literal::Number(n)) if lit.is_integer() => {
            Some(n.parse().unwrap_or(u64::MAX))
        }
        _ => None,
    }
}

fn check_position(
    n: u64,
    output_len: Option<usize>,
    span: Span,
    clause: &str,
    findings: &mut Vec<Finding>,
) {
    let Some(len) = output_len else { return };
    if n == 0 || n > len as u64 {
        findings.push(finding(
            FindingCode::PositionOutOfRange,
            span,
            format!("{clause} position {n} is outside the {len} output columns"),
        ));
    }
}

/// Aggregate call: a known aggregate with exactly one argument (MIN/MAX with
/// more arguments are scalar).
pub(crate) fn is_aggregate_call(call: &FunctionCall) -> bool {
    function_sig(&call.name.value).is_some_and(|sig| sig.aggregate && call.args.len() == 1)
}

pub(crate) fn contains_aggregate(expr: &Expr) -> bool {
    let mut found = false;
    expr.walk(&mut |e| {
        if let ExprKind::Function(call) = &e.kind {
            found |= is_aggregate_call(call);
        }
    });
    found
}

struct Ctx<'a, 'b> {
    schema: &'a SchemaCatalog,
    scopes: &'b [Scope<'a>],
    aliases: &'b [OutputAlias],
    clause: Clause,
    findings: &'b mut Vec<Finding>,
}

impl Ctx<'_, '_> {
    fn push(&mut self, code: FindingCode, span: Span, message: String) {
        self.findings.push(finding(code, span, message));
    }

    fn alias_visible(&self) -> bool {
        matches!(
            self.clause,
            Clause::GroupBy | Clause::Having | Clause::OrderBy
        )
    }

    fn find_alias(&self, name: &str) -> Option<usize> {
        let key = fold_case(name);
        self.aliases.iter().find(|a| a.name == key).map(|a| a.index)
    }

    fn resolve(&mut self, expr: &mut Expr) {
        let span = expr.span;
        if let ExprKind::Column(col) = &mut expr.kind {
            col.binding = self.bind(col, span);
            return;
        }
        match &mut expr.kind {
            ExprKind::Column(_) | ExprKind::Literal(_) => {}
            ExprKind::Function(call) => {
                if let FunctionArgs::List(args) = &mut call.args {
                    args.iter_mut().for_each(|a| self.resolve(a));
                }
            }
            ExprKind::Unary { operand, .. } => self.resolve(operand),
            ExprKind::Binary { left, right, .. } => {
                self.resolve(left);
                self.resolve(right);
            }
            ExprKind::InList { expr, list, .. } => {
                self.resolve(expr);
                list.iter_mut().for_each(|e| self.resolve(e));
            }
            ExprKind::Like { expr, pattern, .. } => {
                self.resolve(expr);
                self.resolve(pattern);
            }
            ExprKind::Between {
                expr, low, high, ..
            } => {
                self.resolve(expr);
                self.resolve(low);
                self.resolve(high);
            }
            ExprKind::IsNull { expr, .. } => self.resolve(expr),
            ExprKind::Nested(inner) => self.resolve(inner),
        }
    }

    fn bind(&mut self, col: &ColumnRef, span: Span) -> Binding {
        if let Some(q) = &col.qualifier {
            let key = fold_case(&q.value);
            let Some(scope) = self.scopes.iter().find(|s| s.name == key) else {
                self.push(
                    FindingCode::UnknownQualifier,
                    q.span,
                    format!("unknown table or alias `{}`", q.value),
                );
                return Binding::Unresolved;
            };
            let Some(table) = scope.table else {
                return Binding::Unresolved;
            };
            return match table.column(&col.name.value) {
                Some(c) => Binding::Column {
                    table: fold_case(&table.name),
                    column: fold_case(&c.name),
                },
                None => {
                    self.push(
                        FindingCode::UnknownColumn,
                        span,
                        format!("unknown column `{}.{}`", q.value, col.name.value),
                    );
                    Binding::Unresolved
                }
            };
        }

        let name = &col.name.value;
        if self.clause == Clause::OrderBy {
            if let Some(i) = self.find_alias(name) {
                return Binding::OutputAlias(i);
            }
        }
        let matches: Vec<(&TableDef, &str)> = self
            .scopes
            .iter()
            .filter_map(|s| {
                s.table
                    .and_then(|t| t.column(name).map(|c| (t, c.name.as_str())))
            })
            .collect();
        match matches.as_slice() {
            [(table, column)] => Binding::Column {
                table: fold_case(&table.name),
                column: fold_case(column),
            },
            [] => {
                if self.alias_visible() {
                    if let Some(i) = self.find_alias(name) {
                        return Binding::OutputAlias(i);
                    }
                }
                if self.scopes.iter().all(|s| s.table.is_some()) {
                    let hint = if self.find_alias(name).is_some() {
                        " (output aliases are only visible in GROUP BY, HAVING and ORDER BY)"
                    } else {
                        ""
                    };
                    self.push(
                        FindingCode::UnknownColumn,
                        span,
                        format!("unknown column `{name}`{hint}"),
                    );
                }
                Binding::Unresolved
            }
            _ => {
                let tables: Vec<&str> = matches.iter().map(|(t, _)| t.name.as_str()).collect();
                self.push(
                    FindingCode::AmbiguousColumn,
                    span,
                    format!(
                        "column `{name}` is ambiguous between {}",
                        tables.join(" and ")
                    ),
                );
                Binding::Unresolved
            }
        }
    }

    fn check_functions(&mut self, expr: &Expr, inside_aggregate: bool) {
        let mut nested_in_aggregate = inside_aggregate;
        if let ExprKind::Function(call) = &expr.kind {
            let name = &call.name.value;
            match function_sig(name).filter(|_| self.schema.function_allowed(name)) {
                None => self.push(
                    FindingCode::FunctionNotAllowed,
                    call.name.span,
                    format!("function `{}` is not allowed", name.to_ascii_uppercase()),
                ),
                Some(sig) => {
                    let n = call.args.len();
                    let star_ok = !matches!(call.args, FunctionArgs::Star) || sig.name == "COUNT";
                    let distinct_ok = !call.distinct
                        || (sig.aggregate && n == 1 && !matches!(call.args, FunctionArgs::Star));
                    if n < sig.min_args
                        || sig.max_args.is_some_and(|m| n > m)
                        || !star_ok
                        || !distinct_ok
                    {
                        self.push(
                            FindingCode::WrongArity,
                            expr.span,
                            format!(
                                "invalid arguments for {}: `{}`",
                                sig.name,
                                render_expr(expr)
                            ),
                        );
                    }
                    if is_aggregate_call(call) {
                        if inside_aggregate {
                            self.push(
                                FindingCode::AggregateMisuse,
                                expr.span,
                                "aggregate calls cannot be nested".into(),
                            );
                        } else if matches!(
                            self.clause,
                            Clause::Where | Clause::JoinOn | Clause::GroupBy
                        ) {
                            let clause = match self.clause {
                                Clause::Where => "WHERE",
                                Clause::JoinOn => "ON",
                                _ => "GROUP BY",
                            };
                            self.push(
                                FindingCode::AggregateMisuse,
                                expr.span,
                                format!("aggregate `{}` is not allowed in {clause}", sig.name),
                            );
                        }
                        nested_in_aggregate = true;
                    }
                }
            }
        }
        for child in expr.children() {
            self.check_functions(child, nested_in_aggregate);
        }
    }
}

/// One column of the statement's result, in output order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputColumn {
    pub label: String,
    pub semantic_type: SemanticType,
    /// Catalog column the values come from, when the output is a bare column.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Catalog columns referenced anywhere in the output expression, except
    /// inside COUNT.
    #[serde(skip)]
    pub exposed: Vec<QualifiedColumn>,
}

/// Output columns with `*` expanded in catalog column order. Expects a
/// bound AST; unknown tables contribute nothing.
pub fn output_columns(ast: &SqlAst, schema: &SchemaCatalog) -> Vec<OutputColumn> {
    let select = &ast.select;
    let scopes: Vec<(String, Option<&TableDef>)> = select
        .tables()
        .into_iter()
        .map(|t| {
            (
                fold_case(&t.scope_name().value),
                schema.table(&t.name.value),
            )
        })
        .collect();
    let expand = |table: &TableDef, out: &mut Vec<OutputColumn>| {
        for c in &table.columns {
            let qc = QualifiedColumn::new(&table.name, &c.name);
            out.push(OutputColumn {
                label: c.name.clone(),
                semantic_type: c.semantic_type,
                source: Some(qc.to_string()),
                exposed: vec![qc],
            });
        }
    };
    let mut out = Vec::new();
    for item in &select.projection {
        match item {
            SelectItem::Wildcard { .. } => {
                for (_, t) in &scopes {
                    if let Some(t) = t {
                        expand(t, &mut out);
                    }
                }
            }
            SelectItem::QualifiedWildcard { qualifier, .. } => {
                let key = fold_case(&qualifier.value);
                if let Some((_, Some(t))) = scopes.iter().find(|(n, _)| *n == key) {
                    expand(t, &mut out);
                }
            }
            SelectItem::Expr { expr, alias, .. } => {
                let (source, label) = match &expr.kind {
                    ExprKind::Column(c) => {
                        let source = match &c.binding {
                            Binding::Column { table, column } => Some(format!("{table}.{column}")),
                            _ => None,
                        };
                        (source, c.name.value.clone())
                    }
                    _ => (None, render_expr(expr)),
                };
                out.push(OutputColumn {
                    label: alias.as_ref().map_or(label, |a| a.value.clone()),
                    semantic_type: infer_type(expr, schema),
                    source,
                    exposed: exposed_columns(expr),
                });
            }
        }
    }
    out
}

fn exposed_columns(expr: &Expr) -> Vec<QualifiedColumn> {
    let mut out = Vec::new();
    fn visit(e: &Expr, out: &mut Vec<QualifiedColumn>) {
        match &e.kind {
            ExprKind::Function(call) if call.name.value.eq_ignore_ascii_case("COUNT") => {}
            ExprKind::Column(ColumnRef {
                binding: Binding::Column { table, column },
                ..
            }) => {
                let qc = QualifiedColumn::new(table, column);
                if !out.contains(&qc) {
                    out.push(qc);
                }
            }
            _ => e.children().into_iter().for_each(|c| visit(c, out)),
        }
    }
    visit(expr, &mut out);
    out
}

fn infer_type(expr: &Expr, schema: &SchemaCatalog) -> SemanticType {
    let arg_type = |args: &FunctionArgs| match args {
        FunctionArgs::List(a) if !a.is_empty() => infer_type(&a[0], schema),
        _ => SemanticType::Integer,
    };
    match &expr.kind {
        ExprKind::Column(c) => match &c.binding {
            Binding::Column { table, column } => schema
                .column(&QualifiedColumn::new(table, column))
                .map_or(SemanticType::Text, |c| c.semantic_type),
            _ => SemanticType::Text,
        },
        ExprKind::Literal(Literal::Number(n)) if n.contains('.') => SemanticType::Decimal,
        ExprKind::Literal(Literal::Number(_)) => SemanticType::Integer,
        ExprKind::Literal(Literal::Boolean(_)) => SemanticType::Boolean,
        ExprKind::Literal(_) => SemanticType::Text,
        ExprKind::Function(call) => match call.name.value.to_ascii_uppercase().as_str() {
            "COUNT" | "LENGTH" => SemanticType::Integer,
            "AVG" | "ROUND" => SemanticType::Decimal,
            "LOWER" | "UPPER" | "TRIM" | "SUBSTR" => SemanticType::Text,
            "SUM" => match arg_type(&call.args) {
                SemanticType::Integer => SemanticType::Integer,
                _ => SemanticType::Decimal,
            },
            _ => arg_type(&call.args),
        },
        ExprKind::Unary {
            op: UnaryOp::Neg,
            operand,
        } => infer_type(operand, schema),
        ExprKind::Binary {
            op: BinaryOp::Concat,
            ..
        } => SemanticType::Text,
        ExprKind::Binary {
            op: BinaryOp::Plus | BinaryOp::Minus | BinaryOp::Mul | BinaryOp::Div | BinaryOp::Mod,
            left,
            right,
        } => {
            let (l, r) = (infer_type(left, schema), infer_type(right, schema));
            if l == SemanticType::Decimal || r == SemanticType::Decimal {
                SemanticType::Decimal
            } else {
                SemanticType::Integer
            }
        }
        ExprKind::Nested(inner) => infer_type(inner, schema),
        _ => SemanticType::Integer,
    }
}
