//! Canonical SQL text for an AST, either with literals inline or lifted into
//! positional `?` placeholders.

use super::ast::*;
use super::lexer::is_reserved;

pub(crate) enum Mode<'a> {
    Inline,
    Placeholders(&'a mut Vec<Literal>),
}

/// Renders the statement with every literal written inline.
pub fn render(ast: &SqlAst) -> String {
    let mut out = String::new();
    render_select(&ast.select, &mut Mode::Inline, &mut out);
    out
}

pub fn render_expr(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(expr, Clause::Where, &mut Mode::Inline, &mut out);
    out
}

pub(crate) fn render_select(s: &Select, mode: &mut Mode<'_>, out: &mut String) {
    out.push_str("SELECT ");
    if s.distinct {
        out.push_str("DISTINCT ");
    }
    for (i, item) in s.projection.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match item {
            SelectItem::Wildcard { .. } => out.push('*'),
            SelectItem::QualifiedWildcard { qualifier, .. } => {
                write_ident(qualifier, out);
                out.push_str(".*");
            }
            SelectItem::Expr { expr, alias, .. } => {
                write_expr(expr, Clause::Projection, mode, out);
                if let Some(alias) = alias {
                    out.push_str(" AS ");
                    write_ident(alias, out);
                }
            }
        }
    }
    out.push_str(" FROM ");
    write_table(&s.from, out);
    for join in &s.joins {
        out.push_str(match join.kind {
            JoinKind::Inner => " INNER JOIN ",
            JoinKind::Left => " LEFT JOIN ",
        });
        write_table(&join.table, out);
        out.push_str(" ON ");
        write_expr(&join.on, Clause::JoinOn, mode, out);
    }
    if let Some(e) = &s.selection {
        out.push_str(" WHERE ");
        write_expr(e, Clause::Where, mode, out);
    }
    if !s.group_by.is_empty() {
        out.push_str(" GROUP BY ");
        for (i, e) in s.group_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_expr(e, Clause::GroupBy, mode, out);
        }
    }
    if let Some(e) = &s.having {
        out.push_str(" HAVING ");
        write_expr(e, Clause::Having, mode, out);
    }
    if !s.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        for (i, item) in s.order_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_expr(&item.expr, Clause::OrderBy, mode, out);
            match item.descending {
                Some(true) => out.push_str(" DESC"),
                Some(false) => out.push_str(" ASC"),
                None => {}
            }
        }
    }
    if let Some(limit) = &s.limit {
        out.push_str(&format!(" LIMIT {}", limit.value));
    }
}

fn write_table(t: &TableRef, out: &mut String) {
    write_ident(&t.name, out);
    if let Some(alias) = &t.alias {
        out.push_str(" AS ");
        write_ident(alias, out);
    }
}

pub(crate) fn needs_quoting(name: &str) -> bool {
    let mut chars = name.chars();
    let valid_start = chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
    !(valid_start && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')) || is_reserved(name)
}

fn write_ident(ident: &Ident, out: &mut String) {
    if ident.quoted || needs_quoting(&ident.value) {
        out.push('"');
        out.push_str(&ident.value.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(&ident.value);
    }
}

pub(crate) fn write_literal(lit: &Literal, out: &mut String) {
    match lit {
        Literal::String(s) => {
            out.push('\'');
            out.push_str(&s.replace('\'', "''"));
            out.push('\'');
        }
        Literal::Number(n) => out.push_str(n),
        Literal::Boolean(true) => out.push_str("TRUE"),
        Literal::Boolean(false) => out.push_str("FALSE"),
        Literal::Null => out.push_str("NULL"),
    }
}

/// Binding strength of an expression as the parser sees it; children weaker
/// than their parent get parentheses.
fn strength(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary { op, .. } => op.precedence(),
        ExprKind::Unary {
            op: UnaryOp::Not, ..
        } => 3,
        ExprKind::InList { .. }
        | ExprKind::Like { .. }
        | ExprKind::Between { .. }
        | ExprKind::IsNull { .. } => 4,
        _ => 10,
    }
}

fn write_child(e: &Expr, min: u8, clause: Clause, mode: &mut Mode<'_>, out: &mut String) {
    if strength(e) < min {
        out.push('(');
        write_expr(e, clause, mode, out);
        out.push(')');
    } else {
        write_expr(e, clause, mode, out);
    }
}

pub(crate) fn write_expr(e: &Expr, clause: Clause, mode: &mut Mode<'_>, out: &mut String) {
    match &e.kind {
        ExprKind::Column(c) => {
            if let Some(q) = &c.qualifier {
                write_ident(q, out);
                out.push('.');
            }
            write_ident(&c.name, out);
        }
        ExprKind::Literal(lit) => match mode {
            Mode::Placeholders(params) if clause.lifts_literals() => {
                params.push(lit.clone());
                out.push('?');
            }
            _ => write_literal(lit, out),
        },
        ExprKind::Function(call) => {
            out.push_str(&call.name.value.to_ascii_uppercase());
            out.push('(');
            if call.distinct {
                out.push_str("DISTINCT ");
            }
            match &call.args {
                FunctionArgs::Star => out.push('*'),
                FunctionArgs::List(args) => {
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        write_expr(a, clause, mode, out);
                    }
                }
            }
            out.push(')');
        }
        ExprKind::Unary {
            op: UnaryOp::Neg,
            operand,
        } => {
            out.push('-');
            let mut inner = String::new();
            write_child(operand, 8, clause, mode, &mut inner);
            if inner.starts_with('-') {
                out.push(' ');
            }
            out.push_str(&inner);
        }
        ExprKind::Unary {
            op: UnaryOp::Not,
            operand,
        } => {
            out.push_str("NOT ");
            write_child(operand, 3, clause, mode, out);
        }
        ExprKind::Binary { op, left, right } => {
            let p = op.precedence();
            // Comparisons are non-associative in the grammar, so both sides
            // must bind tighter.
            let left_min = if op.is_comparison() { p + 1 } else { p };
            write_child(left, left_min, clause, mode, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_child(right, p + 1, clause, mode, out);
        }
        ExprKind::InList {
            expr,
            list,
            negated,
        } => {
            write_child(expr, 5, clause, mode, out);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            for (i, item) in list.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_child(item, 5, clause, mode, out);
            }
            out.push(')');
        }
        ExprKind::Like {
            expr,
            pattern,
            negated,
        } => {
            write_child(expr, 5, clause, mode, out);
            out.push_str(if *negated { " NOT LIKE " } else { " LIKE " });
            write_child(pattern, 5, clause, mode, out);
        }
        ExprKind::Between {
            expr,
            low,
            high,
            negated,
        } => {
            write_child(expr, 5, clause, mode, out);
            out.push_str(if *negated {
                " NOT BETWEEN "
            } else {
                " BETWEEN "
            });
            write_child(low, 5, clause, mode, out);
            out.push_str(" AND ");
            write_child(high, 5, clause, mode, out);
        }
        ExprKind::IsNull { expr, negated } => {
            write_child(expr, 5, clause, mode, out);
            out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
        }
        ExprKind::Nested(inner) => {
            out.push('(');
            write_expr(inner, clause, mode, out);
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse_sql;
    use super::*;

    #[test]
    fn canonical_rendering() {
        let ast = parse_sql("select count(*) n from employees e where e.city = 'O''Brien' limit 3")
            .unwrap();
        assert_eq!(
            render(&ast),
            "SELECT COUNT(*) AS n FROM employees AS e WHERE e.city = 'O''Brien' LIMIT 3"
        );
    }

    #[test]
    fn quoting_of_reserved_and_odd_identifiers() {
        let ast = parse_sql("SELECT \"order\", \"my col\" FROM t").unwrap();
        assert_eq!(render(&ast), "SELECT \"order\", \"my col\" FROM t");
    }

    #[test]
    fn double_negation_stays_apart() {
        let ast = parse_sql("SELECT - -1 FROM t").unwrap();
        let text = render(&ast);
        assert!(!text.contains("--"), "{text}");
        assert_eq!(parse_sql(&text).unwrap().normalized(), ast.normalized());
    }
}
