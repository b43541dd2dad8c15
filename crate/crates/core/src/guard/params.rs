//! Literal lifting: the executed statement never carries user-controlled
//! values inline.

use serde::Serialize;

use super::ast::*;
use super::render::{render_select, Mode};
use super::GuardError;
use crate::catalog::{QualifiedColumn, SchemaCatalog, SemanticType};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ParamValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub value: ParamValue,
    /// Type of the column the literal is compared against, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic_type: Option<SemanticType>,
}

/// SQL text with positional `?` placeholders and the values to bind, in
/// left-to-right order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterizedStatement {
    pub sql: String,
    pub params: Vec<Param>,
}

/// Lifts literals in the projection, ON, WHERE and HAVING clauses into
/// parameters. GROUP BY and ORDER BY literals stay inline because integers
/// there are output positions.
pub fn parameterize(
    ast: &SqlAst,
    schema: &SchemaCatalog,
) -> Result<ParameterizedStatement, GuardError> {
    let mut literals = Vec::new();
    let mut sql = String::new();
    render_select(
        &ast.select,
        &mut Mode::Placeholders(&mut literals),
        &mut sql,
    );

    let mut contexts = Vec::new();
    for (clause, expr) in ast.select.clause_exprs() {
        if clause.lifts_literals() {
            collect_contexts(expr, None, schema, &mut contexts);
        }
    }
    debug_assert_eq!(contexts.len(), literals.len());

    let params = literals
        .iter()
        .zip(contexts)
        .map(|(lit, ty)| {
            Ok(Param {
                value: convert(lit, ty)?,
                semantic_type: ty,
            })
        })
        .collect::<Result<Vec<_>, GuardError>>()?;
    Ok(ParameterizedStatement { sql, params })
}

fn column_type(expr: &Expr, schema: &SchemaCatalog) -> Option<SemanticType> {
    let inner = match &expr.kind {
        ExprKind::Nested(e) => e,
        _ => expr,
    };
    match &inner.kind {
        ExprKind::Column(ColumnRef {
            binding: Binding::Column { table, column },
            ..
        }) => schema
            .column(&QualifiedColumn::new(table, column))
            .map(|c| c.semantic_type),
        _ => None,
    }
}

/// Records, for each literal in render order, the type of the column it is
/// compared with.
fn collect_contexts(
    expr: &Expr,
    ctx: Option<SemanticType>,
    schema: &SchemaCatalog,
    out: &mut Vec<Option<SemanticType>>,
) {
    match &expr.kind {
        ExprKind::Literal(_) => out.push(ctx),
        ExprKind::Binary { op, left, right } if op.is_comparison() => {
            let lt = column_type(left, schema);
            let rt = column_type(right, schema);
            collect_contexts(left, rt, schema, out);
            collect_contexts(right, lt, schema, out);
        }
        ExprKind::InList { expr: e, list, .. } => {
            let t = column_type(e, schema);
            collect_contexts(e, None, schema, out);
            list.iter()
                .for_each(|x| collect_contexts(x, t, schema, out));
        }
        ExprKind::Between {
            expr: e, low, high, ..
        } => {
            let t = column_type(e, schema);
            collect_contexts(e, None, schema, out);
            collect_contexts(low, t, schema, out);
            collect_contexts(high, t, schema, out);
        }
        ExprKind::Like {
            expr: e, pattern, ..
        } => {
            collect_contexts(e, None, schema, out);
            collect_contexts(pattern, Some(SemanticType::Text), schema, out);
        }
        ExprKind::Nested(inner) => collect_contexts(inner, ctx, schema, out),
        ExprKind::Unary {
            op: UnaryOp::Neg,
            operand,
        } => collect_contexts(operand, ctx, schema, out),
        _ => expr
            .children()
            .into_iter()
            .for_each(|c| collect_contexts(c, None, schema, out)),
    }
}

fn convert(lit: &Literal, ctx: Option<SemanticType>) -> Result<ParamValue, GuardError> {
    Ok(match lit {
        Literal::Null => ParamValue::Null,
        Literal::String(s) => ParamValue::Text(s.clone()),
        // Boolean columns are stored as 'true'/'false' text.
        Literal::Boolean(b) if ctx == Some(SemanticType::Boolean) => {
            ParamValue::Text(b.to_string())
        }
        Literal::Boolean(b) => ParamValue::Integer(i64::from(*b)),
        Literal::Number(n) if lit.is_integer() => ParamValue::Integer(
            n.parse()
                .map_err(|_| GuardError::UnsupportedLiteral(n.clone()))?,
        ),
        Literal::Number(n) => {
            let v: f64 = n
                .parse()
                .map_err(|_| GuardError::UnsupportedLiteral(n.clone()))?;
            if !v.is_finite() {
                return Err(GuardError::UnsupportedLiteral(n.clone()));
            }
            ParamValue::Real(v)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::sample_catalog;
    use crate::guard::{check_schema, parse_sql};

    fn lift(sql: &str) -> Result<ParameterizedStatement, GuardError> {
        let cat = sample_catalog();
        let mut ast = parse_sql(sql).unwrap();
        check_schema(&mut ast, &cat.schema);
        parameterize(&ast, &cat.schema)
    }

    #[test]
    fn lifts_in_source_order() {
        let p = lift(
            "SELECT role_eng, ROUND(AVG(years_experience), 1) FROM employees \
             WHERE actual_working_city = 'Moscow' AND years_experience BETWEEN 2 AND 10 \
             GROUP BY role_eng HAVING COUNT(*) > 5 ORDER BY 2 DESC LIMIT 10",
        )
        .unwrap();
        assert_eq!(
            p.sql,
            "SELECT role_eng, ROUND(AVG(years_experience), ?) FROM employees \
             WHERE actual_working_city = ? AND years_experience BETWEEN ? AND ? \
             GROUP BY role_eng HAVING COUNT(*) > ? ORDER BY 2 DESC LIMIT 10"
        );
        let values: Vec<&ParamValue> = p.params.iter().map(|p| &p.value).collect();
        assert_eq!(
            values,
            [
                &ParamValue::Integer(1),
                &ParamValue::Text("Moscow".into()),
                &ParamValue::Integer(2),
                &ParamValue::Integer(10),
                &ParamValue::Integer(5),
            ]
        );
        assert_eq!(p.params[1].semantic_type, Some(SemanticType::Text));
        assert_eq!(p.params[2].semantic_type, Some(SemanticType::Integer));
    }

    #[test]
    fn boolean_literals_follow_column_storage() {
        let p =
            lift("SELECT COUNT(*) FROM employees WHERE is_payroll = TRUE AND 1 = TRUE").unwrap();
        assert_eq!(p.params[0].value, ParamValue::Text("true".into()));
        assert_eq!(p.params[2].value, ParamValue::Integer(1));
    }

    #[test]
    fn no_quote_survives_in_sql() {
        let p =
            lift("SELECT full_name FROM employees WHERE full_name = 'x'' OR ''1''=''1'").unwrap();
        assert!(!p.sql.contains('\''), "{}", p.sql);
        assert_eq!(p.params[0].value, ParamValue::Text("x' OR '1'='1".into()));
    }

    #[test]
    fn unsupported_literals() {
        assert_eq!(
            lift("SELECT 1 FROM employees WHERE years_experience > 99999999999999999999"),
            Err(GuardError::UnsupportedLiteral(
                "99999999999999999999".into()
            ))
        );
        let huge = format!(
            "SELECT 1 FROM employees WHERE years_experience > 1{}.5",
            "0".repeat(400)
        );
        assert!(matches!(
            lift(&huge),
            Err(GuardError::UnsupportedLiteral(_))
        ));
    }
}
