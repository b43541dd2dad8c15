//! Recursive-descent parser for the SELECT-only dialect.

use super::ast::*;
use super::lexer::{tokenize, Keyword, Token, TokenKind};
use super::SyntaxError;

const MAX_DEPTH: usize = 64;

/// Parses exactly one SELECT statement (an optional trailing `;` is allowed).
pub fn parse_sql(text: &str) -> Result<SqlAst, SyntaxError> {
    if text.trim().is_empty() {
        return Err(SyntaxError::new(
            "empty statement",
            Span::new(0, text.len()),
        ));
    }
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let select = parser.parse_statement()?;
    Ok(SqlAst {
        kind: StatementKind::Select,
        select,
    })
}

/// Parses a standalone boolean expression such as a business-rule predicate.
pub fn parse_expression(text: &str) -> Result<Expr, SyntaxError> {
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    let expr = parser.parse_expr()?;
    parser.expect_eof()?;
    Ok(expr)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &TokenKind {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].kind
    }

    fn advance(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn prev_end(&self) -> usize {
        if self.pos == 0 {
            0
        } else {
            self.tokens[self.pos - 1].span.end
        }
    }

    fn at_keyword(&self, kw: Keyword) -> bool {
        self.peek().kind == TokenKind::Keyword(kw)
    }

    fn eat_keyword(&mut self, kw: Keyword) -> bool {
        if self.at_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if &self.peek().kind == kind {
            self.advance();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, expected: &str) -> SyntaxError {
        let tok = self.peek();
        let found = match &tok.kind {
            TokenKind::Eof => "end of input".to_string(),
            TokenKind::Unsupported(word) => {
                return SyntaxError::new(
                    format!("{word} is not supported; only single SELECT statements are accepted"),
                    tok.span,
                )
            }
            TokenKind::Semicolon => {
                return SyntaxError::new("multiple statements are not allowed", tok.span);
            }
            other => format!("{other:?}"),
        };
        SyntaxError::new(format!("expected {expected}, found {found}"), tok.span)
    }

    fn expect_keyword(&mut self, kw: Keyword) -> Result<Span, SyntaxError> {
        if self.at_keyword(kw) {
            Ok(self.advance().span)
        } else {
            Err(self.unexpected(&format!("{kw:?}").to_uppercase()))
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<Span, SyntaxError> {
        if self.peek().kind == kind {
            Ok(self.advance().span)
        } else {
            Err(self.unexpected(what))
        }
    }

    fn expect_eof(&mut self) -> Result<(), SyntaxError> {
        if matches!(self.peek().kind, TokenKind::Eof) {
            Ok(())
        } else {
            Err(self.unexpected("end of input"))
        }
    }

    fn enter(&mut self) -> Result<(), SyntaxError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(SyntaxError::new(
                "expression nesting too deep",
                self.peek().span,
            ))
        } else {
            Ok(())
        }
    }

    fn parse_statement(&mut self) -> Result<Select, SyntaxError> {
        if !self.at_keyword(Keyword::Select) {
            let tok = self.peek();
            return Err(match &tok.kind {
                TokenKind::Unsupported(word) => SyntaxError::new(
                    format!("{word} statements are not allowed; only SELECT is accepted"),
                    tok.span,
                ),
                _ => SyntaxError::new("statement must start with SELECT", tok.span),
            });
        }
        let select = self.parse_select()?;
        if self.eat(&TokenKind::Semicolon) && !matches!(self.peek().kind, TokenKind::Eof) {
            return Err(SyntaxError::new(
                "multiple statements are not allowed",
                self.peek().span,
            ));
        }
        self.expect_eof()?;
        Ok(select)
    }

    fn parse_select(&mut self) -> Result<Select, SyntaxError> {
        let start = self.expect_keyword(Keyword::Select)?.start;
        let distinct = if self.eat_keyword(Keyword::Distinct) {
            true
        } else {
            self.eat_keyword(Keyword::All);
            false
        };
        let mut projection = vec![self.parse_select_item()?];
        while self.eat(&TokenKind::Comma) {
            projection.push(self.parse_select_item()?);
        }
        self.expect_keyword(Keyword::From)?;
        let from = self.parse_table_ref()?;
        if self.peek().kind == TokenKind::Comma {
            return Err(SyntaxError::new(
                "comma joins are not supported; use JOIN ... ON",
                self.peek().span,
            ));
        }
        let mut joins = Vec::new();
        loop {
            let join_start = self.peek().span.start;
            let kind = if self.eat_keyword(Keyword::Inner) {
                JoinKind::Inner
            } else if self.eat_keyword(Keyword::Left) {
                self.eat_keyword(Keyword::Outer);
                JoinKind::Left
            } else if self.at_keyword(Keyword::Join) {
                JoinKind::Inner
            } else {
                break;
            };
            self.expect_keyword(Keyword::Join)?;
            let table = self.parse_table_ref()?;
            self.expect_keyword(Keyword::On)?;
            let on = self.parse_expr()?;
            let span = Span::new(join_start, self.prev_end());
            joins.push(Join {
                kind,
                table,
                on,
                span,
            });
        }
        let selection = if self.eat_keyword(Keyword::Where) {
            Some(self.parse_expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_keyword(Keyword::Group) {
            self.expect_keyword(Keyword::By)?;
            group_by.push(self.parse_expr()?);
            while self.eat(&TokenKind::Comma) {
                group_by.push(self.parse_expr()?);
            }
        }
        let having = if self.eat_keyword(Keyword::Having) {
            Some(self.parse_expr()?)
        } else {
            None
        };
        let mut order_by = Vec::new();
        if self.eat_keyword(Keyword::Order) {
            self.expect_keyword(Keyword::By)?;
            loop {
                let item_start = self.peek().span.start;
                let expr = self.parse_expr()?;
                let descending = if self.eat_keyword(Keyword::Desc) {
                    Some(true)
                } else if self.eat_keyword(Keyword::Asc) {
                    Some(false)
                } else {
                    None
                };
                order_by.push(OrderByItem {
                    expr,
                    descending,
                    span: Span::new(item_start, self.prev_end()),
                });
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
        }
        let limit = if self.at_keyword(Keyword::Limit) {
            let limit_start = self.advance().span.start;
            let tok = self.advance();
            let value = match &tok.kind {
                TokenKind::Number(n) if !n.contains('.') => n
                    .parse::<u64>()
                    .map_err(|_| SyntaxError::new("LIMIT value out of range", tok.span))?,
                _ => {
                    return Err(SyntaxError::new(
                        "LIMIT requires a non-negative integer",
                        tok.span,
                    ))
                }
            };
            Some(Limit {
                value,
                span: Span::new(limit_start, tok.span.end),
            })
        } else {
            None
        };
        Ok(Select {
            distinct,
            projection,
            from,
            joins,
            selection,
            group_by,
            having,
            order_by,
            limit,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn parse_ident(&mut self, what: &str) -> Result<Ident, SyntaxError> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Ident { value, quoted } => {
                self.advance();
                Ok(Ident {
                    value,
                    quoted,
                    span: tok.span,
                })
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn parse_alias(&mut self) -> Result<Option<Ident>, SyntaxError> {
        if self.eat_keyword(Keyword::As) {
            return self.parse_ident("alias").map(Some);
        }
        if matches!(self.peek().kind, TokenKind::Ident { .. }) {
            return self.parse_ident("alias").map(Some);
        }
        Ok(None)
    }

    fn parse_table_ref(&mut self) -> Result<TableRef, SyntaxError> {
        if self.peek().kind == TokenKind::LParen {
            return Err(SyntaxError::new(
                "subqueries are not supported",
                self.peek().span,
            ));
        }
        let name = self.parse_ident("table name")?;
        if self.peek().kind == TokenKind::Dot {
            return Err(SyntaxError::new(
                "schema-qualified table names are not supported",
                self.peek().span,
            ));
        }
        let alias = self.parse_alias()?;
        let span = Span::new(name.span.start, self.prev_end());
        Ok(TableRef { name, alias, span })
    }

    fn parse_select_item(&mut self) -> Result<SelectItem, SyntaxError> {
        let start = self.peek().span.start;
        if self.peek().kind == TokenKind::Star {
            let span = self.advance().span;
            return Ok(SelectItem::Wildcard { span });
        }
        if matches!(self.peek().kind, TokenKind::Ident { .. })
            && *self.peek_at(1) == TokenKind::Dot
            && *self.peek_at(2) == TokenKind::Star
        {
            let qualifier = self.parse_ident("table name")?;
            self.advance();
            let end = self.advance().span.end;
            return Ok(SelectItem::QualifiedWildcard {
                qualifier,
                span: Span::new(start, end),
            });
        }
        let expr = self.parse_expr()?;
        let alias = self.parse_alias()?;
        Ok(SelectItem::Expr {
            expr,
            alias,
            span: Span::new(start, self.prev_end()),
        })
    }

    fn parse_expr(&mut self) -> Result<Expr, SyntaxError> {
        self.enter()?;
        let result = self.parse_or();
        self.depth -= 1;
        result
    }

    fn parse_or(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_and()?;
        while self.eat_keyword(Keyword::Or) {
            let right = self.parse_and()?;
            left = binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_not()?;
        while self.eat_keyword(Keyword::And) {
            let right = self.parse_not()?;
            left = binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> Result<Expr, SyntaxError> {
        if self.at_keyword(Keyword::Not) {
            let start = self.advance().span.start;
            self.enter()?;
            let operand = self.parse_not();
            self.depth -= 1;
            let operand = operand?;
            let span = Span::new(start, operand.span.end);
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnaryOp::Not,
                    operand: Box::new(operand),
                },
                span,
            ));
        }
        self.parse_predicate()
    }

    fn parse_predicate(&mut self) -> Result<Expr, SyntaxError> {
        let left = self.parse_additive()?;
        let start = left.span.start;
        let op = match self.peek().kind {
            TokenKind::Eq => Some(BinaryOp::Eq),
            TokenKind::NotEq => Some(BinaryOp::NotEq),
            TokenKind::Lt => Some(BinaryOp::Lt),
            TokenKind::LtEq => Some(BinaryOp::LtEq),
            TokenKind::Gt => Some(BinaryOp::Gt),
            TokenKind::GtEq => Some(BinaryOp::GtEq),
            _ => None,
        };
        if let Some(op) = op {
            self.advance();
            let right = self.parse_additive()?;
            return Ok(binary(op, left, right));
        }
        if self.at_keyword(Keyword::Is) {
            self.advance();
            let negated = self.eat_keyword(Keyword::Not);
            self.expect_keyword(Keyword::Null)?;
            let span = Span::new(start, self.prev_end());
            return Ok(Expr::new(
                ExprKind::IsNull {
                    expr: Box::new(left),
                    negated,
                },
                span,
            ));
        }
        let negated = if self.at_keyword(Keyword::Not)
            && matches!(
                self.peek_at(1),
                TokenKind::Keyword(Keyword::In | Keyword::Like | Keyword::Between)
            ) {
            self.advance();
            true
        } else {
            false
        };
        if self.eat_keyword(Keyword::In) {
            self.expect(TokenKind::LParen, "'(' after IN")?;
            if self.at_keyword(Keyword::Select) {
                return Err(SyntaxError::new(
                    "subqueries are not supported",
                    self.peek().span,
                ));
            }
            let mut list = vec![self.parse_additive()?];
            while self.eat(&TokenKind::Comma) {
                list.push(self.parse_additive()?);
            }
            self.expect(TokenKind::RParen, "')' closing IN list")?;
            let span = Span::new(start, self.prev_end());
            return Ok(Expr::new(
                ExprKind::InList {
                    expr: Box::new(left),
                    list,
                    negated,
                },
                span,
            ));
        }
        if self.eat_keyword(Keyword::Like) {
            let pattern = self.parse_additive()?;
            let span = Span::new(start, pattern.span.end);
            return Ok(Expr::new(
                ExprKind::Like {
                    expr: Box::new(left),
                    pattern: Box::new(pattern),
                    negated,
                },
                span,
            ));
        }
        if self.eat_keyword(Keyword::Between) {
            let low = self.parse_additive()?;
            self.expect_keyword(Keyword::And)?;
            let high = self.parse_additive()?;
            let span = Span::new(start, high.span.end);
            return Ok(Expr::new(
                ExprKind::Between {
                    expr: Box::new(left),
                    low: Box::new(low),
                    high: Box::new(high),
                    negated,
                },
                span,
            ));
        }
        if negated {
            return Err(self.unexpected("IN, LIKE or BETWEEN after NOT"));
        }
        Ok(left)
    }

    fn parse_additive(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_multiplicative()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Plus => BinaryOp::Plus,
                TokenKind::Minus => BinaryOp::Minus,
                _ => break,
            };
            self.advance();
            let right = self.parse_multiplicative()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn parse_multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_concat()?;
        loop {
            let op = match self.peek().kind {
                TokenKind::Star => BinaryOp::Mul,
                TokenKind::Slash => BinaryOp::Div,
                TokenKind::Percent => BinaryOp::Mod,
                _ => break,
            };
            self.advance();
            let right = self.parse_concat()?;
            left = binary(op, left, right);
        }
        Ok(left)
    }

    fn parse_concat(&mut self) -> Result<Expr, SyntaxError> {
        let mut left = self.parse_unary()?;
        while self.eat(&TokenKind::Concat) {
            let right = self.parse_unary()?;
            left = binary(BinaryOp::Concat, left, right);
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Expr, SyntaxError> {
        if self.peek().kind == TokenKind::Minus {
            let start = self.advance().span.start;
            self.enter()?;
            let operand = self.parse_unary();
            self.depth -= 1;
            let operand = operand?;
            let span = Span::new(start, operand.span.end);
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnaryOp::Neg,
                    operand: Box::new(operand),
                },
                span,
            ));
        }
        if self.peek().kind == TokenKind::Plus {
            return Err(SyntaxError::new(
                "unary plus is not supported",
                self.peek().span,
            ));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr, SyntaxError> {
        let tok = self.peek().clone();
        match &tok.kind {
            TokenKind::String(s) => {
                self.advance();
                Ok(Expr::new(
                    ExprKind::Literal(Literal::String(s.clone())),
                    tok.span,
                ))
            }
            TokenKind::Number(n) => {
                self.advance();
                Ok(Expr::new(
                    ExprKind::Literal(Literal::Number(n.clone())),
                    tok.span,
                ))
            }
            TokenKind::Keyword(Keyword::True) => {
                self.advance();
                Ok(Expr::new(
                    ExprKind::Literal(Literal::Boolean(true)),
                    tok.span,
                ))
            }
            TokenKind::Keyword(Keyword::False) => {
                self.advance();
                Ok(Expr::new(
                    ExprKind::Literal(Literal::Boolean(false)),
                    tok.span,
                ))
            }
            TokenKind::Keyword(Keyword::Null) => {
                self.advance();
                Ok(Expr::new(ExprKind::Literal(Literal::Null), tok.span))
            }
            TokenKind::LParen => {
                self.advance();
                if self.at_keyword(Keyword::Select) {
                    return Err(SyntaxError::new(
                        "subqueries are not supported",
                        self.peek().span,
                    ));
                }
                let inner = self.parse_expr()?;
                let end = self.expect(TokenKind::RParen, "')'")?.end;
                Ok(Expr::new(
                    ExprKind::Nested(Box::new(inner)),
                    Span::new(tok.span.start, end),
                ))
            }
            TokenKind::Ident { .. } => {
                let first = self.parse_ident("identifier")?;
                if self.peek().kind == TokenKind::LParen && !first.quoted {
                    return self.parse_function(first);
                }
                if self.eat(&TokenKind::Dot) {
                    let name = self.parse_ident("column name")?;
                    if self.peek().kind == TokenKind::Dot {
                        return Err(SyntaxError::new(
                            "schema-qualified column names are not supported",
                            self.peek().span,
                        ));
                    }
                    let span = first.span.join(name.span);
                    return Ok(Expr::new(
                        ExprKind::Column(ColumnRef {
                            qualifier: Some(first),
                            name,
                            binding: Binding::Unresolved,
                        }),
                        span,
                    ));
                }
                let span = first.span;
                Ok(Expr::new(
                    ExprKind::Column(ColumnRef {
                        qualifier: None,
                        name: first,
                        binding: Binding::Unresolved,
                    }),
                    span,
                ))
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    fn parse_function(&mut self, name: Ident) -> Result<Expr, SyntaxError> {
        self.expect(TokenKind::LParen, "'('")?;
        let distinct = self.eat_keyword(Keyword::Distinct);
        let args = if self.peek().kind == TokenKind::Star {
            if distinct {
                return Err(SyntaxError::new(
                    "DISTINCT * is not valid",
                    self.peek().span,
                ));
            }
            self.advance();
            FunctionArgs::Star
        } else if self.peek().kind == TokenKind::RParen {
            FunctionArgs::List(Vec::new())
        } else {
            if self.at_keyword(Keyword::Select) {
                return Err(SyntaxError::new(
                    "subqueries are not supported",
                    self.peek().span,
                ));
            }
            let mut args = vec![self.parse_expr()?];
            while self.eat(&TokenKind::Comma) {
                args.push(self.parse_expr()?);
            }
            FunctionArgs::List(args)
        };
        let end = self
            .expect(TokenKind::RParen, "')' closing function call")?
            .end;
        if self.at_keyword(Keyword::Select) {
            return Err(self.unexpected("operator"));
        }
        if let TokenKind::Unsupported(word) = &self.peek().kind {
            if word == "OVER" || word == "FILTER" {
                return Err(SyntaxError::new(
                    "window functions are not supported",
                    self.peek().span,
                ));
            }
        }
        let span = Span::new(name.span.start, end);
        Ok(Expr::new(
            ExprKind::Function(FunctionCall {
                name,
                distinct,
                args,
            }),
            span,
        ))
    }
}

fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
    let span = left.span.join(right.span);
    Expr::new(
        ExprKind::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        },
        span,
    )
}
