//! AST for the SELECT-only dialect accepted by the guard.

use serde::Serialize;

/// Byte range into the statement text the node was parsed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub value: String,
    pub quoted: bool,
    pub span: Span,
}

impl Ident {
    pub fn new(value: impl Into<String>) -> Self {
        Self {
            value: value.into(),
            quoted: false,
            span: Span::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StatementKind {
    Select,
}

/// A parsed statement. Only SELECT exists in the grammar; anything else is a
/// syntax rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct SqlAst {
    pub kind: StatementKind,
    pub select: Select,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub distinct: bool,
    pub projection: Vec<SelectItem>,
    pub from: TableRef,
    pub joins: Vec<Join>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
    pub order_by: Vec<OrderByItem>,
    pub limit: Option<Limit>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub name: Ident,
    pub alias: Option<Ident>,
    pub span: Span,
}

impl TableRef {
    /// Name the table is visible under in the rest of the query.
    pub fn scope_name(&self) -> &Ident {
        self.alias.as_ref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Inner,
    Left,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Join {
    pub kind: JoinKind,
    pub table: TableRef,
    pub on: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard {
        span: Span,
    },
    QualifiedWildcard {
        qualifier: Ident,
        span: Span,
    },
    Expr {
        expr: Expr,
        alias: Option<Ident>,
        span: Span,
    },
}

impl SelectItem {
    pub fn span(&self) -> Span {
        match self {
            SelectItem::Wildcard { span }
            | SelectItem::QualifiedWildcard { span, .. }
            | SelectItem::Expr { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderByItem {
    pub expr: Expr,
    /// `None` when no direction was written.
    pub descending: Option<bool>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Limit {
    pub value: u64,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Column(ColumnRef),
    Literal(Literal),
    Function(FunctionCall),
    Unary {
        op: UnaryOp,
        operand: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    InList {
        expr: Box<Expr>,
        list: Vec<Expr>,
        negated: bool,
    },
    Like {
        expr: Box<Expr>,
        pattern: Box<Expr>,
        negated: bool,
    },
    Between {
        expr: Box<Expr>,
        low: Box<Expr>,
        high: Box<Expr>,
        negated: bool,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    /// Explicit parentheses from the source text.
    Nested(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnRef {
    pub qualifier: Option<Ident>,
    pub name: Ident,
    pub binding: Binding,
}

/// Result of name resolution; filled in by the schema check.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Binding {
    #[default]
    Unresolved,
    Column {
        table: String,
        column: String,
    },
    /// Reference to a projection alias (ORDER BY / GROUP BY / HAVING only).
    OutputAlias(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionCall {
    pub name: Ident,
    pub distinct: bool,
    pub args: FunctionArgs,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionArgs {
    Star,
    List(Vec<Expr>),
}

impl FunctionArgs {
    pub fn len(&self) -> usize {
        match self {
            FunctionArgs::Star => 1,
            FunctionArgs::List(args) => args.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, FunctionArgs::List(args) if args.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    String(String),
    /// Numeric text exactly as written (`42`, `3.50`).
    Number(String),
    Boolean(bool),
    Null,
}

impl Literal {
    pub fn is_integer(&self) -> bool {
        matches!(self, Literal::Number(n) if !n.contains('.'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Plus,
    Minus,
    Concat,
    Mul,
    Div,
    Mod,
}

impl BinaryOp {
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq
            | BinaryOp::NotEq
            | BinaryOp::Lt
            | BinaryOp::LtEq
            | BinaryOp::Gt
            | BinaryOp::GtEq => 4,
            BinaryOp::Plus | BinaryOp::Minus => 5,
            BinaryOp::Mul | BinaryOp::Div | BinaryOp::Mod => 6,
            BinaryOp::Concat => 7,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Plus => "+",
            BinaryOp::Minus => "-",
            BinaryOp::Concat => "||",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

/// Which clause an expression sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Clause {
    Projection,
    JoinOn,
    Where,
    GroupBy,
    Having,
    OrderBy,
}

impl Clause {
    /// Clauses whose literals are lifted into bound parameters.
    pub fn lifts_literals(self) -> bool {
        matches!(
            self,
            Clause::Projection | Clause::JoinOn | Clause::Where | Clause::Having
        )
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Self { kind, span }
    }

    /// Direct children in source order.
    pub fn children(&self) -> Vec<&Expr> {
        match &self.kind {
            ExprKind::Column(_) | ExprKind::Literal(_) => Vec::new(),
            ExprKind::Function(call) => match &call.args {
                FunctionArgs::Star => Vec::new(),
                FunctionArgs::List(args) => args.iter().collect(),
            },
            ExprKind::Unary { operand, .. } => vec![operand],
            ExprKind::Binary { left, right, .. } => vec![left, right],
            ExprKind::InList { expr, list, .. } => {
                std::iter::once(&**expr).chain(list.iter()).collect()
            }
            ExprKind::Like { expr, pattern, .. } => vec![expr, pattern],
            ExprKind::Between {
                expr, low, high, ..
            } => vec![expr, low, high],
            ExprKind::IsNull { expr, .. } => vec![expr],
            ExprKind::Nested(inner) => vec![inner],
        }
    }

    fn children_mut(&mut self) -> Vec<&mut Expr> {
        match &mut self.kind {
            ExprKind::Column(_) | ExprKind::Literal(_) => Vec::new(),
            ExprKind::Function(call) => match &mut call.args {
                FunctionArgs::Star => Vec::new(),
                FunctionArgs::List(args) => args.iter_mut().collect(),
            },
            ExprKind::Unary { operand, .. } => vec![operand],
            ExprKind::Binary { left, right, .. } => vec![left, right],
            ExprKind::InList { expr, list, .. } => {
                let mut out: Vec<&mut Expr> = vec![expr];
                out.extend(list.iter_mut());
                out
            }
            ExprKind::Like { expr, pattern, .. } => vec![expr, pattern],
            ExprKind::Between {
                expr, low, high, ..
            } => vec![expr, low, high],
            ExprKind::IsNull { expr, .. } => vec![expr],
            ExprKind::Nested(inner) => vec![inner],
        }
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for child in self.children() {
            child.walk(f);
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        for child in self.children_mut() {
            child.walk_mut(f);
        }
    }

    pub fn column_refs(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        self.walk(&mut |e| {
            if let ExprKind::Column(c) = &e.kind {
                out.push(c);
            }
        });
        out
    }
}

impl Select {
    /// Every top-level expression tagged with its clause, in source order.
    pub fn clause_exprs(&self) -> Vec<(Clause, &Expr)> {
        let mut out = Vec::new();
        for item in &self.projection {
            if let SelectItem::Expr { expr, .. } = item {
                out.push((Clause::Projection, expr));
            }
        }
        for join in &self.joins {
            out.push((Clause::JoinOn, &join.on));
        }
        if let Some(e) = &self.selection {
            out.push((Clause::Where, e));
        }
        for e in &self.group_by {
            out.push((Clause::GroupBy, e));
        }
        if let Some(e) = &self.having {
            out.push((Clause::Having, e));
        }
        for item in &self.order_by {
            out.push((Clause::OrderBy, &item.expr));
        }
        out
    }

    pub fn clause_exprs_mut(&mut self) -> Vec<(Clause, &mut Expr)> {
        let mut out = Vec::new();
        for item in &mut self.projection {
            if let SelectItem::Expr { expr, .. } = item {
                out.push((Clause::Projection, expr));
            }
        }
        for join in &mut self.joins {
            out.push((Clause::JoinOn, &mut join.on));
        }
        if let Some(e) = &mut self.selection {
            out.push((Clause::Where, e));
        }
        for e in &mut self.group_by {
            out.push((Clause::GroupBy, e));
        }
        if let Some(e) = &mut self.having {
            out.push((Clause::Having, e));
        }
        for item in &mut self.order_by {
            out.push((Clause::OrderBy, &mut item.expr));
        }
        out
    }

    /// Tables in FROM/JOIN order.
    pub fn tables(&self) -> Vec<&TableRef> {
        std::iter::once(&self.from)
            .chain(self.joins.iter().map(|j| &j.table))
            .collect()
    }
}

impl SqlAst {
    /// Copy with all spans zeroed and bindings cleared; used to compare trees
    /// parsed from different text.
    pub fn normalized(&self) -> SqlAst {
        let mut out = self.clone();
        let select = &mut out.select;
        select.span = Span::default();
        let clear_ident = |i: &mut Ident| i.span = Span::default();
        for t in
            std::iter::once(&mut select.from).chain(select.joins.iter_mut().map(|j| &mut j.table))
        {
            t.span = Span::default();
            clear_ident(&mut t.name);
            if let Some(a) = &mut t.alias {
                clear_ident(a);
            }
        }
        for j in &mut select.joins {
            j.span = Span::default();
        }
        for item in &mut select.projection {
            match item {
                SelectItem::Wildcard { span } => *span = Span::default(),
                SelectItem::QualifiedWildcard { qualifier, span } => {
                    *span = Span::default();
                    clear_ident(qualifier);
                }
                SelectItem::Expr { alias, span, .. } => {
                    *span = Span::default();
                    if let Some(a) = alias {
                        clear_ident(a);
                    }
                }
            }
        }
        for o in &mut select.order_by {
            o.span = Span::default();
        }
        if let Some(l) = &mut select.limit {
            l.span = Span::default();
        }
        for (_, expr) in select.clause_exprs_mut() {
            expr.walk_mut(&mut |e| {
                e.span = Span::default();
                match &mut e.kind {
                    ExprKind::Column(c) => {
                        c.binding = Binding::Unresolved;
                        c.name.span = Span::default();
                        if let Some(q) = &mut c.qualifier {
                            q.span = Span::default();
                        }
                    }
                    ExprKind::Function(f) => f.name.span = Span::default(),
                    _ => {}
                }
            });
        }
        out
    }
}
