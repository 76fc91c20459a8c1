//! Expression language for right-hand sides: literals, `t`, `x1..xn`,
//! `+ - * / ^`, unary minus and a fixed set of functions.
//!
//! Precedence from tight to loose: unary minus, `^` (right associative),
//! `* /`, `+ -` (both left associative). Unary minus binds tighter than `^`,
//! so `-a^2` is `(-a)^2`.

use std::fmt;

use thiserror::Error;

/// Byte range into the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    fn join(self, other: Span) -> Self {
        Self::new(self.start.min(other.start), self.end.max(other.end))
    }

    /// 1-based column of the start.
    pub fn column(&self) -> usize {
        self.start + 1
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("column {}: {message}", span.column())]
    Syntax { message: String, span: Span },
    #[error("column {}: unknown identifier `{name}`", span.column())]
    UnknownIdentifier { name: String, span: Span },
    #[error("column {}: `{name}` takes {expected} argument(s), got {found}", span.column())]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        span: Span,
    },
    #[error("column {}: variable x{index} exceeds dimension {dimension}", span.column())]
    VariableOutOfRange { index: usize, dimension: usize, span: Span },
}

impl ParseError {
    pub fn span(&self) -> Span {
        match self {
            ParseError::Syntax { span, .. }
            | ParseError::UnknownIdentifier { span, .. }
            | ParseError::Arity { span, .. }
            | ParseError::VariableOutOfRange { span, .. } => *span,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("column {}: {message}", span.column())]
pub struct EvalError {
    pub message: String,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Function {
    Sin,
    Cos,
    Exp,
    Tanh,
    Cosh,
    Sinh,
    Abs,
    Pow,
}

impl Function {
    pub const ALL: [Function; 8] = [
        Function::Sin,
        Function::Cos,
        Function::Exp,
        Function::Tanh,
        Function::Cosh,
        Function::Sinh,
        Function::Abs,
        Function::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::Sin => "sin",
            Function::Cos => "cos",
            Function::Exp => "exp",
            Function::Tanh => "tanh",
            Function::Cosh => "cosh",
            Function::Sinh => "sinh",
            Function::Abs => "abs",
            Function::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        if self == Function::Pow {
            2
        } else {
            1
        }
    }

    fn lookup(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// `t` or `x_k` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variable {
    Time,
    State(usize),
}

#[derive(Clone, Debug)]
pub enum ExprKind {
    Number(f64),
    Var(Variable),
    Neg(Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Function, Vec<Expr>),
}

/// Expression tree node. Equality ignores spans.
#[derive(Clone, Debug)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ExprKind::Number(a), ExprKind::Number(b)) => a.to_bits() == b.to_bits(),
            (ExprKind::Var(a), ExprKind::Var(b)) => a == b,
            (ExprKind::Neg(a), ExprKind::Neg(b)) => a == b,
            (ExprKind::Binary(o1, l1, r1), ExprKind::Binary(o2, l2, r2)) => o1 == o2 && l1 == l2 && r1 == r2,
            (ExprKind::Call(f1, a1), ExprKind::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

impl Expr {
    pub fn new(kind: ExprKind) -> Self {
        Self {
            kind,
            span: Span::default(),
        }
    }

    pub fn number(v: f64) -> Self {
        Self::new(ExprKind::Number(v))
    }

    pub fn var(v: Variable) -> Self {
        Self::new(ExprKind::Var(v))
    }

    pub fn neg(e: Expr) -> Self {
        Self::new(ExprKind::Neg(Box::new(e)))
    }

    pub fn binary(op: BinaryOp, l: Expr, r: Expr) -> Self {
        Self::new(ExprKind::Binary(op, Box::new(l), Box::new(r)))
    }

    pub fn call(f: Function, args: Vec<Expr>) -> Self {
        Self::new(ExprKind::Call(f, args))
    }

    /// Largest state index referenced (0 if none).
    pub fn max_state_index(&self) -> usize {
        match &self.kind {
            ExprKind::Number(_) | ExprKind::Var(Variable::Time) => 0,
            ExprKind::Var(Variable::State(k)) => *k,
            ExprKind::Neg(e) => e.max_state_index(),
            ExprKind::Binary(_, l, r) => l.max_state_index().max(r.max_state_index()),
            ExprKind::Call(_, args) => args.iter().map(Expr::max_state_index).max().unwrap_or(0),
        }
    }

    /// Whether the expression mentions any state variable.
    pub fn depends_on_state(&self) -> bool {
        self.max_state_index() > 0
    }

    /// Evaluate at time `t` and state `x` (`x[0]` is `x1`). Division by an
    /// exact zero is an error carrying the span of the division.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match &self.kind {
            ExprKind::Number(v) => *v,
            ExprKind::Var(Variable::Time) => t,
            ExprKind::Var(Variable::State(k)) => *x.get(k - 1).ok_or_else(|| EvalError {
                message: format!("state has no component x{k}"),
                span: self.span,
            })?,
            ExprKind::Neg(e) => -e.eval(t, x)?,
            ExprKind::Binary(op, l, r) => {
                let (a, b) = (l.eval(t, x)?, r.eval(t, x)?);
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError {
                                message: "division by zero".into(),
                                span: self.span,
                            });
                        }
                        a / b
                    }
                    BinaryOp::Pow => a.powf(b),
                }
            }
            ExprKind::Call(f, args) => {
                let a = args[0].eval(t, x)?;
                match f {
                    Function::Sin => a.sin(),
                    Function::Cos => a.cos(),
                    Function::Exp => a.exp(),
                    Function::Tanh => a.tanh(),
                    Function::Cosh => a.cosh(),
                    Function::Sinh => a.sinh(),
                    Function::Abs => a.abs(),
                    Function::Pow => a.powf(args[1].eval(t, x)?),
                }
            }
        })
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary(op, ..) => op.precedence(),
            ExprKind::Neg(_) => 4,
            _ => 5,
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parenthesize: bool) -> fmt::Result {
    if parenthesize {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints with the fewest parentheses that re-parse to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Number(v) => write!(f, "{v}"),
            ExprKind::Var(Variable::Time) => write!(f, "t"),
            ExprKind::Var(Variable::State(k)) => write!(f, "x{k}"),
            ExprKind::Neg(e) => {
                write!(f, "-")?;
                write_operand(f, e, e.precedence() < 4)
            }
            ExprKind::Binary(op, l, r) => {
                let p = op.precedence();
                let (left_paren, right_paren) = if *op == BinaryOp::Pow {
                    (l.precedence() <= p, r.precedence() < p)
                } else {
                    (l.precedence() < p, r.precedence() <= p)
                };
                write_operand(f, l, left_paren)?;
                if p == 1 {
                    write!(f, " {} ", op.symbol())?;
                } else {
                    write!(f, "{}", op.symbol())?;
                }
                write_operand(f, r, right_paren)
            }
            ExprKind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

fn tokenize(text: &str) -> Result<Vec<(Token, Span)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let literal = &text[start..i];
            let value: f64 = literal.parse().map_err(|_| ParseError::Syntax {
                message: format!("malformed number `{literal}`"),
                span: Span::new(start, i),
            })?;
            out.push((Token::Number(value), Span::new(start, i)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Token::Ident(text[start..i].to_string()), Span::new(start, i)));
        } else {
            let token = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => {
                    let width = text[start..].chars().next().map_or(1, char::len_utf8);
                    return Err(ParseError::Syntax {
                        message: format!("unexpected character `{}`", &text[start..start + width]),
                        span: Span::new(start, start + width),
                    });
                }
            };
            i += 1;
            out.push((token, Span::new(start, i)));
        }
    }
    out.push((Token::End, Span::new(text.len(), text.len())));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, Span)>,
    pos: usize,
    dimension: Option<usize>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].0
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> (Token, Span) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, token: Token, what: &str) -> Result<Span, ParseError> {
        if *self.peek() == token {
            Ok(self.bump().1)
        } else {
            Err(self.unexpected(what))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        let found = match self.peek() {
            Token::End => "end of input".to_string(),
            Token::Number(v) => format!("number {v}"),
            Token::Ident(s) => format!("`{s}`"),
            Token::Op(c) => format!("`{c}`"),
            Token::LParen => "`(`".into(),
            Token::RParen => "`)`".into(),
            Token::Comma => "`,`".into(),
        };
        ParseError::Syntax {
            message: format!("expected {what}, found {found}"),
            span: self.span(),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        while let Token::Op(c @ ('+' | '-')) = *self.peek() {
            self.bump();
            let rhs = self.product()?;
            let op = if c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            let span = lhs.span.join(rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.power()?;
        while let Token::Op(c @ ('*' | '/')) = *self.peek() {
            self.bump();
            let rhs = self.power()?;
            let op = if c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            let span = lhs.span.join(rhs.span);
            lhs = Expr {
                kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if *self.peek() == Token::Op('^') {
            self.bump();
            let exponent = self.power()?;
            let span = base.span.join(exponent.span);
            return Ok(Expr {
                kind: ExprKind::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)),
                span,
            });
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Token::Op('-') {
            let start = self.bump().1;
            let inner = self.unary()?;
            let span = start.join(inner.span);
            return Ok(Expr {
                kind: ExprKind::Neg(Box::new(inner)),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Token::Number(v) => {
                let span = self.bump().1;
                Ok(Expr {
                    kind: ExprKind::Number(v),
                    span,
                })
            }
            Token::LParen => {
                let open = self.bump().1;
                let inner = self.sum()?;
                let close = self.expect(Token::RParen, "`)`")?;
                Ok(Expr {
                    kind: inner.kind,
                    span: open.join(close),
                })
            }
            Token::Ident(name) => {
                let span = self.bump().1;
                if *self.peek() == Token::LParen {
                    return self.call(name, span);
                }
                let var = variable(&name).ok_or(ParseError::UnknownIdentifier {
                    name: name.clone(),
                    span,
                })?;
                if let (Variable::State(index), Some(dimension)) = (var, self.dimension) {
                    if index > dimension {
                        return Err(ParseError::VariableOutOfRange { index, dimension, span });
                    }
                }
                Ok(Expr {
                    kind: ExprKind::Var(var),
                    span,
                })
            }
            _ => Err(self.unexpected("a number, variable, function or `(`")),
        }
    }

    fn call(&mut self, name: String, name_span: Span) -> Result<Expr, ParseError> {
        let func = Function::lookup(&name).ok_or(ParseError::UnknownIdentifier {
            name: name.clone(),
            span: name_span,
        })?;
        self.bump();
        let mut args = Vec::new();
        if *self.peek() != Token::RParen {
            loop {
                args.push(self.sum()?);
                if *self.peek() == Token::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let close = self.expect(Token::RParen, "`,` or `)`")?;
        let span = name_span.join(close);
        if args.len() != func.arity() {
            return Err(ParseError::Arity {
                name,
                expected: func.arity(),
                found: args.len(),
                span,
            });
        }
        Ok(Expr {
            kind: ExprKind::Call(func, args),
            span,
        })
    }
}

fn variable(name: &str) -> Option<Variable> {
    if name == "t" {
        return Some(Variable::Time);
    }
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok().map(Variable::State)
}

/// Parse without a dimension limit on `x_k`.
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    parse_with_dimension(text, None)
}

/// Parse, rejecting `x_k` with `k > dimension` when a dimension is given.
pub fn parse_with_dimension(text: &str, dimension: Option<usize>) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Syntax {
            message: "empty expression".into(),
            span: Span::new(0, text.len()),
        });
    }
    let mut parser = Parser {
        tokens: tokenize(text)?,
        pos: 0,
        dimension,
    };
    let expr = parser.sum()?;
    if *parser.peek() != Token::End {
        return Err(parser.unexpected("an operator or end of input"));
    }
    Ok(expr)
}
