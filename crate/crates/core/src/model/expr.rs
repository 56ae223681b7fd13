//! Infix expression language used inside model files.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := or
//! or      := and ( ("||" | "or") and )*
//! and     := eq ( ("&&" | "and") eq )*
//! eq      := cmp ( ("==" | "!=") cmp )*
//! cmp     := add ( ("<" | "<=" | ">" | ">=") add )*
//! add     := mul ( ("+" | "-") mul )*
//! mul     := unary ( ("*" | "/") unary )*
//! unary   := ("-" | "!" | "not") unary | atom
//! atom    := NUMBER | "true" | "false" | IDENT | IDENT "(" args ")" | "(" expr ")"
//! ```
//!
//! `IDENT` names a continuous variable, a component, or the reserved elapsed
//! time `t`. A component compared with `==`/`!=` against a bare identifier
//! that is not otherwise bound tests the component's current state, e.g.
//! `pump == FAILED`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Name bound to the elapsed simulation time.
pub const TIME_VAR: &str = "t";

const KEYWORDS: &[&str] = &["true", "false", "and", "or", "not", TIME_VAR];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div => 6,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Min,
    Max,
    Abs,
    Exp,
    Ln,
    Sqrt,
    /// `step(b)` is 1 when `b` holds and 0 otherwise.
    Step,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "step" => Func::Step,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Step => "step",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Reserved words and builtin function names cannot be used as identifiers.
pub fn is_reserved(name: &str) -> bool {
    KEYWORDS.contains(&name) || Func::from_name(name).is_some()
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Expression abstract syntax tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Ident(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("column {column}: {message}")]
pub struct SyntaxError {
    /// 1-based column within the expression text.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    /// Current state name of a component.
    State(String),
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Bool(_) => "boolean",
            Value::State(_) => "component state",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::State(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("type mismatch in {context}: expected {expected}, found {found}")]
    TypeMismatch {
        context: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{func} is undefined for argument {arg}")]
    Domain { func: &'static str, arg: f64 },
}

/// Name lookup used by [`Expr::eval`].
pub trait Env {
    fn lookup(&self, name: &str) -> Option<Value>;
}

impl Env for HashMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.get(name).cloned()
    }
}

impl Env for BTreeMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<Value> {
        self.get(name).cloned()
    }
}

impl<F: Fn(&str) -> Option<Value>> Env for F {
    fn lookup(&self, name: &str) -> Option<Value> {
        self(name)
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, SyntaxError> {
        let tokens = lex(text)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        match parser.peek() {
            Tok::Eof => Ok(expr),
            _ => Err(parser.error("unexpected trailing input")),
        }
    }

    /// Every identifier mentioned by the expression, in first-seen order.
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_idents(&mut |name| {
            if !out.contains(&name) {
                out.push(name);
            }
        });
        out
    }

    fn visit_idents<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Num(_) | Expr::Bool(_) => {}
            Expr::Ident(name) => f(name),
            Expr::Unary(_, e) => e.visit_idents(f),
            Expr::Binary(_, l, r) => {
                l.visit_idents(f);
                r.visit_idents(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit_idents(f)),
        }
    }

    pub fn eval(&self, env: &dyn Env) -> Result<Value, EvalError> {
        match self {
            Expr::Num(x) => Ok(Value::Num(*x)),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Ident(name) => env.lookup(name).ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Unary(UnaryOp::Neg, e) => Ok(Value::Num(-e.eval_num(env, "negation")?)),
            Expr::Unary(UnaryOp::Not, e) => Ok(Value::Bool(!e.eval_bool(env, "`!`")?)),
            Expr::Binary(op @ (BinOp::Eq | BinOp::Ne), l, r) => {
                let equal = eval_equality(l, r, env)?;
                Ok(Value::Bool(if *op == BinOp::Eq { equal } else { !equal }))
            }
            Expr::Binary(BinOp::And, l, r) => {
                Ok(Value::Bool(l.eval_bool(env, "`&&`")? && r.eval_bool(env, "`&&`")?))
            }
            Expr::Binary(BinOp::Or, l, r) => {
                Ok(Value::Bool(l.eval_bool(env, "`||`")? || r.eval_bool(env, "`||`")?))
            }
            Expr::Binary(op, l, r) => {
                let ctx = op.symbol();
                let a = l.eval_num(env, ctx)?;
                let b = r.eval_num(env, ctx)?;
                apply_numeric(*op, a, b)
            }
            Expr::Call(func, args) => {
                let mut vals = [0.0; 2];
                for (slot, arg) in vals.iter_mut().zip(args) {
                    *slot = if *func == Func::Step {
                        if arg.eval_bool(env, "step")? {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        arg.eval_num(env, func.name())?
                    };
                }
                apply_func(*func, vals[0], vals[1])
            }
        }
    }

    fn eval_num(&self, env: &dyn Env, ctx: &str) -> Result<f64, EvalError> {
        match self.eval(env)? {
            Value::Num(x) => Ok(x),
            other => Err(mismatch(ctx, "number", &other)),
        }
    }

    fn eval_bool(&self, env: &dyn Env, ctx: &str) -> Result<bool, EvalError> {
        match self.eval(env)? {
            Value::Bool(b) => Ok(b),
            other => Err(mismatch(ctx, "boolean", &other)),
        }
    }
}

fn mismatch(ctx: &str, expected: &'static str, found: &Value) -> EvalError {
    EvalError::TypeMismatch {
        context: ctx.to_string(),
        expected,
        found: found.type_name(),
    }
}

fn eval_equality(l: &Expr, r: &Expr, env: &dyn Env) -> Result<bool, EvalError> {
    // A bare identifier facing a component state is a state literal unless
    // the environment binds it.
    let literal = |e: &Expr| match e {
        Expr::Ident(name) if env.lookup(name).is_none() => Some(name.clone()),
        _ => None,
    };
    let lv = match literal(l) {
        Some(name) => None.ok_or(name),
        None => Ok(l.eval(env)?),
    };
    let rv = match literal(r) {
        Some(name) => None.ok_or(name),
        None => Ok(r.eval(env)?),
    };
    match (lv, rv) {
        (Ok(Value::State(a)), Err(b)) | (Err(b), Ok(Value::State(a))) => Ok(a == b),
        (Err(name), _) | (_, Err(name)) => Err(EvalError::Unbound(name)),
        (Ok(Value::Num(a)), Ok(Value::Num(b))) => Ok(a == b),
        (Ok(Value::Bool(a)), Ok(Value::Bool(b))) => Ok(a == b),
        (Ok(Value::State(a)), Ok(Value::State(b))) => Ok(a == b),
        (Ok(a), Ok(b)) => Err(EvalError::TypeMismatch {
            context: "`==`".into(),
            expected: a.type_name(),
            found: b.type_name(),
        }),
    }
}

pub(crate) fn apply_numeric(op: BinOp, a: f64, b: f64) -> Result<Value, EvalError> {
    Ok(match op {
        BinOp::Add => Value::Num(a + b),
        BinOp::Sub => Value::Num(a - b),
        BinOp::Mul => Value::Num(a * b),
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            Value::Num(a / b)
        }
        BinOp::Lt => Value::Bool(a < b),
        BinOp::Le => Value::Bool(a <= b),
        BinOp::Gt => Value::Bool(a > b),
        BinOp::Ge => Value::Bool(a >= b),
        BinOp::Eq | BinOp::Ne | BinOp::And | BinOp::Or => {
            unreachable!("non-numeric operator {op:?}")
        }
    })
}

pub(crate) fn apply_func(func: Func, a: f64, b: f64) -> Result<Value, EvalError> {
    let out = match func {
        Func::Min => a.min(b),
        Func::Max => a.max(b),
        Func::Abs => a.abs(),
        Func::Exp => a.exp(),
        Func::Ln => {
            if a <= 0.0 {
                return Err(EvalError::Domain { func: "ln", arg: a });
            }
            a.ln()
        }
        Func::Sqrt => {
            if a < 0.0 {
                return Err(EvalError::Domain { func: "sqrt", arg: a });
            }
            a.sqrt()
        }
        Func::Step => a,
    };
    Ok(Value::Num(out))
}

/// Evaluates `e` against `env`.
pub fn eval_expression(e: &Expr, env: &dyn Env) -> Result<Value, EvalError> {
    e.eval(env)
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x}"),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Ident(name) => f.write_str(name),
            Expr::Unary(op, e) => {
                f.write_str(if *op == UnaryOp::Neg { "-" } else { "!" })?;
                match **e {
                    Expr::Binary(..) => write!(f, "({e})"),
                    // `--x` would lex fine, but keep nested unary readable
                    _ => write!(f, "{e}"),
                }
            }
            Expr::Binary(op, l, r) => {
                let prec = op.precedence();
                let wrap_left = matches!(**l, Expr::Binary(lop, ..) if lop.precedence() < prec);
                let wrap_right = matches!(**r, Expr::Binary(rop, ..) if rop.precedence() <= prec);
                write_operand(f, l, wrap_left)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, r, wrap_right)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl FromStr for Expr {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

/// A parsed expression that remembers nothing but its tree; serialized back
/// to canonical infix text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression(pub Expr);

impl Expression {
    pub fn parse(text: &str) -> Result<Self, SyntaxError> {
        Expr::parse(text).map(Expression)
    }

    pub fn expr(&self) -> &Expr {
        &self.0
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for Expression {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Expression::parse(&text)
            .map_err(|e| serde::de::Error::custom(format!("in expression `{text}`: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Lexing and parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    Eof,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, SyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let col = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let value: f64 = lit.parse().map_err(|_| SyntaxError {
                column: col,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push((Tok::Num(value), col));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), col));
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        let op = match two {
            "<=" | ">=" | "==" | "!=" | "&&" | "||" => Some(two),
            _ => None,
        };
        if let Some(op) = op {
            let op: &'static str = match op {
                "<=" => "<=",
                ">=" => ">=",
                "==" => "==",
                "!=" => "!=",
                "&&" => "&&",
                _ => "||",
            };
            out.push((Tok::Op(op), col));
            i += 2;
            continue;
        }
        let tok = match c {
            b'+' => Tok::Op("+"),
            b'-' => Tok::Op("-"),
            b'*' => Tok::Op("*"),
            b'/' => Tok::Op("/"),
            b'<' => Tok::Op("<"),
            b'>' => Tok::Op(">"),
            b'!' => Tok::Op("!"),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(SyntaxError {
                    column: col,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, col));
        i += 1;
    }
    out.push((Tok::Eof, text.len() + 1));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            column: self.tokens[self.pos].1,
            message: message.into(),
        }
    }

    /// Matches a binary operator at the given precedence level.
    fn binop(&self, level: u8) -> Option<BinOp> {
        let op = match self.peek() {
            Tok::Op(s) => match *s {
                "||" => BinOp::Or,
                "&&" => BinOp::And,
                "==" => BinOp::Eq,
                "!=" => BinOp::Ne,
                "<" => BinOp::Lt,
                "<=" => BinOp::Le,
                ">" => BinOp::Gt,
                ">=" => BinOp::Ge,
                "+" => BinOp::Add,
                "-" => BinOp::Sub,
                "*" => BinOp::Mul,
                "/" => BinOp::Div,
                _ => return None,
            },
            Tok::Ident(word) if word == "or" => BinOp::Or,
            Tok::Ident(word) if word == "and" => BinOp::And,
            _ => return None,
        };
        (op.precedence() == level).then_some(op)
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.level(1)
    }

    fn level(&mut self, level: u8) -> Result<Expr, SyntaxError> {
        if level > 6 {
            return self.unary();
        }
        let mut lhs = self.level(level + 1)?;
        while let Some(op) = self.binop(level) {
            self.bump();
            let rhs = self.level(level + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek() {
            Tok::Op("-") => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)))
            }
            Tok::Op("!") => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Not, Box::new(self.unary()?)))
            }
            Tok::Ident(word) if word == "not" => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Not, Box::new(self.unary()?)))
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(Expr::Num(x))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                match name.as_str() {
                    "true" => {
                        self.bump();
                        return Ok(Expr::Bool(true));
                    }
                    "false" => {
                        self.bump();
                        return Ok(Expr::Bool(false));
                    }
                    "and" | "or" | "not" => {
                        return Err(self.error(format!("unexpected keyword `{name}`")))
                    }
                    _ => {}
                }
                if let Some(func) = Func::from_name(&name) {
                    self.bump();
                    if *self.peek() != Tok::LParen {
                        return Err(self.error(format!("expected `(` after `{name}`")));
                    }
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    if args.len() != func.arity() {
                        return Err(self.error(format!(
                            "`{name}` takes {} argument(s), got {}",
                            func.arity(),
                            args.len()
                        )));
                    }
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, args));
                }
                self.bump();
                Ok(Expr::Ident(name))
            }
            Tok::Eof => Err(self.error("unexpected end of expression")),
            other => Err(self.error(format!("unexpected token {}", describe(&other)))),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), SyntaxError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.error("expected `)`"))
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(x) => format!("`{x}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Op(s) => format!("`{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Eof => "end of input".into(),
    }
}
