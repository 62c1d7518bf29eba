//! A small arithmetic expression language for matrix entries and vector fields.
//!
//! ```text
//! expr     = term , { ("+" | "-") , term } ;
//! term     = unary , { ("*" | "/") , unary } ;
//! unary    = "-" , unary | power ;
//! power    = primary , [ "^" , exponent ] ;
//! exponent = "-" , exponent | power ;
//! primary  = number | variable | func , "(" , expr , ")" | "(" , expr , ")" ;
//! variable = "t" | "x" , digits ;
//! func     = "sin" | "cos" | "exp" | "sqrt" | "abs" | "tanh" ;
//! ```
//!
//! Exponents must evaluate to integers. `-x^2` is `-(x^2)` and `a^b^c` is `a^(b^c)`.

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    Time,
    /// State component, 1-based (`x1` is `State(1)`).
    State(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("malformed number")]
    BadNumber,
    #[error("expected an operand")]
    ExpectedOperand,
    #[error("unbalanced parenthesis")]
    Unbalanced,
    #[error("unknown function {0:?}")]
    UnknownFunction(String),
    #[error("unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("trailing input")]
    Trailing,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable {0}")]
    Unbound(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(String),
}

/// Values for the variables an expression may reference.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bindings<'a> {
    pub t: Option<f64>,
    pub x: &'a [f64],
}

impl<'a> Bindings<'a> {
    pub fn new(t: Option<f64>, x: &'a [f64]) -> Self {
        Self { t, x }
    }

    pub fn time(t: f64) -> Self {
        Self { t: Some(t), x: &[] }
    }

    fn get(&self, v: Var) -> Result<f64, EvalError> {
        match v {
            Var::Time => self.t.ok_or_else(|| EvalError::Unbound("t".into())),
            Var::State(k) => self.x.get(k.wrapping_sub(1)).copied().ok_or_else(|| EvalError::Unbound(format!("x{k}"))),
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0, src_len: src.len() };
        let e = p.expr()?;
        match p.peek() {
            None => Ok(e),
            Some(tok) if tok.kind == Tok::RParen => {
                Err(ParseError { offset: tok.offset, kind: ParseErrorKind::Unbalanced })
            }
            Some(tok) => Err(ParseError { offset: tok.offset, kind: ParseErrorKind::Trailing }),
        }
    }

    pub fn eval(&self, env: &Bindings<'_>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(v) => env.get(*v),
            Expr::Neg(e) => Ok(-e.eval(env)?),
            Expr::Binary(op, a, b) => {
                let a = a.eval(env)?;
                let b = b.eval(env)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(EvalError::DivisionByZero)
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => integer_power(a, b),
                }
            }
            Expr::Call(f, arg) => {
                let v = arg.eval(env)?;
                match f {
                    Func::Sin => Ok(v.sin()),
                    Func::Cos => Ok(v.cos()),
                    Func::Exp => Ok(v.exp()),
                    Func::Sqrt => {
                        if v < 0.0 {
                            Err(EvalError::Domain(format!("sqrt of negative value {v}")))
                        } else {
                            Ok(v.sqrt())
                        }
                    }
                    Func::Abs => Ok(v.abs()),
                    Func::Tanh => Ok(v.tanh()),
                }
            }
        }
    }

    /// True if the expression references `t`.
    pub fn uses_time(&self) -> bool {
        self.any_var(&|v| v == Var::Time)
    }

    /// Largest state index referenced (`x3` gives 3), 0 if none.
    pub fn max_state_index(&self) -> usize {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(Var::State(k)) => *k,
            Expr::Var(Var::Time) => 0,
            Expr::Neg(e) | Expr::Call(_, e) => e.max_state_index(),
            Expr::Binary(_, a, b) => a.max_state_index().max(b.max_state_index()),
        }
    }

    fn any_var(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => pred(*v),
            Expr::Neg(e) | Expr::Call(_, e) => e.any_var(pred),
            Expr::Binary(_, a, b) => a.any_var(pred) || b.any_var(pred),
        }
    }
}

fn integer_power(base: f64, exp: f64) -> Result<f64, EvalError> {
    if exp.fract() != 0.0 || !exp.is_finite() {
        return Err(EvalError::Domain(format!("exponent {exp} is not an integer")));
    }
    if base == 0.0 && exp < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    if exp.abs() <= i32::MAX as f64 {
        Ok(base.powi(exp as i32))
    } else {
        Ok(base.powf(exp))
    }
}

/// Canonical form: every compound subexpression is parenthesized, so
/// re-parsing yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::Time) => f.write_str("t"),
            Expr::Var(Var::State(k)) => write!(f, "x{k}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Debug)]
struct Token {
    kind: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let offset = i;
        let single = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(kind) = single {
            out.push(Token { kind, offset });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
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
            let text = &src[offset..i];
            let v: f64 = text.parse().map_err(|_| ParseError { offset, kind: ParseErrorKind::BadNumber })?;
            if !v.is_finite() {
                return Err(ParseError { offset, kind: ParseErrorKind::BadNumber });
            }
            out.push(Token { kind: Tok::Num(v), offset });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: Tok::Ident(src[offset..i].to_string()), offset });
            continue;
        }
        let ch = src[offset..].chars().next().unwrap_or('?');
        return Err(ParseError { offset, kind: ParseErrorKind::UnexpectedChar(ch) });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_kind(&self) -> Option<&Tok> {
        self.peek().map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.src_len, |t| t.offset)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek_kind() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek_kind() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Minus) = self.peek_kind() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Caret) = self.peek_kind() {
            self.bump();
            let exp = self.exponent()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Minus) = self.peek_kind() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.exponent()?)));
        }
        self.power()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let Some(tok) = self.bump() else {
            return Err(ParseError { offset, kind: ParseErrorKind::ExpectedOperand });
        };
        match tok.kind {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.close_paren(offset)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(Tok::LParen) = self.peek_kind() {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError { offset, kind: ParseErrorKind::UnknownFunction(name) })?;
                    self.bump();
                    let arg = self.expr()?;
                    self.close_paren(offset)?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                parse_var(&name)
                    .map(Expr::Var)
                    .ok_or(ParseError { offset, kind: ParseErrorKind::UnknownVariable(name) })
            }
            _ => Err(ParseError { offset, kind: ParseErrorKind::ExpectedOperand }),
        }
    }

    fn close_paren(&mut self, open_offset: usize) -> Result<(), ParseError> {
        match self.peek_kind() {
            Some(Tok::RParen) => {
                self.bump();
                Ok(())
            }
            None => Err(ParseError { offset: open_offset, kind: ParseErrorKind::Unbalanced }),
            Some(_) => Err(ParseError { offset: self.offset(), kind: ParseErrorKind::Unbalanced }),
        }
    }
}

fn parse_var(name: &str) -> Option<Var> {
    if name == "t" {
        return Some(Var::Time);
    }
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse().ok().map(Var::State)
}
