//! Payoff expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary ('*' unary)*
//! unary   := '-' unary | primary
//! primary := number | 't' | 'n' | 'N' | 'd' | coord
//!          | 'mean' '(' 'x' [',' index ',' index] ')'
//!          | 'max' '(' expr (',' expr)* ')'
//!          | '(' expr ')'
//! coord   := 'x' digits | 'xd' | 'x' '[' index ']'
//! index   := digits | 'd'
//! ```
//!
//! Coordinates are 1-based; `d` resolves to the state dimension. `t` is the
//! evaluation time, `n`/`N` the current and final intervention date indices.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    Date,
    Dates,
    Coord(usize),
    /// Mean of coordinates `from..=to` (0-based).
    Mean { from: usize, to: usize },
    Max(Vec<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

/// Evaluation point of an expression.
#[derive(Debug, Clone, Copy)]
pub struct EvalPoint<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub date: f64,
    pub dates: f64,
}

impl<'a> EvalPoint<'a> {
    pub fn new(t: f64, x: &'a [f64]) -> Self {
        EvalPoint {
            t,
            x,
            date: 0.0,
            dates: 0.0,
        }
    }
}

impl Expr {
    /// Parses `src` for a state of dimension `dim`.
    pub fn parse(src: &str, dim: usize) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            dim,
            src,
        };
        let e = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.error("trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, p: &EvalPoint<'_>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Time => p.t,
            Expr::Date => p.date,
            Expr::Dates => p.dates,
            Expr::Coord(k) => p.x[*k],
            Expr::Mean { from, to } => {
                let s: f64 = p.x[*from..=*to].iter().sum();
                s / (to - from + 1) as f64
            }
            Expr::Max(args) => args
                .iter()
                .map(|a| a.eval(p))
                .fold(f64::NEG_INFINITY, f64::max),
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Neg(a) => -a.eval(p),
        }
    }

    /// `Some(c)` when the expression does not depend on time, dates or state.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Time | Expr::Date | Expr::Dates | Expr::Coord(_) | Expr::Mean { .. } => None,
            Expr::Max(args) => args
                .iter()
                .map(Expr::as_constant)
                .try_fold(f64::NEG_INFINITY, |acc, c| c.map(|c| acc.max(c))),
            Expr::Add(a, b) => Some(a.as_constant()? + b.as_constant()?),
            Expr::Sub(a, b) => Some(a.as_constant()? - b.as_constant()?),
            Expr::Mul(a, b) => Some(a.as_constant()? * b.as_constant()?),
            Expr::Neg(a) => Some(-a.as_constant()?),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Time => write!(f, "t"),
            Expr::Date => write!(f, "n"),
            Expr::Dates => write!(f, "N"),
            Expr::Coord(k) => write!(f, "x{}", k + 1),
            Expr::Mean { from, to } => write!(f, "mean(x, {}, {})", from + 1, to + 1),
            Expr::Max(args) => {
                write!(f, "max(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' | '\n' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '-' | '\u{2212}' => {
                out.push(Tok::Minus);
                i += 1
            }
            '*' | '\u{00d7}' => {
                out.push(Tok::Star);
                i += 1
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1
            }
            '[' => {
                out.push(Tok::LBracket);
                i += 1
            }
            ']' => {
                out.push(Tok::RBracket);
                i += 1
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| Error::Expr(format!("bad number {s:?} in {src:?}")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => {
                return Err(Error::Expr(format!("unexpected character {other:?} in {src:?}")));
            }
        }
    }
    Ok(out)
}

struct Parser<'s> {
    tokens: Vec<Tok>,
    pos: usize,
    dim: usize,
    src: &'s str,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> Error {
        Error::Expr(format!("{msg} at token {} in {:?}", self.pos, self.src))
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        match self.next() {
            Some(t) if t == tok => Ok(()),
            _ => Err(self.error(&format!("expected {tok:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Star) = self.peek() {
            self.pos += 1;
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn index(&mut self) -> Result<usize> {
        let k = match self.next() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 1.0 => v as usize,
            Some(Tok::Ident(s)) if s == "d" => self.dim,
            _ => return Err(self.error("expected a coordinate index")),
        };
        if k == 0 || k > self.dim {
            return Err(self.error(&format!("coordinate {k} outside 1..={}", self.dim)));
        }
        Ok(k - 1)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident(&name),
            _ => Err(self.error("expected an operand")),
        }
    }

    fn ident(&mut self, name: &str) -> Result<Expr> {
        match name {
            "t" => Ok(Expr::Time),
            "n" => Ok(Expr::Date),
            "N" => Ok(Expr::Dates),
            "d" => Ok(Expr::Const(self.dim as f64)),
            "xd" => Ok(Expr::Coord(self.dim - 1)),
            "x" => {
                self.expect(Tok::LBracket)?;
                let k = self.index()?;
                self.expect(Tok::RBracket)?;
                Ok(Expr::Coord(k))
            }
            "mean" => {
                self.expect(Tok::LParen)?;
                match self.next() {
                    Some(Tok::Ident(s)) if s == "x" => {}
                    _ => return Err(self.error("mean takes the state `x`")),
                }
                let (from, to) = if let Some(Tok::Comma) = self.peek() {
                    self.pos += 1;
                    let from = self.index()?;
                    self.expect(Tok::Comma)?;
                    let to = self.index()?;
                    if to < from {
                        return Err(self.error("empty coordinate range"));
                    }
                    (from, to)
                } else {
                    (0, self.dim - 1)
                };
                self.expect(Tok::RParen)?;
                Ok(Expr::Mean { from, to })
            }
            "max" => {
                self.expect(Tok::LParen)?;
                let mut args = vec![self.expr()?];
                while let Some(Tok::Comma) = self.peek() {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                Ok(Expr::Max(args))
            }
            s if s.starts_with('x') && s[1..].chars().all(|c| c.is_ascii_digit()) => {
                let k: usize = s[1..]
                    .parse()
                    .map_err(|_| self.error("bad coordinate"))?;
                if k == 0 || k > self.dim {
                    return Err(self.error(&format!("coordinate {k} outside 1..={}", self.dim)));
                }
                Ok(Expr::Coord(k - 1))
            }
            other => Err(self.error(&format!("unknown identifier {other:?}"))),
        }
    }
}
