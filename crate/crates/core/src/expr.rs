//! Closed-form expression language for map branches and observables.
//!
//! Expressions are parsed once into an immutable [`Expr`] tree and then
//! evaluated either in plain `f64` ([`Expr::eval`]) or with a forward-mode
//! dual number ([`Expr::eval_with_derivative`]), which yields the exact first
//! derivative up to rounding.
//!
//! The grammar (see `docs/expr-grammar.md`):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right-associative
//! atom   := number | 'x' | 'pi' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | log | sqrt | abs
//! ```

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Sin, Func::Cos, Func::Exp, Func::Log, Func::Sqrt, Func::Abs];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Abstract syntax tree of a parsed expression in the single variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var,
    Num(f64),
    Pi,
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyInput,
    UnbalancedParen,
    UnknownIdentifier(String),
    EmptyOperand,
    UnexpectedChar(char),
    BadNumber(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::EmptyInput => write!(f, "empty expression"),
            ParseErrorKind::UnbalancedParen => write!(f, "unbalanced parenthesis"),
            ParseErrorKind::UnknownIdentifier(id) => write!(f, "unknown identifier `{id}`"),
            ParseErrorKind::EmptyOperand => write!(f, "missing operand"),
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character `{c}`"),
            ParseErrorKind::BadNumber(s) => write!(f, "malformed number `{s}`"),
        }
    }
}

/// Syntax error with the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("{func} is undefined at {arg}")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("expression is not differentiable at the evaluation point")]
    NotDifferentiable,
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
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
    End,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' | b'(' | b')' => {
                let tok = match c {
                    b'+' => Tok::Plus,
                    b'-' => Tok::Minus,
                    b'*' => Tok::Star,
                    b'/' => Tok::Slash,
                    b'^' => Tok::Caret,
                    b'(' => Tok::LParen,
                    _ => Tok::RParen,
                };
                out.push((i, tok));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
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
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s = &text[start..i];
                let v = f64::from_str(s).map_err(|_| ParseError {
                    offset: start,
                    kind: ParseErrorKind::BadNumber(s.to_string()),
                })?;
                out.push((start, Tok::Num(v)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(ParseError { offset: i, kind: ParseErrorKind::UnexpectedChar(ch) });
            }
        }
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { offset: self.offset(), kind }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
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
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (offset, tok) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::Var),
                "pi" => Ok(Expr::Pi),
                _ => match Func::from_name(&name) {
                    Some(func) => {
                        if *self.peek() != Tok::LParen {
                            return Err(self.err(ParseErrorKind::UnexpectedChar(
                                self.describe_current(),
                            )));
                        }
                        let arg = self.parenthesized()?;
                        Ok(Expr::Call(func, Box::new(arg)))
                    }
                    None => Err(ParseError {
                        offset,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    }),
                },
            },
            Tok::LParen => {
                self.pos -= 1;
                self.parenthesized()
            }
            // `)` as the very first token has no matching `(`; anywhere else
            // it follows an operator or `(` and the operand is missing.
            Tok::RParen if self.pos == 1 => {
                Err(ParseError { offset, kind: ParseErrorKind::UnbalancedParen })
            }
            _ => Err(ParseError { offset, kind: ParseErrorKind::EmptyOperand }),
        }
    }

    fn describe_current(&self) -> char {
        match self.peek() {
            Tok::Num(_) => '0',
            Tok::Ident(s) => s.chars().next().unwrap_or('?'),
            Tok::Plus => '+',
            Tok::Minus => '-',
            Tok::Star => '*',
            Tok::Slash => '/',
            Tok::Caret => '^',
            Tok::LParen => '(',
            Tok::RParen => ')',
            Tok::End => ' ',
        }
    }

    fn parenthesized(&mut self) -> Result<Expr, ParseError> {
        let (open, _) = self.bump();
        let inner = self.expr()?;
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(inner)
            }
            Tok::End => Err(ParseError { offset: open, kind: ParseErrorKind::UnbalancedParen }),
            _ => Err(self.err(ParseErrorKind::UnexpectedChar(self.describe_current()))),
        }
    }
}

/// Parses `text` into an expression tree.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    if toks.len() == 1 {
        return Err(ParseError { offset: 0, kind: ParseErrorKind::EmptyInput });
    }
    let mut parser = Parser { toks, pos: 0 };
    let e = parser.expr()?;
    match parser.peek() {
        Tok::End => Ok(e),
        Tok::RParen => Err(parser.err(ParseErrorKind::UnbalancedParen)),
        _ => Err(parser.err(ParseErrorKind::UnexpectedChar(parser.describe_current()))),
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

// ---------------------------------------------------------------------------
// Printing

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var => write!(f, "x"),
            Expr::Pi => write!(f, "pi"),
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "-{:?}", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Neg(inner) => {
                write!(f, "-")?;
                inner.write_child(f, 3)
            }
            Expr::Binary(op, lhs, rhs) => {
                let prec = op.precedence();
                if *op == BinOp::Pow {
                    lhs.write_child(f, 5)?;
                    write!(f, "^")?;
                    rhs.write_child(f, 3)
                } else {
                    lhs.write_child(f, prec)?;
                    write!(f, " {} ", op.symbol())?;
                    rhs.write_child(f, prec + 1)
                }
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

/// A forward-mode dual number `value + deriv·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub fn new(value: f64, deriv: f64) -> Self {
        Dual { value, deriv }
    }

    pub fn constant(value: f64) -> Self {
        Dual { value, deriv: 0.0 }
    }

    pub fn variable(value: f64) -> Self {
        Dual { value, deriv: 1.0 }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.value + o.value, self.deriv + o.deriv)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.value - o.value, self.deriv - o.deriv)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.value * o.value, self.value * o.deriv + self.deriv * o.value)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual::new(
            self.value / o.value,
            (self.deriv * o.value - self.value * o.deriv) / (o.value * o.value),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.deriv)
    }
}

trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn lift(v: f64) -> Self;
    fn value(self) -> f64;
    fn div(self, o: Self) -> Result<Self, EvalError>;
    fn pow(self, o: Self) -> Result<Self, EvalError>;
    fn apply(self, func: Func) -> Result<Self, EvalError>;
}

fn check_domain(func: Func, arg: f64) -> Result<(), EvalError> {
    let ok = match func {
        Func::Log => arg > 0.0,
        Func::Sqrt => arg >= 0.0,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(EvalError::Domain { func: func.name(), arg })
    }
}

fn real_pow(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    let v = base.powf(exponent);
    if v.is_nan() {
        return Err(EvalError::Domain { func: "^", arg: base });
    }
    Ok(v)
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }

    fn value(self) -> f64 {
        self
    }

    fn div(self, o: Self) -> Result<Self, EvalError> {
        if o == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(self / o)
    }

    fn pow(self, o: Self) -> Result<Self, EvalError> {
        real_pow(self, o)
    }

    fn apply(self, func: Func) -> Result<Self, EvalError> {
        check_domain(func, self)?;
        Ok(match func {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Exp => self.exp(),
            Func::Log => self.ln(),
            Func::Sqrt => self.sqrt(),
            Func::Abs => self.abs(),
        })
    }
}

impl Scalar for Dual {
    fn lift(v: f64) -> Self {
        Dual::constant(v)
    }

    fn value(self) -> f64 {
        self.value
    }

    fn div(self, o: Self) -> Result<Self, EvalError> {
        if o.value == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(self / o)
    }

    fn pow(self, o: Self) -> Result<Self, EvalError> {
        let value = real_pow(self.value, o.value)?;
        let deriv = if o.deriv == 0.0 {
            // d/dx a^c = c a^(c-1) a'
            if self.deriv == 0.0 || o.value == 0.0 {
                0.0
            } else {
                o.value * real_pow(self.value, o.value - 1.0)? * self.deriv
            }
        } else {
            if self.value <= 0.0 {
                return Err(EvalError::Domain { func: "^", arg: self.value });
            }
            value * (o.deriv * self.value.ln() + o.value * self.deriv / self.value)
        };
        Ok(Dual::new(value, deriv))
    }

    fn apply(self, func: Func) -> Result<Self, EvalError> {
        let a = self.value;
        check_domain(func, a)?;
        let (v, dv) = match func {
            Func::Sin => (a.sin(), a.cos()),
            Func::Cos => (a.cos(), -a.sin()),
            Func::Exp => (a.exp(), a.exp()),
            Func::Log => (a.ln(), 1.0 / a),
            Func::Sqrt => {
                let r = a.sqrt();
                if r == 0.0 {
                    if self.deriv != 0.0 {
                        return Err(EvalError::NotDifferentiable);
                    }
                    return Ok(Dual::new(0.0, 0.0));
                }
                (r, 0.5 / r)
            }
            // Derivative of |a| at the kink is taken to be 0.
            Func::Abs => (
                a.abs(),
                if a > 0.0 {
                    1.0
                } else if a < 0.0 {
                    -1.0
                } else {
                    0.0
                },
            ),
        };
        Ok(Dual::new(v, dv * self.deriv))
    }
}

fn eval_generic<S: Scalar>(e: &Expr, x: S) -> Result<S, EvalError> {
    Ok(match e {
        Expr::Var => x,
        Expr::Num(v) => S::lift(*v),
        Expr::Pi => S::lift(std::f64::consts::PI),
        Expr::Neg(inner) => -eval_generic(inner, x)?,
        Expr::Binary(op, lhs, rhs) => {
            let a = eval_generic(lhs, x)?;
            let b = eval_generic(rhs, x)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a.div(b)?,
                BinOp::Pow => a.pow(b)?,
            }
        }
        Expr::Call(func, arg) => eval_generic(arg, x)?.apply(*func)?,
    })
}

impl Expr {
    /// Evaluates the expression at `x`.
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let v = eval_generic(self, x)?;
        if !v.is_finite() {
            return Err(EvalError::NonFinite);
        }
        Ok(v)
    }

    /// Evaluates the expression and its first derivative at `x` by dual-number
    /// propagation.
    pub fn eval_with_derivative(&self, x: f64) -> Result<(f64, f64), EvalError> {
        let d = eval_generic(self, Dual::variable(x))?;
        if !d.value.is_finite() {
            return Err(EvalError::NonFinite);
        }
        if !d.deriv.is_finite() {
            return Err(EvalError::NotDifferentiable);
        }
        Ok((d.value(), d.deriv))
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Builds `c[0] + c[1] x + … + c[d] x^d` in Horner form.
    pub fn polynomial(coeffs: &[f64]) -> Expr {
        let mut iter = coeffs.iter().rev();
        let mut acc = match iter.next() {
            Some(&c) => Expr::Num(c),
            None => return Expr::Num(0.0),
        };
        for &c in iter {
            acc = Expr::binary(BinOp::Add, Expr::Num(c), Expr::binary(BinOp::Mul, Expr::Var, acc));
        }
        acc
    }
}
