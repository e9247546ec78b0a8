//! Expression language for dynamics.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := base ('^' factor)?          right-associative
//! base   := number | ident | '(' expr ')' | func '(' expr ')' | '-' base
//! func   := exp | ln | sin | cos | tanh | sqrt | abs
//! ```
//!
//! Variables are `x1..xN` and `u1..uM`, 1-based. `a^k` with an integer literal
//! k is lowered to repeated multiplication, so negative bases work; any other
//! exponent is lowered to `exp(k*ln(a))` and needs a positive base at
//! evaluation time.

use std::fmt;
use std::sync::Arc;

use crate::interval::Interval;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarRef {
    /// State coordinate, 0-based.
    X(usize),
    /// Input coordinate, 0-based.
    U(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Clone, Debug)]
pub enum Expr<T> {
    Const(T),
    Var(VarRef),
    Add(Arc<Expr<T>>, Arc<Expr<T>>),
    Sub(Arc<Expr<T>>, Arc<Expr<T>>),
    Mul(Arc<Expr<T>>, Arc<Expr<T>>),
    Div(Arc<Expr<T>>, Arc<Expr<T>>),
    Neg(Arc<Expr<T>>),
    /// Integer power, evaluated as repeated multiplication.
    PowInt(Arc<Expr<T>>, u32),
    Call(Func, Arc<Expr<T>>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {expected}")]
    Syntax { position: usize, expected: &'static str },
    #[error("unknown identifier `{name}` at byte {position}")]
    UnknownIdentifier { position: usize, name: String },
    #[error("variable `{name}` out of range at byte {position}: x1..x{n_x}, u1..u{n_u}")]
    DimensionOutOfRange { position: usize, name: String, n_x: usize, n_u: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("abs has no derivative at zero and is rejected symbolically")]
pub struct NonDifferentiable;

// ---------------------------------------------------------------------------
// parsing

#[derive(Clone, Debug, PartialEq)]
enum Tok<T> {
    Num(T),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex<T: Real>(text: &str) -> Result<Vec<(Tok<T>, usize)>, ParseError> {
    let b = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                    i += 1;
                }
                // optional exponent part
                if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                    let mut j = i + 1;
                    if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                        j += 1;
                    }
                    if j < b.len() && b[j].is_ascii_digit() {
                        i = j;
                        while i < b.len() && b[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| ParseError::Syntax { position: start, expected: "number" })?;
                toks.push((Tok::Num(T::of(v)), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => return Err(ParseError::Syntax { position: i, expected: "token" }),
        }
    }
    Ok(toks)
}

struct Parser<T> {
    toks: Vec<(Tok<T>, usize)>,
    pos: usize,
    end: usize,
    n_x: usize,
    n_u: usize,
}

impl<T: Real> Parser<T> {
    fn peek(&self) -> Option<&Tok<T>> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|&(_, p)| p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok<T>> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Tok<T>, what: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::Syntax { position: self.here(), expected: what })
        }
    }

    fn expr(&mut self) -> Result<Expr<T>, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = add(acc, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr<T>, ParseError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = mul(acc, self.factor()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    acc = div(acc, self.factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr<T>, ParseError> {
        let b = self.base()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let e = self.factor()?;
            Ok(pow(b, e))
        } else {
            Ok(b)
        }
    }

    fn base(&mut self) -> Result<Expr<T>, ParseError> {
        let position = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Minus) => Ok(neg(self.base()?)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "closing parenthesis")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    let f = match name.as_str() {
                        "exp" => Func::Exp,
                        "ln" => Func::Ln,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "tanh" => Func::Tanh,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        _ => return Err(ParseError::UnknownIdentifier { position, name }),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "closing parenthesis")?;
                    Ok(call(f, arg))
                } else {
                    self.variable(position, name)
                }
            }
            _ => Err(ParseError::Syntax { position, expected: "number, variable or (" }),
        }
    }

    fn variable(&self, position: usize, name: String) -> Result<Expr<T>, ParseError> {
        let (kind, digits) = name.split_at(1);
        let index: Option<usize> = if digits.is_empty() || digits.starts_with('0') {
            None
        } else {
            digits.parse().ok()
        };
        let (limit, make): (usize, fn(usize) -> VarRef) = match kind {
            "x" => (self.n_x, VarRef::X),
            "u" => (self.n_u, VarRef::U),
            _ => return Err(ParseError::UnknownIdentifier { position, name }),
        };
        match index {
            None => Err(ParseError::UnknownIdentifier { position, name }),
            Some(i) if i >= 1 && i <= limit => Ok(Expr::Var(make(i - 1))),
            Some(_) => Err(ParseError::DimensionOutOfRange {
                position,
                name,
                n_x: self.n_x,
                n_u: self.n_u,
            }),
        }
    }
}

/// Parse `text` against dimensions `n_x`, `n_u`.
pub fn parse<T: Real>(text: &str, n_x: usize, n_u: usize) -> Result<Expr<T>, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len(), n_x, n_u };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ParseError::Syntax { position: p.here(), expected: "end of input" });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// constructors with constant folding

fn arc<T>(e: Expr<T>) -> Arc<Expr<T>> {
    Arc::new(e)
}

fn as_const<T: Real>(e: &Expr<T>) -> Option<T> {
    match e {
        Expr::Const(v) => Some(*v),
        _ => None,
    }
}

pub fn add<T: Real>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(x), _) if x == T::zero() => b,
        (_, Some(y)) if y == T::zero() => a,
        _ => Expr::Add(arc(a), arc(b)),
    }
}

pub fn sub<T: Real>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (_, Some(y)) if y == T::zero() => a,
        (Some(x), _) if x == T::zero() => neg(b),
        _ => Expr::Sub(arc(a), arc(b)),
    }
}

pub fn mul<T: Real>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(x), _) if x == T::zero() => Expr::Const(T::zero()),
        (_, Some(y)) if y == T::zero() => Expr::Const(T::zero()),
        (Some(x), _) if x == T::one() => b,
        (_, Some(y)) if y == T::one() => a,
        _ => Expr::Mul(arc(a), arc(b)),
    }
}

pub fn div<T: Real>(a: Expr<T>, b: Expr<T>) -> Expr<T> {
    match (as_const(&a), as_const(&b)) {
        (Some(x), Some(y)) if y != T::zero() => Expr::Const(x / y),
        (_, Some(y)) if y == T::one() => a,
        _ => Expr::Div(arc(a), arc(b)),
    }
}

pub fn neg<T: Real>(a: Expr<T>) -> Expr<T> {
    match &a {
        Expr::Const(v) => Expr::Const(-*v),
        Expr::Neg(inner) => inner.as_ref().clone(),
        _ => Expr::Neg(arc(a)),
    }
}

pub fn call<T: Real>(f: Func, a: Expr<T>) -> Expr<T> {
    if let Some(v) = as_const(&a) {
        // fold only when the value is defined; otherwise defer to eval so the
        // domain error surfaces at evaluation time
        let folded = match f {
            Func::Exp => Some(v.exp()),
            Func::Ln if v > T::zero() => Some(v.ln()),
            Func::Sin => Some(v.sin()),
            Func::Cos => Some(v.cos()),
            Func::Tanh => Some(v.tanh()),
            Func::Sqrt if v >= T::zero() => Some(v.sqrt()),
            Func::Abs => Some(v.abs()),
            _ => None,
        };
        if let Some(r) = folded {
            if r.is_finite() {
                return Expr::Const(r);
            }
        }
    }
    Expr::Call(f, arc(a))
}

pub fn powi<T: Real>(a: Expr<T>, n: u32) -> Expr<T> {
    if n == 0 {
        return Expr::Const(T::one());
    }
    if n == 1 {
        return a;
    }
    if let Some(v) = as_const(&a) {
        let mut acc = v;
        for _ in 1..n {
            acc = acc * v;
        }
        if acc.is_finite() {
            return Expr::Const(acc);
        }
    }
    Expr::PowInt(arc(a), n)
}

/// `a^e` lowered per the grammar notes: integer-literal exponents (optionally
/// negated) become repeated multiplication, everything else `exp(e*ln(a))`.
pub fn pow<T: Real>(a: Expr<T>, e: Expr<T>) -> Expr<T> {
    let lit = match &e {
        Expr::Const(v) => Some(*v),
        Expr::Neg(inner) => as_const(inner).map(|v| -v),
        _ => None,
    };
    if let Some(v) = lit {
        if v == v.trunc() && v.abs() <= T::of(1e9) {
            let n = v.abs().to_u32().unwrap_or(0).min(1_000_000);
            let p = powi(a, n);
            return if v < T::zero() { div(Expr::Const(T::one()), p) } else { p };
        }
    }
    call(Func::Exp, mul(e, call(Func::Ln, a)))
}

// ---------------------------------------------------------------------------
// evaluation

impl<T: Real> Expr<T> {
    pub fn eval(&self, x: &[T], u: &[T]) -> Result<T, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(VarRef::X(i)) => x[*i],
            Expr::Var(VarRef::U(i)) => u[*i],
            Expr::Add(a, b) => a.eval(x, u)? + b.eval(x, u)?,
            Expr::Sub(a, b) => a.eval(x, u)? - b.eval(x, u)?,
            Expr::Mul(a, b) => a.eval(x, u)? * b.eval(x, u)?,
            Expr::Div(a, b) => {
                let d = b.eval(x, u)?;
                if d == T::zero() {
                    return Err(EvalError::Domain("division by zero"));
                }
                a.eval(x, u)? / d
            }
            Expr::Neg(a) => -a.eval(x, u)?,
            Expr::PowInt(a, n) => {
                let base = a.eval(x, u)?;
                let mut acc = T::one();
                for _ in 0..*n {
                    acc = acc * base;
                }
                acc
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, u)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Ln => {
                        if v <= T::zero() {
                            return Err(EvalError::Domain("ln of a non-positive value"));
                        }
                        v.ln()
                    }
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tanh => v.tanh(),
                    Func::Sqrt => {
                        if v < T::zero() {
                            return Err(EvalError::Domain("sqrt of a negative value"));
                        }
                        v.sqrt()
                    }
                    Func::Abs => v.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::Domain("overflow to a non-finite value"))
        }
    }

    /// Sound enclosure of the expression over the box `x` × `u`; every point
    /// evaluation inside the box lands inside the result.
    pub fn eval_interval(
        &self,
        x: &[Interval<T>],
        u: &[Interval<T>],
    ) -> Result<Interval<T>, EvalError> {
        let v = match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Var(VarRef::X(i)) => x[*i],
            Expr::Var(VarRef::U(i)) => u[*i],
            Expr::Add(a, b) => a.eval_interval(x, u)?.add(b.eval_interval(x, u)?),
            Expr::Sub(a, b) => a.eval_interval(x, u)?.sub(b.eval_interval(x, u)?),
            Expr::Mul(a, b) => a.eval_interval(x, u)?.mul(b.eval_interval(x, u)?),
            Expr::Div(a, b) => a
                .eval_interval(x, u)?
                .div(b.eval_interval(x, u)?)
                .ok_or(EvalError::Domain("division by an interval containing zero"))?,
            Expr::Neg(a) => a.eval_interval(x, u)?.neg(),
            Expr::PowInt(a, n) => a.eval_interval(x, u)?.powi(*n),
            Expr::Call(f, a) => {
                let v = a.eval_interval(x, u)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Ln => {
                        v.ln().ok_or(EvalError::Domain("ln over an interval reaching zero"))?
                    }
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tanh => v.tanh(),
                    Func::Sqrt => {
                        v.sqrt().ok_or(EvalError::Domain("sqrt over a negative interval"))?
                    }
                    Func::Abs => v.abs(),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::Domain("overflow to a non-finite value"))
        }
    }

    /// Symbolic partial derivative. `abs` is rejected: its kink would poison
    /// the Jacobian and Hessian enclosures.
    pub fn differentiate(&self, var: VarRef) -> Result<Expr<T>, NonDifferentiable> {
        Ok(match self {
            Expr::Const(_) => Expr::Const(T::zero()),
            Expr::Var(v) => {
                if *v == var {
                    Expr::Const(T::one())
                } else {
                    Expr::Const(T::zero())
                }
            }
            Expr::Add(a, b) => add(a.differentiate(var)?, b.differentiate(var)?),
            Expr::Sub(a, b) => sub(a.differentiate(var)?, b.differentiate(var)?),
            Expr::Mul(a, b) => {
                let da = a.differentiate(var)?;
                let db = b.differentiate(var)?;
                add(mul(da, b.as_ref().clone()), mul(a.as_ref().clone(), db))
            }
            Expr::Div(a, b) => {
                let da = a.differentiate(var)?;
                let db = b.differentiate(var)?;
                let num = sub(mul(da, b.as_ref().clone()), mul(a.as_ref().clone(), db));
                div(num, powi(b.as_ref().clone(), 2))
            }
            Expr::Neg(a) => neg(a.differentiate(var)?),
            Expr::PowInt(a, n) => {
                let da = a.differentiate(var)?;
                mul(mul(Expr::Const(T::of(*n as f64)), powi(a.as_ref().clone(), n - 1)), da)
            }
            Expr::Call(f, a) => {
                let da = a.differentiate(var)?;
                let inner = a.as_ref().clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, inner),
                    Func::Ln => div(Expr::Const(T::one()), inner),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Tanh => {
                        sub(Expr::Const(T::one()), powi(call(Func::Tanh, inner), 2))
                    }
                    Func::Sqrt => div(
                        Expr::Const(T::one()),
                        mul(Expr::Const(T::of(2.0)), call(Func::Sqrt, inner)),
                    ),
                    Func::Abs => return Err(NonDifferentiable),
                };
                mul(outer, da)
            }
        })
    }
}

// ---------------------------------------------------------------------------
// printing

impl<T: Real> Expr<T> {
    fn prec(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::PowInt(..) => 4,
            Expr::Const(..) | Expr::Var(..) | Expr::Call(..) => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let prec = self.prec();
        if prec < parent {
            write!(f, "(")?;
        }
        match self {
            Expr::Const(v) => write!(f, "{v:?}")?,
            Expr::Var(VarRef::X(i)) => write!(f, "x{}", i + 1)?,
            Expr::Var(VarRef::U(i)) => write!(f, "u{}", i + 1)?,
            Expr::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " + ")?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " - ")?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "*")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Neg(a) => {
                write!(f, "-")?;
                // the parser applies unary minus before `^`, so a power
                // operand must keep its parentheses: -(x1^2), not -x1^2
                a.fmt_prec(f, 5)?;
            }
            Expr::PowInt(a, n) => {
                a.fmt_prec(f, 5)?;
                write!(f, "^{n}")?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if prec < parent {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl<T: Real> fmt::Display for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}
