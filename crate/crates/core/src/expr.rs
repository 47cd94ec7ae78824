//! Scalar expressions: parsing, evaluation and symbolic differentiation.
//!
//! The grammar is fixed and tiny. Variables are the state coordinates
//! `x1..xn` and control parameters `u1..ud`; functions are `sin`, `cos`,
//! `exp`, `sqrt`, `abs` and the smooth bump `bump(s, a, b)` with constant
//! bounds. Precedence: `^` (right-assoc) > unary minus > `*`/`/` > `+`/`-`.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("`{name}` expects {expected} arguments, got {got} (byte {offset})")]
    ArityMismatch {
        name: String,
        expected: usize,
        got: usize,
        offset: usize,
    },
    #[error("bump bounds must be constant expressions (byte {offset})")]
    NonConstantBumpBound { offset: usize },
    #[error("pow exponent must be a constant expression (byte {offset})")]
    NonConstantExponent { offset: usize },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    /// State coordinate `x{i+1}`.
    X(usize),
    /// Control parameter `u{i+1}`.
    U(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U(i) => write!(f, "u{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression AST. Immutable after construction.
///
/// `Bump { order: 0, .. }` is the smooth bump
/// `bump(s, a, b) = exp(-1/((s-a)(b-s)))` for `a < s < b`, 0 otherwise.
/// `order > 0` is its order-th derivative with respect to `s` (written
/// `bumpd(k, s, a, b)`); it only arises from differentiation but parses too
/// so that printing round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Bump {
        order: u32,
        arg: Box<Expr>,
        lo: f64,
        hi: f64,
    },
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn x(i: usize) -> Expr {
        Expr::Var(Var::X(i))
    }

    pub fn u(i: usize) -> Expr {
        Expr::Var(Var::U(i))
    }

    pub fn bump(arg: Expr, lo: f64, hi: f64) -> Expr {
        Expr::Bump {
            order: 0,
            arg: Box::new(arg),
            lo,
            hi,
        }
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Smart constructors with light simplification
// ---------------------------------------------------------------------------

pub fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x + y),
        (Some(0.0), None) => b,
        (None, Some(0.0)) => a,
        _ => Expr::Binary(BinOp::Add, Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x - y),
        (None, Some(0.0)) => a,
        (Some(0.0), None) => neg(b),
        _ => Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::Const(x * y),
        (Some(0.0), None) | (None, Some(0.0)) => Expr::Const(0.0),
        (Some(1.0), None) => b,
        (None, Some(1.0)) => a,
        _ => Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(0.0), None) => Expr::Const(0.0),
        (None, Some(1.0)) => a,
        _ => Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)),
    }
}

pub fn neg(a: Expr) -> Expr {
    match a.as_const() {
        Some(x) => Expr::Const(-x),
        None => Expr::Unary(UnOp::Neg, Box::new(a)),
    }
}

pub fn unary(op: UnOp, a: Expr) -> Expr {
    if op == UnOp::Neg {
        return neg(a);
    }
    Expr::Unary(op, Box::new(a))
}

pub fn pow(a: Expr, exponent: f64) -> Expr {
    if exponent == 1.0 {
        return a;
    }
    if exponent == 0.0 {
        return Expr::Const(1.0);
    }
    if let Some(x) = a.as_const() {
        return Expr::Const(x.powf(exponent));
    }
    Expr::Binary(BinOp::Pow, Box::new(a), Box::new(Expr::Const(exponent)))
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

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
    Comma,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.src.len() {
            return Ok((Tok::Eof, start));
        }
        let c = self.src[self.pos];
        let simple = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = simple {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = self.pos;
            let mut seen_dot = false;
            while end < self.src.len() {
                let d = self.src[end];
                if d.is_ascii_digit() {
                    end += 1;
                } else if d == b'.' && !seen_dot {
                    seen_dot = true;
                    end += 1;
                } else if (d == b'e' || d == b'E')
                    && end > self.pos
                    && end + 1 < self.src.len()
                    && (self.src[end + 1].is_ascii_digit()
                        || ((self.src[end + 1] == b'+' || self.src[end + 1] == b'-')
                            && end + 2 < self.src.len()
                            && self.src[end + 2].is_ascii_digit()))
                {
                    end += 2;
                    while end < self.src.len() && self.src[end].is_ascii_digit() {
                        end += 1;
                    }
                    break;
                } else {
                    break;
                }
            }
            let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
            let value = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("invalid number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = self.pos;
            while end < self.src.len()
                && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
            {
                end += 1;
            }
            let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap().to_string();
            self.pos = end;
            return Ok((Tok::Ident(text), start));
        }
        Err(ExprError::Syntax {
            offset: start,
            message: format!("unexpected character `{}`", c as char),
        })
    }
}

// ---------------------------------------------------------------------------
// Parser (precedence climbing)
// ---------------------------------------------------------------------------

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    tok_pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ExprError> {
        let mut lexer = Lexer::new(src);
        let (tok, tok_pos) = lexer.next()?;
        Ok(Parser { lexer, tok, tok_pos })
    }

    fn bump_token(&mut self) -> Result<(), ExprError> {
        let (tok, pos) = self.lexer.next()?;
        self.tok = tok;
        self.tok_pos = pos;
        Ok(())
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        if self.tok == want {
            self.bump_token()
        } else {
            Err(ExprError::Syntax {
                offset: self.tok_pos,
                message: format!("expected {what}, found {:?}", self.tok),
            })
        }
    }

    /// binding powers: add/sub = 1, mul/div = 2, unary minus = 3, pow = 4
    fn expr_bp(&mut self, min_bp: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.atom()?;
        loop {
            let (op, l_bp, r_bp) = match self.tok {
                Tok::Plus => (BinOp::Add, 1, 2),
                Tok::Minus => (BinOp::Sub, 1, 2),
                Tok::Star => (BinOp::Mul, 3, 4),
                Tok::Slash => (BinOp::Div, 3, 4),
                // right-associative, binds tighter than unary minus
                Tok::Caret => (BinOp::Pow, 7, 7),
                _ => break,
            };
            if l_bp < min_bp {
                break;
            }
            let op_pos = self.tok_pos;
            self.bump_token()?;
            let rhs = self.expr_bp(r_bp)?;
            lhs = match op {
                BinOp::Add => Expr::Binary(BinOp::Add, Box::new(lhs), Box::new(rhs)),
                BinOp::Sub => Expr::Binary(BinOp::Sub, Box::new(lhs), Box::new(rhs)),
                BinOp::Mul => Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs)),
                BinOp::Div => Expr::Binary(BinOp::Div, Box::new(lhs), Box::new(rhs)),
                BinOp::Pow => {
                    let exp = const_fold(&rhs).ok_or(ExprError::NonConstantExponent {
                        offset: op_pos,
                    })?;
                    Expr::Binary(BinOp::Pow, Box::new(lhs), Box::new(Expr::Const(exp)))
                }
            };
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump_token()?;
                // allow `2^3` with a numeric base
                if self.tok == Tok::Caret {
                    self.bump_token()?;
                    let pos = self.tok_pos;
                    let rhs = self.expr_bp(7)?;
                    let exp = const_fold(&rhs)
                        .ok_or(ExprError::NonConstantExponent { offset: pos })?;
                    return Ok(Expr::Binary(
                        BinOp::Pow,
                        Box::new(Expr::Const(v)),
                        Box::new(Expr::Const(exp)),
                    ));
                }
                Ok(Expr::Const(v))
            }
            Tok::Minus => {
                self.bump_token()?;
                let inner = self.expr_bp(6)?;
                // fold "-<literal>" into a negative constant so printing and
                // reparsing are inverse to each other
                match inner {
                    Expr::Const(v) => Ok(Expr::Const(-v)),
                    other => Ok(Expr::Unary(UnOp::Neg, Box::new(other))),
                }
            }
            Tok::LParen => {
                self.bump_token()?;
                let inner = self.expr_bp(0)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let name_pos = self.tok_pos;
                self.bump_token()?;
                if self.tok == Tok::LParen {
                    self.bump_token()?;
                    let mut args = Vec::new();
                    if self.tok != Tok::RParen {
                        loop {
                            args.push(self.expr_bp(0)?);
                            if self.tok == Tok::Comma {
                                self.bump_token()?;
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    self.call(&name, args, name_pos)
                } else {
                    self.variable(&name, name_pos)
                }
            }
            _ => Err(ExprError::Syntax {
                offset: self.tok_pos,
                message: format!(
                    "expected a number, variable, function or `(`, found {:?}",
                    self.tok
                ),
            }),
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Expr, ExprError> {
        let (head, tail) = name.split_at(1);
        let index: Option<usize> = tail.parse().ok().filter(|&i| i >= 1);
        match (head, index) {
            ("x", Some(i)) => Ok(Expr::Var(Var::X(i - 1))),
            ("u", Some(i)) => Ok(Expr::Var(Var::U(i - 1))),
            _ => Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                offset,
            }),
        }
    }

    fn call(&self, name: &str, mut args: Vec<Expr>, offset: usize) -> Result<Expr, ExprError> {
        let un = match name {
            "sin" => Some(UnOp::Sin),
            "cos" => Some(UnOp::Cos),
            "exp" => Some(UnOp::Exp),
            "sqrt" => Some(UnOp::Sqrt),
            "abs" => Some(UnOp::Abs),
            _ => None,
        };
        if let Some(op) = un {
            if args.len() != 1 {
                return Err(ExprError::ArityMismatch {
                    name: name.to_string(),
                    expected: 1,
                    got: args.len(),
                    offset,
                });
            }
            return Ok(Expr::Unary(op, Box::new(args.pop().unwrap())));
        }
        match name {
            "bump" => {
                if args.len() != 3 {
                    return Err(ExprError::ArityMismatch {
                        name: name.to_string(),
                        expected: 3,
                        got: args.len(),
                        offset,
                    });
                }
                let hi = const_fold(&args[2])
                    .ok_or(ExprError::NonConstantBumpBound { offset })?;
                let lo = const_fold(&args[1])
                    .ok_or(ExprError::NonConstantBumpBound { offset })?;
                Ok(Expr::Bump {
                    order: 0,
                    arg: Box::new(args.swap_remove(0)),
                    lo,
                    hi,
                })
            }
            "bumpd" => {
                if args.len() != 4 {
                    return Err(ExprError::ArityMismatch {
                        name: name.to_string(),
                        expected: 4,
                        got: args.len(),
                        offset,
                    });
                }
                let order = const_fold(&args[0])
                    .filter(|k| *k >= 0.0 && k.fract() == 0.0)
                    .ok_or(ExprError::Syntax {
                        offset,
                        message: "bumpd order must be a nonnegative integer constant".into(),
                    })? as u32;
                let hi = const_fold(&args[3])
                    .ok_or(ExprError::NonConstantBumpBound { offset })?;
                let lo = const_fold(&args[2])
                    .ok_or(ExprError::NonConstantBumpBound { offset })?;
                Ok(Expr::Bump {
                    order,
                    arg: Box::new(args.swap_remove(1)),
                    lo,
                    hi,
                })
            }
            _ => Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                offset,
            }),
        }
    }
}

/// Evaluate an expression containing no variables, if possible.
fn const_fold(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(c) => Some(*c),
        Expr::Var(_) => None,
        Expr::Unary(op, a) => {
            let a = const_fold(a)?;
            Some(apply_unary(*op, a))
        }
        Expr::Binary(op, a, b) => {
            let a = const_fold(a)?;
            let b = const_fold(b)?;
            match op {
                BinOp::Add => Some(a + b),
                BinOp::Sub => Some(a - b),
                BinOp::Mul => Some(a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        None
                    } else {
                        Some(a / b)
                    }
                }
                BinOp::Pow => Some(a.powf(b)),
            }
        }
        Expr::Bump { order, arg, lo, hi } => {
            let s = const_fold(arg)?;
            Some(bump_deriv(s, *lo, *hi, *order as usize))
        }
    }
}

/// Parse a source string into an AST. Errors carry 0-based byte offsets.
pub fn parse(source: &str) -> Result<Expr, ExprError> {
    let mut p = Parser::new(source)?;
    let e = p.expr_bp(0)?;
    if p.tok != Tok::Eof {
        return Err(ExprError::Syntax {
            offset: p.tok_pos,
            message: format!("unexpected trailing input {:?}", p.tok),
        });
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

fn apply_unary(op: UnOp, a: f64) -> f64 {
    match op {
        UnOp::Neg => -a,
        UnOp::Sin => a.sin(),
        UnOp::Cos => a.cos(),
        UnOp::Exp => a.exp(),
        UnOp::Sqrt => a.sqrt(),
        UnOp::Abs => a.abs(),
    }
}

/// `k`-th derivative of `bump(s, a, b) = exp(-1/((s-a)(b-s)))` with respect
/// to `s`. Identically zero (all orders) outside the open support.
///
/// Inside the support the value is computed with truncated Taylor (jet)
/// arithmetic: propagate the jet of `g = (s-a)(b-s)`, take the reciprocal
/// and exponential series, and read off the k-th coefficient.
pub fn bump_deriv(s: f64, a: f64, b: f64, k: usize) -> f64 {
    if !(s > a && s < b) {
        return 0.0;
    }
    let n = k + 1;
    // Taylor coefficients of g(s + t) = (s-a)(b-s) + (a+b-2s) t - t^2
    let mut g = vec![0.0; n.max(3)];
    g[0] = (s - a) * (b - s);
    if n > 1 {
        g[1] = (a + b) - 2.0 * s;
    }
    if n > 2 {
        g[2] = -1.0;
    }
    // w = 1/g by the division recurrence
    let mut w = vec![0.0; n];
    w[0] = 1.0 / g[0];
    for i in 1..n {
        let mut acc = 0.0;
        for j in 1..=i {
            acc += g[j] * w[i - j];
        }
        w[i] = -acc / g[0];
    }
    // h = -w, f = exp(h) via f' = f h'  =>  i f_i = sum_{j=1..i} j h_j f_{i-j}
    let h: Vec<f64> = w.iter().map(|x| -x).collect();
    let mut f = vec![0.0; n];
    f[0] = h[0].exp();
    for i in 1..n {
        let mut acc = 0.0;
        for j in 1..=i {
            acc += (j as f64) * h[j] * f[i - j];
        }
        f[i] = acc / i as f64;
    }
    // k-th derivative = k! * f_k
    let mut fact = 1.0;
    for j in 1..=k {
        fact *= j as f64;
    }
    f[k] * fact
}

/// Variable bindings for evaluation: state coordinates and control values.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub x: &'a [f64],
    pub u: &'a [f64],
}

impl Expr {
    pub fn eval(&self, env: &Env) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(Var::X(i)) => env
                .x
                .get(*i)
                .copied()
                .ok_or_else(|| ExprError::UnboundVariable(format!("x{}", i + 1))),
            Expr::Var(Var::U(i)) => env
                .u
                .get(*i)
                .copied()
                .ok_or_else(|| ExprError::UnboundVariable(format!("u{}", i + 1))),
            Expr::Unary(op, a) => Ok(apply_unary(*op, a.eval(env)?)),
            Expr::Binary(op, a, b) => {
                let a = a.eval(env)?;
                let b = b.eval(env)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(ExprError::DivisionByZero)
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => Ok(a.powf(b)),
                }
            }
            Expr::Bump { order, arg, lo, hi } => {
                let s = arg.eval(env)?;
                Ok(bump_deriv(s, *lo, *hi, *order as usize))
            }
        }
    }

    /// Convenience evaluation with named bindings (`x1`, `u2`, ...).
    pub fn eval_map(&self, bindings: &HashMap<String, f64>) -> Result<f64, ExprError> {
        let mut x = Vec::new();
        let mut u = Vec::new();
        for (name, &value) in bindings {
            let (head, tail) = name.split_at(1);
            if let Ok(i) = tail.parse::<usize>() {
                if i >= 1 {
                    let store = match head {
                        "x" => Some(&mut x),
                        "u" => Some(&mut u),
                        _ => None,
                    };
                    if let Some(store) = store {
                        if store.len() < i {
                            store.resize(i, f64::NAN);
                        }
                        store[i - 1] = value;
                        continue;
                    }
                }
            }
            return Err(ExprError::UnboundVariable(name.clone()));
        }
        self.eval(&Env { x: &x, u: &u })
    }

    /// Symbolic partial derivative with light simplification.
    pub fn diff(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => {
                if *v == var {
                    Expr::Const(1.0)
                } else {
                    Expr::Const(0.0)
                }
            }
            Expr::Unary(op, a) => {
                let da = a.diff(var);
                if da == Expr::Const(0.0) {
                    return Expr::Const(0.0);
                }
                let a = (**a).clone();
                match op {
                    UnOp::Neg => neg(da),
                    UnOp::Sin => mul(unary(UnOp::Cos, a), da),
                    UnOp::Cos => neg(mul(unary(UnOp::Sin, a), da)),
                    UnOp::Exp => mul(unary(UnOp::Exp, a), da),
                    UnOp::Sqrt => div(da, mul(Expr::Const(2.0), unary(UnOp::Sqrt, a))),
                    // sign(a) * da, expressed as a/|a|; errors at a = 0
                    UnOp::Abs => mul(div(a.clone(), unary(UnOp::Abs, a)), da),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinOp::Add => add(da, db),
                    BinOp::Sub => sub(da, db),
                    BinOp::Mul => add(mul(da, b), mul(a, db)),
                    BinOp::Div => div(sub(mul(da, b.clone()), mul(a, db)), mul(b.clone(), b)),
                    BinOp::Pow => {
                        let exponent = b.as_const().expect("pow exponent is constant");
                        mul(
                            mul(Expr::Const(exponent), pow(a, exponent - 1.0)),
                            da,
                        )
                    }
                }
            }
            Expr::Bump { order, arg, lo, hi } => {
                let da = arg.diff(var);
                if da == Expr::Const(0.0) {
                    return Expr::Const(0.0);
                }
                mul(
                    Expr::Bump {
                        order: order + 1,
                        arg: arg.clone(),
                        lo: *lo,
                        hi: *hi,
                    },
                    da,
                )
            }
        }
    }

    /// Substitute fixed control values, folding `u_i` variables to constants.
    pub fn bind_controls(&self, u: &[f64]) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(Var::U(i)) => Expr::Const(u.get(*i).copied().unwrap_or(f64::NAN)),
            Expr::Var(Var::X(_)) => self.clone(),
            Expr::Unary(op, a) => unary(*op, a.bind_controls(u)),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.bind_controls(u), b.bind_controls(u));
                match op {
                    BinOp::Add => add(a, b),
                    BinOp::Sub => sub(a, b),
                    BinOp::Mul => mul(a, b),
                    BinOp::Div => div(a, b),
                    BinOp::Pow => Expr::Binary(BinOp::Pow, Box::new(a), Box::new(b)),
                }
            }
            Expr::Bump { order, arg, lo, hi } => Expr::Bump {
                order: *order,
                arg: Box::new(arg.bind_controls(u)),
                lo: *lo,
                hi: *hi,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Printing (round-trips through `parse`)
// ---------------------------------------------------------------------------

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add, _, _) | Expr::Binary(BinOp::Sub, _, _) => 1,
        Expr::Binary(BinOp::Mul, _, _) | Expr::Binary(BinOp::Div, _, _) => 2,
        Expr::Unary(UnOp::Neg, _) => 3,
        Expr::Binary(BinOp::Pow, _, _) => 4,
        _ => 5,
    }
}

fn fmt_child(e: &Expr, parent_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if precedence(e) < parent_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnOp::Neg, a) => {
                write!(f, "-")?;
                fmt_child(a, 4, f)
            }
            Expr::Unary(op, a) => {
                let name = match op {
                    UnOp::Sin => "sin",
                    UnOp::Cos => "cos",
                    UnOp::Exp => "exp",
                    UnOp::Sqrt => "sqrt",
                    UnOp::Abs => "abs",
                    UnOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                    BinOp::Pow => ("^", 4),
                };
                match op {
                    BinOp::Pow => {
                        // right-assoc; parenthesize a left child of equal precedence
                        if precedence(a) <= 4 {
                            write!(f, "({a})")?;
                        } else {
                            write!(f, "{a}")?;
                        }
                        write!(f, "^{b}")
                    }
                    _ => {
                        // left-assoc: a right child of equal precedence needs
                        // parens to keep the tree shape through a reparse
                        fmt_child(a, prec, f)?;
                        write!(f, " {sym} ")?;
                        fmt_child(b, prec + 1, f)
                    }
                }
            }
            Expr::Bump { order: 0, arg, lo, hi } => {
                write!(f, "bump({arg}, {lo:?}, {hi:?})")
            }
            Expr::Bump { order, arg, lo, hi } => {
                write!(f, "bumpd({order}, {arg}, {lo:?}, {hi:?})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eval_str(src: &str, x: &[f64], u: &[f64]) -> f64 {
        parse(src).unwrap().eval(&Env { x, u }).unwrap()
    }

    #[test]
    fn precedence_of_unary_minus_and_mul() {
        let e = parse("-sin(x1)*sin(x1)").unwrap();
        // unary minus binds tighter than `*`: Mul(Neg(Sin x1), Sin x1)
        match &e {
            Expr::Binary(BinOp::Mul, a, b) => {
                assert!(matches!(**a, Expr::Unary(UnOp::Neg, _)));
                assert!(matches!(**b, Expr::Unary(UnOp::Sin, _)));
            }
            other => panic!("unexpected parse: {other:?}"),
        }
        assert_relative_eq!(
            e.eval(&Env { x: &[1.3], u: &[] }).unwrap(),
            -(1.3f64.sin() * 1.3f64.sin()),
            epsilon = 1e-15
        );
    }

    #[test]
    fn bump_call_parses() {
        let e = parse("x1 + u1*bump(x1, 0.25, 0.5)").unwrap();
        match &e {
            Expr::Binary(BinOp::Add, a, b) => {
                assert!(matches!(**a, Expr::Var(Var::X(0))));
                assert!(matches!(**b, Expr::Binary(BinOp::Mul, _, _)));
            }
            other => panic!("unexpected parse: {other:?}"),
        }
    }

    #[test]
    fn pow_is_right_associative() {
        assert_relative_eq!(eval_str("2^3^2", &[], &[]), 512.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_sin_zero() {
        assert_eq!(eval_str("sin(x1)", &[0.0], &[]), 0.0);
    }

    #[test]
    fn eval_bump_at_midpoint() {
        // (0.5 - 1/3)(2/3 - 0.5) = 1/36, so bump = exp(-36)
        let got = eval_str("bump(0.5, 1/3, 2/3)", &[], &[]);
        let prod: f64 = (0.5 - 1.0 / 3.0) * (2.0 / 3.0 - 0.5);
        assert_relative_eq!(prod, 1.0 / 36.0, epsilon = 1e-15);
        assert_relative_eq!(got, (-1.0 / prod).exp(), epsilon = 1e-15);
        assert_relative_eq!(got, (-36.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn eval_bump_outside_support() {
        assert_eq!(eval_str("bump(0.2, 1/3, 2/3)", &[], &[]), 0.0);
        assert_eq!(eval_str("bump(1/3, 1/3, 2/3)", &[], &[]), 0.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = parse("1/x1").unwrap();
        assert!(matches!(
            e.eval(&Env { x: &[0.0], u: &[] }),
            Err(ExprError::DivisionByZero)
        ));
    }

    #[test]
    fn unbound_variable_is_an_error() {
        let e = parse("x3").unwrap();
        assert!(matches!(
            e.eval(&Env { x: &[0.0], u: &[] }),
            Err(ExprError::UnboundVariable(_))
        ));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("1 + ") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected: {other:?}"),
        }
        match parse("sin(x1, x2)") {
            Err(ExprError::ArityMismatch { expected: 1, got: 2, .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
        match parse("foo(1)") {
            Err(ExprError::UnknownIdentifier { name, .. }) => assert_eq!(name, "foo"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn diff_product_rule() {
        let e = parse("x1*x2").unwrap();
        let d = e.diff(Var::X(0));
        assert_eq!(d, Expr::Var(Var::X(1)));
    }

    #[test]
    fn diff_sin_at_zero() {
        let d = parse("sin(x1)").unwrap().diff(Var::X(0));
        assert_relative_eq!(d.eval(&Env { x: &[0.0], u: &[] }).unwrap(), 1.0);
    }

    #[test]
    fn diff_bump_vanishes_at_midpoint() {
        // bump is even about the midpoint of its support, so the derivative
        // vanishes there; cross-check by central finite difference.
        let e = parse("bump(x1, 1/3, 2/3)").unwrap();
        let d = e.diff(Var::X(0));
        let at = |s: f64| e.eval(&Env { x: &[s], u: &[] }).unwrap();
        let h = 1e-6;
        let fd = (at(0.5 + h) - at(0.5 - h)) / (2.0 * h);
        let sym = d.eval(&Env { x: &[0.5], u: &[] }).unwrap();
        assert_relative_eq!(sym, fd, epsilon = 1e-8);
        assert!(sym.abs() < 1e-12);
    }

    #[test]
    fn diff_matches_finite_differences_on_random_expressions() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let e = random_expr(&mut rng, 3);
            let d = e.diff(Var::X(0));
            for _ in 0..3 {
                let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
                let h = 1e-6;
                let f = |s: f64| {
                    e.eval(&Env { x: &[s, x[1]], u: &[] })
                        .ok()
                        .filter(|v| v.is_finite())
                };
                let (Some(fp), Some(fm), Some(f0)) = (f(x[0] + h), f(x[0] - h), f(x[0])) else {
                    continue;
                };
                let Some(sym) = d
                    .eval(&Env { x: &x, u: &[] })
                    .ok()
                    .filter(|v| v.is_finite())
                else {
                    continue;
                };
                // skip points where the second derivative is huge
                let curvature = ((fp - f0) - (f0 - fm)).abs() / h;
                if curvature > 1e3 {
                    continue;
                }
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    (sym - fd).abs() <= 1e-6 * (1.0 + sym.abs().max(fd.abs())),
                    "expr {e}: sym {sym} vs fd {fd} at {x:?}"
                );
            }
        }
    }

    #[test]
    fn bump_is_flat_at_support_endpoints() {
        // finite differences of orders up to 4 tend to zero approaching the
        // endpoints: evaluate divided differences on shrinking stencils
        let e = parse("bump(x1, 0.0, 1.0)").unwrap();
        let at = |s: f64| e.eval(&Env { x: &[s], u: &[] }).unwrap();
        for order in 1..=4usize {
            let mut prev = f64::INFINITY;
            for &h in &[1e-2, 5e-3, 2.5e-3] {
                // forward divided difference of the given order at the left endpoint
                let mut acc = 0.0;
                for j in 0..=order {
                    let sign = if (order - j) % 2 == 0 { 1.0 } else { -1.0 };
                    let binom = (0..order).fold(1.0, |acc, t| acc * (t + 1) as f64)
                        / ((0..j).fold(1.0, |a, t| a * (t + 1) as f64)
                            * (0..order - j).fold(1.0, |a, t| a * (t + 1) as f64));
                    acc += sign * binom * at(j as f64 * h);
                }
                let dd = acc / h.powi(order as i32);
                assert!(dd.abs() < prev.max(1e-9) * 1.01);
                prev = dd.abs();
            }
            assert!(prev < 1e-10, "order {order} divided difference {prev}");
        }
    }

    #[test]
    fn bump_deriv_consistent_with_finite_differences() {
        for k in 1..=3usize {
            for &s in &[0.12, 0.4, 0.77] {
                let h = 1e-4;
                let fd = (bump_deriv(s + h, 0.0, 1.0, k - 1)
                    - bump_deriv(s - h, 0.0, 1.0, k - 1))
                    / (2.0 * h);
                let jet = bump_deriv(s, 0.0, 1.0, k);
                assert_relative_eq!(jet, fd, epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    fn random_expr(rng: &mut impl rand::Rng, depth: usize) -> Expr {
        if depth == 0 {
            return match rng.random_range(0..3) {
                0 => Expr::Const(rng.random_range(-2.0..2.0)),
                1 => Expr::x(0),
                _ => Expr::x(1),
            };
        }
        match rng.random_range(0..8) {
            0 => add(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            1 => sub(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            2 => mul(random_expr(rng, depth - 1), random_expr(rng, depth - 1)),
            3 => unary(UnOp::Sin, random_expr(rng, depth - 1)),
            4 => unary(UnOp::Cos, random_expr(rng, depth - 1)),
            5 => unary(UnOp::Exp, mul(Expr::Const(0.3), random_expr(rng, depth - 1))),
            6 => Expr::bump(random_expr(rng, depth - 1), -0.8, 0.9),
            _ => pow(random_expr(rng, depth - 1), rng.random_range(2..4) as f64),
        }
    }

    proptest::proptest! {
        #[test]
        fn print_parse_round_trip(seed in 0u64..500) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let e = random_expr(&mut rng, 4);
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap();
            proptest::prop_assert_eq!(&reparsed, &e, "printed: {}", printed);
        }
    }
}
