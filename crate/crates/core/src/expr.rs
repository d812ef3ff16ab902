//! Coefficient expressions: parsing, printing, evaluation and an empirical
//! Hölder-exponent audit.
//!
//! The grammar is documented in `docs/expressions.md`. Expressions are parsed
//! once into an immutable [`Expr`] tree; hot loops compile them into a flat
//! postfix [`Program`] with variables resolved to slots.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::noise::RngStream;

/// Free variables an expression may reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Time.
    T,
    /// Current state.
    X,
    /// Auxiliary-process value.
    H,
    /// Jump size (Lévy measure densities).
    Z,
    /// Atom index (atomic Lévy measure formulas).
    N,
    /// Path aggregate `a1`, `a2`, ... (stored zero-based).
    Agg(u16),
}

impl Var {
    pub fn name(&self) -> String {
        match self {
            Var::T => "t".into(),
            Var::X => "x".into(),
            Var::H => "h".into(),
            Var::Z => "z".into(),
            Var::N => "n".into(),
            Var::Agg(k) => format!("a{}", k + 1),
        }
    }

    fn from_ident(s: &str) -> Option<Var> {
        match s {
            "t" => Some(Var::T),
            "x" => Some(Var::X),
            "h" => Some(Var::H),
            "z" => Some(Var::Z),
            "n" => Some(Var::N),
            _ => {
                let digits = s.strip_prefix('a')?;
                if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                let k: u16 = digits.parse().ok()?;
                (k >= 1).then(|| Var::Agg(k - 1))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sign,
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
}

impl UnaryOp {
    fn func_name(&self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Abs => "abs",
            UnaryOp::Sign => "sign",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

/// Abstract syntax tree of a coefficient expression.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdent { offset: usize, name: String },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownIdent { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("Hölder exponent {0} outside (0, 1]")]
    HolderRange(f64),
    #[error("growth constant {0} must be finite and non-negative")]
    Growth(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HolderError {
    #[error("interval [{lo}, {hi}] is empty")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("need at least 100 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("expression not evaluable on interval at x = {x}: {source}")]
    Eval { x: f64, source: EvalError },
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

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
    Comma,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent part: e[+-]digits
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
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                // report the full UTF-8 character
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser (recursive descent)
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.syntax(format!("expected {what}")))
        }
    }

    fn syntax(&self, message: String) -> ParseError {
        ParseError::Syntax {
            offset: self.offset(),
            message,
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            // right-associative; the exponent may carry a sign
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Lit(v)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(name, offset),
            Tok::End => Err(ParseError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            }),
            other => Err(ParseError::Syntax {
                offset,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Expr, ParseError> {
        let unary = match name.as_str() {
            "abs" => Some(UnaryOp::Abs),
            "sign" => Some(UnaryOp::Sign),
            "sqrt" => Some(UnaryOp::Sqrt),
            "exp" => Some(UnaryOp::Exp),
            "log" => Some(UnaryOp::Log),
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            _ => None,
        };
        if let Some(op) = unary {
            self.expect(Tok::LParen, "`(` after function name")?;
            let arg = self.sum()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Expr::Unary(op, Box::new(arg)));
        }
        let binary = match name.as_str() {
            "min" => Some(BinaryOp::Min),
            "max" => Some(BinaryOp::Max),
            _ => None,
        };
        if let Some(op) = binary {
            self.expect(Tok::LParen, "`(` after function name")?;
            let a = self.sum()?;
            self.expect(Tok::Comma, "`,`")?;
            let b = self.sum()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Expr::Binary(op, Box::new(a), Box::new(b)));
        }
        if name == "pi" {
            return Ok(Expr::Lit(std::f64::consts::PI));
        }
        match Var::from_ident(&name) {
            Some(v) => Ok(Expr::Var(v)),
            None => Err(ParseError::UnknownIdent { offset, name }),
        }
    }
}

/// Parses an expression. Whitespace is insignificant.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.sum()?;
    if *p.peek() != Tok::End {
        return Err(p.syntax("trailing input".into()));
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expr(s)
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    /// Fully parenthesised output; re-parses to an identical tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
                write!(f, "(-{})", -v)
            }
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(v) => write!(f, "{}", v.name()),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.func_name()),
            Expr::Binary(op, a, b) => match op {
                BinaryOp::Add => write!(f, "({a} + {b})"),
                BinaryOp::Sub => write!(f, "({a} - {b})"),
                BinaryOp::Mul => write!(f, "({a} * {b})"),
                BinaryOp::Div => write!(f, "({a} / {b})"),
                BinaryOp::Pow => write!(f, "({a} ^ {b})"),
                BinaryOp::Min => write!(f, "min({a}, {b})"),
                BinaryOp::Max => write!(f, "max({a}, {b})"),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[inline]
fn apply_unary(op: UnaryOp, a: f64) -> Result<f64, EvalError> {
    let v = match op {
        UnaryOp::Neg => -a,
        UnaryOp::Abs => a.abs(),
        UnaryOp::Sign => {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        UnaryOp::Sqrt => {
            if a < 0.0 {
                return Err(EvalError::Domain(format!("sqrt of negative value {a}")));
            }
            a.sqrt()
        }
        UnaryOp::Exp => a.exp(),
        UnaryOp::Log => {
            if a <= 0.0 {
                return Err(EvalError::Domain(format!("log of non-positive value {a}")));
            }
            a.ln()
        }
        UnaryOp::Sin => a.sin(),
        UnaryOp::Cos => a.cos(),
    };
    finite(v)
}

#[inline]
fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, EvalError> {
    let v = match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(EvalError::Domain("division by zero".into()));
            }
            a / b
        }
        BinaryOp::Pow => {
            if a < 0.0 && b.fract() != 0.0 {
                return Err(EvalError::Domain(format!(
                    "non-integer power {b} of negative base {a}"
                )));
            }
            if a == 0.0 && b < 0.0 {
                return Err(EvalError::Domain(format!("zero raised to negative power {b}")));
            }
            a.powf(b)
        }
        BinaryOp::Min => a.min(b),
        BinaryOp::Max => a.max(b),
    };
    finite(v)
}

#[inline]
fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain(format!("non-finite result {v}")))
    }
}

/// Evaluates `expr` against named bindings. `sign(0) = 0`.
pub fn eval_expr(expr: &Expr, bindings: &HashMap<&str, f64>) -> Result<f64, EvalError> {
    match expr {
        Expr::Lit(v) => Ok(*v),
        Expr::Var(v) => {
            let name = v.name();
            bindings
                .get(name.as_str())
                .copied()
                .ok_or(EvalError::Unbound(name))
        }
        Expr::Unary(op, a) => apply_unary(*op, eval_expr(a, bindings)?),
        Expr::Binary(op, a, b) => {
            let a = eval_expr(a, bindings)?;
            let b = eval_expr(b, bindings)?;
            apply_binary(*op, a, b)
        }
    }
}

impl Expr {
    /// Distinct free variables, sorted.
    pub fn free_vars(&self) -> Vec<Var> {
        fn walk(e: &Expr, out: &mut Vec<Var>) {
            match e {
                Expr::Lit(_) => {}
                Expr::Var(v) => {
                    if !out.contains(v) {
                        out.push(*v);
                    }
                }
                Expr::Unary(_, a) => walk(a, out),
                Expr::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out
    }

    pub fn is_constant(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Evaluates a function of `x` alone.
    pub fn eval_x(&self, x: f64) -> Result<f64, EvalError> {
        self.compile().eval(&Env::with_x(x))
    }

    pub fn compile(&self) -> Program {
        Program::new(self)
    }
}

/// Variable values for [`Program::eval`].
#[derive(Clone, Debug, Default)]
pub struct Env<'a> {
    pub t: f64,
    pub x: f64,
    pub h: f64,
    pub z: f64,
    pub n: f64,
    pub aggregates: &'a [f64],
}

impl Env<'static> {
    pub fn with_x(x: f64) -> Self {
        Env {
            x,
            ..Env::default()
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Instr {
    Lit(f64),
    Load(Var),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// Postfix form of an [`Expr`] for repeated evaluation.
///
/// Constant sub-expressions are folded at compile time. Programs are
/// immutable and may be shared across threads.
#[derive(Clone, Debug)]
pub struct Program {
    code: Vec<Instr>,
    depth: usize,
    constant: Option<f64>,
    max_agg: Option<u16>,
}

impl Program {
    fn new(expr: &Expr) -> Self {
        let folded = fold(expr);
        let mut code = Vec::new();
        let depth = emit(&folded, &mut code);
        let constant = match folded {
            Expr::Lit(v) => Some(v),
            _ => None,
        };
        let max_agg = expr
            .free_vars()
            .iter()
            .filter_map(|v| match v {
                Var::Agg(k) => Some(*k),
                _ => None,
            })
            .max();
        Program {
            code,
            depth,
            constant,
            max_agg,
        }
    }

    /// Value if the program does not depend on any variable.
    pub fn constant(&self) -> Option<f64> {
        self.constant
    }

    /// Number of aggregates the program reads (`aK` with the largest K).
    pub fn aggregates_needed(&self) -> usize {
        self.max_agg.map_or(0, |k| k as usize + 1)
    }

    #[inline]
    pub fn eval(&self, env: &Env<'_>) -> Result<f64, EvalError> {
        if let Some(c) = self.constant {
            return Ok(c);
        }
        let mut small = [0.0f64; 16];
        let mut big;
        let stack: &mut [f64] = if self.depth <= small.len() {
            &mut small
        } else {
            big = vec![0.0; self.depth];
            &mut big
        };
        let mut sp = 0usize;
        for ins in &self.code {
            match *ins {
                Instr::Lit(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Instr::Load(var) => {
                    stack[sp] = match var {
                        Var::T => env.t,
                        Var::X => env.x,
                        Var::H => env.h,
                        Var::Z => env.z,
                        Var::N => env.n,
                        Var::Agg(k) => *env
                            .aggregates
                            .get(k as usize)
                            .ok_or_else(|| EvalError::Unbound(var.name()))?,
                    };
                    sp += 1;
                }
                Instr::Unary(op) => {
                    stack[sp - 1] = apply_unary(op, stack[sp - 1])?;
                }
                Instr::Binary(op) => {
                    let b = stack[sp - 1];
                    let a = stack[sp - 2];
                    stack[sp - 2] = apply_binary(op, a, b)?;
                    sp -= 1;
                }
            }
        }
        Ok(stack[0])
    }
}

fn fold(e: &Expr) -> Expr {
    match e {
        Expr::Lit(_) | Expr::Var(_) => e.clone(),
        Expr::Unary(op, a) => {
            let a = fold(a);
            if let Expr::Lit(v) = a {
                if let Ok(r) = apply_unary(*op, v) {
                    return Expr::Lit(r);
                }
            }
            Expr::Unary(*op, Box::new(a))
        }
        Expr::Binary(op, a, b) => {
            let a = fold(a);
            let b = fold(b);
            if let (Expr::Lit(x), Expr::Lit(y)) = (&a, &b) {
                if let Ok(r) = apply_binary(*op, *x, *y) {
                    return Expr::Lit(r);
                }
            }
            Expr::Binary(*op, Box::new(a), Box::new(b))
        }
    }
}

/// Emits postfix code, returning the stack depth needed.
fn emit(e: &Expr, code: &mut Vec<Instr>) -> usize {
    match e {
        Expr::Lit(v) => {
            code.push(Instr::Lit(*v));
            1
        }
        Expr::Var(v) => {
            code.push(Instr::Load(*v));
            1
        }
        Expr::Unary(op, a) => {
            let d = emit(a, code);
            code.push(Instr::Unary(*op));
            d
        }
        Expr::Binary(op, a, b) => {
            let da = emit(a, code);
            let db = emit(b, code);
            code.push(Instr::Binary(*op));
            da.max(db + 1)
        }
    }
}

// ---------------------------------------------------------------------------
// Path aggregates and coefficient metadata
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregateKind {
    RunningSup,
    RunningInf,
    RunningIntegral,
    CoveredDistance,
}

impl AggregateKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "running_sup" => Some(Self::RunningSup),
            "running_inf" => Some(Self::RunningInf),
            "running_integral" => Some(Self::RunningIntegral),
            "covered_distance" => Some(Self::CoveredDistance),
            _ => None,
        }
    }
}

/// A functional of the path `(X_u)_{u ≤ s}` that can be updated online.
#[derive(Clone, Debug)]
pub struct PathAggregate {
    pub kind: AggregateKind,
    pub inner: Expr,
    program: Program,
}

impl PathAggregate {
    /// `inner` must depend on `x` only.
    pub fn new(kind: AggregateKind, inner: Expr) -> Result<Self, EvalError> {
        if let Some(v) = inner.free_vars().into_iter().find(|v| *v != Var::X) {
            return Err(EvalError::Unbound(format!(
                "aggregate inner expression may only use `x`, found `{}`",
                v.name()
            )));
        }
        let program = inner.compile();
        Ok(PathAggregate {
            kind,
            inner,
            program,
        })
    }

    pub fn start(&self, x0: f64) -> Result<AggregateState, EvalError> {
        let v = self.program.eval(&Env::with_x(x0))?;
        Ok(AggregateState {
            sup: v,
            inf: v,
            integral: 0.0,
        })
    }

    /// Folds in the path over one step: the integral uses the left-point value,
    /// sup/inf include the new point.
    #[inline]
    pub fn update(&self, st: &mut AggregateState, x_left: f64, x_new: f64, dt: f64) -> Result<(), EvalError> {
        if self.kind == AggregateKind::RunningIntegral {
            st.integral += self.program.eval(&Env::with_x(x_left))? * dt;
        } else {
            let v = self.program.eval(&Env::with_x(x_new))?;
            st.sup = st.sup.max(v);
            st.inf = st.inf.min(v);
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, st: &AggregateState) -> f64 {
        match self.kind {
            AggregateKind::RunningSup => st.sup,
            AggregateKind::RunningInf => st.inf,
            AggregateKind::RunningIntegral => st.integral,
            AggregateKind::CoveredDistance => st.sup - st.inf,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateState {
    sup: f64,
    inf: f64,
    integral: f64,
}

/// A user coefficient with declared regularity.
#[derive(Clone, Debug)]
pub struct CoeffSpec {
    pub expr: Expr,
    /// `None` for a merely measurable coefficient.
    pub holder_theta: Option<f64>,
    /// `C` in `|f| ≤ C(1 + |x|)`.
    pub growth_const: f64,
    program: Program,
}

impl CoeffSpec {
    pub fn new(expr: Expr, holder_theta: Option<f64>, growth_const: f64) -> Result<Self, CoeffError> {
        if let Some(th) = holder_theta {
            if !(th > 0.0 && th <= 1.0) {
                return Err(CoeffError::HolderRange(th));
            }
        }
        if !(growth_const >= 0.0 && growth_const.is_finite()) {
            return Err(CoeffError::Growth(growth_const));
        }
        let program = expr.compile();
        Ok(CoeffSpec {
            expr,
            holder_theta,
            growth_const,
            program,
        })
    }

    /// Convenience for tests and built-ins: parses `text`, panicking on error.
    pub fn parse(text: &str, holder_theta: Option<f64>, growth_const: f64) -> Self {
        let expr = parse_expr(text).unwrap_or_else(|e| panic!("bad built-in expression `{text}`: {e}"));
        Self::new(expr, holder_theta, growth_const).expect("bad built-in coefficient metadata")
    }

    pub fn constant(value: f64) -> Self {
        let th = Some(1.0);
        Self::new(Expr::Lit(value), th, value.abs()).expect("constant coefficient")
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    #[inline]
    pub fn eval(&self, env: &Env<'_>) -> Result<f64, EvalError> {
        self.program.eval(env)
    }

    #[inline]
    pub fn eval_x(&self, x: f64) -> Result<f64, EvalError> {
        self.program.eval(&Env::with_x(x))
    }
}

// ---------------------------------------------------------------------------
// Hölder audit
// ---------------------------------------------------------------------------

const HOLDER_LEVELS: usize = 14;
const HOLDER_TRACKED: usize = 8;
const HOLDER_POLISHED: usize = 2;

/// Golden-section search for a local maximum of `g` on `[a, b]`; returns
/// `(g(x*), x*)`.
fn golden_max(g: &dyn Fn(f64) -> Result<f64, HolderError>, mut a: f64, mut b: f64) -> Result<(f64, f64), HolderError> {
    const R: f64 = 0.618_033_988_749_894_8;
    let mut c = b - R * (b - a);
    let mut e = a + R * (b - a);
    let (mut gc, mut ge) = (g(c)?, g(e)?);
    for _ in 0..60 {
        if gc >= ge {
            b = e;
            e = c;
            ge = gc;
            c = b - R * (b - a);
            gc = g(c)?;
        } else {
            a = c;
            c = e;
            gc = ge;
            e = a + R * (b - a);
            ge = g(e)?;
        }
    }
    Ok(if gc >= ge { (gc, c) } else { (ge, e) })
}

/// Empirical Hölder exponent of a function of `x` on `[lo, hi]`.
///
/// For separations `d_k = (hi - lo) 2^{-k}` the largest increment
/// `S_k = sup |f(x + d_k) - f(x)|` is searched with random base points plus a
/// lattice neighbourhood of the best base points found at the previous
/// separation, which tracks an isolated cusp down the scales. The exponent is
/// the least-squares slope of `log S_k` against `log d_k`, clipped to `(0, 1]`.
pub fn estimate_holder(
    expr: &Expr,
    interval: (f64, f64),
    n_pairs: usize,
    rng: &mut RngStream,
) -> Result<f64, HolderError> {
    let (lo, hi) = interval;
    if !(lo < hi) {
        return Err(HolderError::EmptyInterval { lo, hi });
    }
    if n_pairs < 100 {
        return Err(HolderError::TooFewPairs(n_pairs));
    }
    let prog = expr.compile();
    let f = |x: f64| prog.eval(&Env::with_x(x)).map_err(|source| HolderError::Eval { x, source });
    let width = hi - lo;
    let per_level = (n_pairs / HOLDER_LEVELS).max(8);
    let mut best: Vec<(f64, f64)> = Vec::new();
    let mut pts = Vec::with_capacity(HOLDER_LEVELS);
    for k in 1..=HOLDER_LEVELS {
        let d = width * (0.5f64).powi(k as i32);
        let span = width - d;
        let mut cands: Vec<(f64, f64)> = Vec::with_capacity(per_level + best.len() * 9);
        let eval_at = |x: f64, cands: &mut Vec<(f64, f64)>| -> Result<(), HolderError> {
            let x = x.clamp(lo, hi - d);
            let inc = (f(x + d)? - f(x)?).abs();
            cands.push((inc, x));
            Ok(())
        };
        for _ in 0..per_level {
            eval_at(lo + span * rng.uniform(), &mut cands)?;
        }
        for &(_, xb) in &best {
            for j in -4i32..=4 {
                eval_at(xb + j as f64 * d, &mut cands)?;
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        for i in 0..HOLDER_POLISHED.min(cands.len()) {
            let x = cands[i].1;
            let polished = golden_max(&|x| Ok((f(x + d)? - f(x)?).abs()), (x - d).max(lo), (x + d).min(hi - d))?;
            cands.push(polished);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0));
        let sup = cands[0].0;
        best = cands.into_iter().take(HOLDER_TRACKED).collect();
        if sup > 0.0 {
            pts.push((d.ln(), sup.ln()));
        }
    }
    if pts.len() < 2 {
        return Ok(1.0);
    }
    let slope = crate::fit::least_squares(&pts).slope;
    Ok(slope.clamp(f64::MIN_POSITIVE, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_x(x: f64) -> HashMap<&'static str, f64> {
        HashMap::from([("x", x)])
    }

    #[test]
    fn parses_variable() {
        assert_eq!(parse_expr("x").unwrap(), Expr::Var(Var::X));
        assert_eq!(parse_expr("  a12 ").unwrap(), Expr::Var(Var::Agg(11)));
    }

    #[test]
    fn parses_power_of_abs() {
        let e = parse_expr("abs(x)^0.6").unwrap();
        let want = Expr::Binary(
            BinaryOp::Pow,
            Box::new(Expr::Unary(UnaryOp::Abs, Box::new(Expr::Var(Var::X)))),
            Box::new(Expr::Lit(0.6)),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn precedence() {
        // ^ binds tighter than unary minus, which binds tighter than * and +.
        let e = parse_expr("-x^2 + 2*x").unwrap();
        let b = HashMap::from([("x", 3.0)]);
        assert_eq!(eval_expr(&e, &b).unwrap(), -9.0 + 6.0);
        let e = parse_expr("2^3^2").unwrap();
        assert_eq!(eval_expr(&e, &HashMap::new()).unwrap(), 512.0);
        let e = parse_expr("1 - 2 - 3").unwrap();
        assert_eq!(eval_expr(&e, &HashMap::new()).unwrap(), -4.0);
        let e = parse_expr("2^-1").unwrap();
        assert_eq!(eval_expr(&e, &HashMap::new()).unwrap(), 0.5);
    }

    #[test]
    fn incomplete_input_reports_offset() {
        let err = parse_expr("x +").unwrap_err();
        assert_eq!(err.offset(), 3);
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn unknown_identifier() {
        let err = parse_expr("1 + foo(x)").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdent {
                offset: 4,
                name: "foo".into()
            }
        );
        assert!(parse_expr("a0").is_err());
    }

    #[test]
    fn trailing_and_bad_characters() {
        assert!(matches!(parse_expr("x)"), Err(ParseError::Syntax { offset: 1, .. })));
        assert!(matches!(parse_expr("x $ 1"), Err(ParseError::Syntax { offset: 2, .. })));
        assert!(parse_expr("min(x)").is_err());
        assert!(parse_expr("").is_err());
    }

    #[test]
    fn scientific_literals() {
        let e = parse_expr("1e-6 + 2.5E2").unwrap();
        assert_eq!(eval_expr(&e, &HashMap::new()).unwrap(), 1e-6 + 250.0);
    }

    #[test]
    fn eval_examples() {
        let e = parse_expr("abs(x)^0.5").unwrap();
        assert!((eval_expr(&e, &env_x(-2.0)).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let s = parse_expr("sign(x)").unwrap();
        assert_eq!(eval_expr(&s, &env_x(0.0)).unwrap(), 0.0);
        let d = parse_expr("1/x").unwrap();
        assert!(matches!(eval_expr(&d, &env_x(0.0)), Err(EvalError::Domain(_))));
    }

    #[test]
    fn domain_errors() {
        for (src, x) in [("log(x)", 0.0), ("sqrt(x)", -1.0), ("x^0.5", -2.0), ("x^(-1)", 0.0), ("exp(x)", 1e4)] {
            let e = parse_expr(src).unwrap();
            assert!(matches!(eval_expr(&e, &env_x(x)), Err(EvalError::Domain(_))), "{src}");
            assert!(e.compile().eval(&Env::with_x(x)).is_err(), "{src}");
        }
        // integer exponents of negative bases are fine
        let e = parse_expr("x^3").unwrap();
        assert_eq!(eval_expr(&e, &env_x(-2.0)).unwrap(), -8.0);
    }

    #[test]
    fn unbound_variable() {
        let e = parse_expr("x + t").unwrap();
        assert_eq!(eval_expr(&e, &env_x(1.0)), Err(EvalError::Unbound("t".into())));
        let p = parse_expr("a2").unwrap().compile();
        assert!(p.eval(&Env { aggregates: &[1.0], ..Env::default() }).is_err());
    }

    #[test]
    fn compiled_matches_tree() {
        let src = "min(abs(x)^0.75 + 0.1, 3) * cos(t) - max(h, a1) / (1 + x^2)";
        let e = parse_expr(src).unwrap();
        let p = e.compile();
        assert_eq!(p.aggregates_needed(), 1);
        for &(t, x, h, a) in &[(0.0, 0.5, 1.0, 2.0), (0.3, -1.7, -0.2, 0.1)] {
            let b = HashMap::from([("t", t), ("x", x), ("h", h), ("a1", a)]);
            let aggs = [a];
            let env = Env { t, x, h, aggregates: &aggs, ..Env::default() };
            assert_eq!(p.eval(&env).unwrap(), eval_expr(&e, &b).unwrap());
        }
    }

    #[test]
    fn constant_folding() {
        let p = parse_expr("2 * pi / 4 + 1").unwrap().compile();
        assert_eq!(p.constant(), Some(std::f64::consts::PI / 2.0 + 1.0));
        assert!(parse_expr("x + 1").unwrap().compile().constant().is_none());
    }

    #[test]
    fn coeff_metadata_validation() {
        let e = parse_expr("x").unwrap();
        assert!(CoeffSpec::new(e.clone(), Some(0.0), 1.0).is_err());
        assert!(CoeffSpec::new(e.clone(), Some(1.2), 1.0).is_err());
        assert!(CoeffSpec::new(e.clone(), Some(1.0), -1.0).is_err());
        assert!(CoeffSpec::new(e, None, 1.0).is_ok());
    }

    #[test]
    fn aggregates_track_path() {
        let x = parse_expr("x").unwrap();
        let sup = PathAggregate::new(AggregateKind::RunningSup, x.clone()).unwrap();
        let inf = PathAggregate::new(AggregateKind::RunningInf, x.clone()).unwrap();
        let cov = PathAggregate::new(AggregateKind::CoveredDistance, x.clone()).unwrap();
        let int = PathAggregate::new(AggregateKind::RunningIntegral, x).unwrap();
        let path = [0.0, 1.0, -0.5, 0.25];
        let mut st: Vec<_> = [&sup, &inf, &cov, &int].iter().map(|a| a.start(path[0]).unwrap()).collect();
        for w in path.windows(2) {
            for (a, s) in [&sup, &inf, &cov, &int].iter().zip(st.iter_mut()) {
                a.update(s, w[0], w[1], 0.5).unwrap();
            }
        }
        assert_eq!(sup.value(&st[0]), 1.0);
        assert_eq!(inf.value(&st[1]), -0.5);
        assert_eq!(cov.value(&st[2]), 1.5);
        assert_eq!(int.value(&st[3]), 0.5 * (0.0 + 1.0 - 0.5));
        assert!(PathAggregate::new(AggregateKind::RunningSup, parse_expr("t").unwrap()).is_err());
    }

    #[test]
    fn holder_of_constant_is_one() {
        let mut rng = RngStream::new(1, 1);
        let e = parse_expr("3.0").unwrap();
        assert_eq!(estimate_holder(&e, (-1.0, 1.0), 1000, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn holder_argument_checks() {
        let mut rng = RngStream::new(1, 1);
        let e = parse_expr("x").unwrap();
        assert!(estimate_holder(&e, (1.0, 1.0), 1000, &mut rng).is_err());
        assert!(estimate_holder(&e, (0.0, 1.0), 10, &mut rng).is_err());
        let l = parse_expr("log(x)").unwrap();
        assert!(matches!(estimate_holder(&l, (-1.0, 1.0), 1000, &mut rng), Err(HolderError::Eval { .. })));
    }

    /// Deterministic grid oracle: sup of increments at dyadic separations over
    /// a fine lattice, fitted the same way.
    fn grid_oracle(src: &str, lo: f64, hi: f64) -> f64 {
        let e = parse_expr(src).unwrap();
        let m = 1usize << 16;
        let step = (hi - lo) / m as f64;
        let vals: Vec<f64> = (0..=m).map(|i| e.eval_x(lo + i as f64 * step).unwrap()).collect();
        let mut pts = Vec::new();
        for k in 1..=HOLDER_LEVELS {
            let s = m >> k;
            let sup = (0..=m - s).map(|i| (vals[i + s] - vals[i]).abs()).fold(0.0, f64::max);
            pts.push(((s as f64 * step).ln(), sup.ln()));
        }
        crate::fit::least_squares(&pts).slope
    }

    #[test]
    fn holder_examples_against_grid_oracle() {
        let mut rng = RngStream::new(7, 3);
        let e = parse_expr("abs(x)^0.6").unwrap();
        let est = estimate_holder(&e, (-1.0, 1.0), 10_000, &mut rng).unwrap();
        let oracle = grid_oracle("abs(x)^0.6", -1.0, 1.0);
        assert!((0.55..=0.65).contains(&est), "{est}");
        assert!((est - oracle).abs() < 0.05, "{est} vs {oracle}");

        let lin = parse_expr("x").unwrap();
        let est = estimate_holder(&lin, (0.0, 1.0), 10_000, &mut rng).unwrap();
        assert!((0.95..=1.0).contains(&est), "{est}");
        assert!((grid_oracle("x", 0.0, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn holder_power_family() {
        let mut rng = RngStream::new(11, 0);
        for p in [0.3, 0.6, 0.9] {
            let src = format!("abs(x)^{p}");
            let e = parse_expr(&src).unwrap();
            let est = estimate_holder(&e, (-1.0, 1.0), 10_000, &mut rng).unwrap();
            let oracle = grid_oracle(&src, -1.0, 1.0);
            assert!((est - p).abs() <= 0.08, "p={p} est={est}");
            assert!((oracle - p).abs() <= 0.08, "p={p} oracle={oracle}");
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (0.0f64..100.0).prop_map(Expr::Lit),
                Just(Expr::Var(Var::X)),
                Just(Expr::Var(Var::T)),
                Just(Expr::Var(Var::H)),
                (0u16..3).prop_map(|k| Expr::Var(Var::Agg(k))),
            ];
            leaf.prop_recursive(5, 48, 2, |inner| {
                let un = prop_oneof![
                    Just(UnaryOp::Neg),
                    Just(UnaryOp::Abs),
                    Just(UnaryOp::Sign),
                    Just(UnaryOp::Sqrt),
                    Just(UnaryOp::Exp),
                    Just(UnaryOp::Log),
                    Just(UnaryOp::Sin),
                    Just(UnaryOp::Cos),
                ];
                let bin = prop_oneof![
                    Just(BinaryOp::Add),
                    Just(BinaryOp::Sub),
                    Just(BinaryOp::Mul),
                    Just(BinaryOp::Div),
                    Just(BinaryOp::Pow),
                    Just(BinaryOp::Min),
                    Just(BinaryOp::Max),
                ];
                prop_oneof![
                    (un, inner.clone()).prop_map(|(op, a)| Expr::Unary(op, Box::new(a))),
                    (bin, inner.clone(), inner).prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
                ]
            })
        }

        proptest! {
            #[test]
            fn print_parse_round_trip(e in arb_expr()) {
                let printed = e.to_string();
                let back = parse_expr(&printed).unwrap();
                prop_assert_eq!(&back, &e);
                prop_assert_eq!(parse_expr(&back.to_string()).unwrap(), back);
            }

            #[test]
            fn algebraic_identities(a in -1e3f64..1e3, b in -1e3f64..1e3) {
                let bind = HashMap::from([("x", a), ("t", b)]);
                let sum = eval_expr(&parse_expr("x + t").unwrap(), &bind).unwrap();
                prop_assert_eq!(sum, a + b);
                let mn = eval_expr(&parse_expr("min(x, t)").unwrap(), &bind).unwrap();
                prop_assert!(mn <= a && mn <= b);
                let prod = eval_expr(&parse_expr("x * t - t * x").unwrap(), &bind).unwrap();
                prop_assert_eq!(prod, 0.0);
            }
        }
    }
}
