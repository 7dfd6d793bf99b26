//! GP expression trees over MCTS node statistics.
//!
//! An [`Expr`] is used both for the hand-written UCT bound and for the
//! selection policies produced by the evolution strategy. Evaluation is total:
//! division and logarithm are protected and overflow saturates, so every
//! policy value is a finite real that can be compared with `>`.

use std::f64::consts::SQRT_2;
use std::fmt;

use rand::Rng;
use thiserror::Error;

/// Maximum tree depth, root counted as depth 1.
pub const MAX_DEPTH: usize = 8;

/// Divisors (and log arguments) with magnitude below this are guarded.
pub const PROTECTION_THRESHOLD: f64 = 0.001;

/// Values an ephemeral constant may take when created or mutated.
pub const CONSTANT_SET: [f64; 5] = [0.5, 1.0, SQRT_2, 2.0, 3.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("constant {0} is not one of 0.5, 1, sqrt2, 2, 3")]
    InvalidConstant(f64),
    #[error("expression depth {0} exceeds the maximum of {MAX_DEPTH}")]
    TooDeep(usize),
}

/// Leaf symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    /// Mean reward of the child, Q(s,a).
    Q,
    /// Visit count of the parent, N(s).
    ParentVisits,
    /// Visit count of the child, N(s,a).
    ChildVisits,
    Const(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Log,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

const UNARY_OPS: [UnaryOp; 2] = [UnaryOp::Log, UnaryOp::Sqrt];
const BINARY_OPS: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Leaf(Terminal),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Statistics of one child as seen from its parent during selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalContext {
    pub q: f64,
    pub n_parent: u64,
    pub n_child: u64,
}

impl EvalContext {
    pub fn new(q: f64, n_parent: u64, n_child: u64) -> Self {
        Self {
            q,
            n_parent,
            n_child,
        }
    }
}

#[inline]
fn saturate(x: f64) -> f64 {
    if x.is_infinite() {
        f64::MAX.copysign(x)
    } else {
        x
    }
}

#[inline]
fn protected_div(a: f64, b: f64) -> f64 {
    if b.abs() < PROTECTION_THRESHOLD {
        1.0
    } else {
        a / b
    }
}

#[inline]
fn protected_log(a: f64) -> f64 {
    let a = a.abs();
    if a < PROTECTION_THRESHOLD {
        1.0
    } else {
        a.ln()
    }
}

impl UnaryOp {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Log => protected_log(a),
            UnaryOp::Sqrt => a.abs().sqrt(),
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Log => "plog",
            UnaryOp::Sqrt => "psqrt",
        }
    }
}

impl BinaryOp {
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        saturate(match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => protected_div(a, b),
        })
    }

    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "pdiv",
        }
    }
}

impl Expr {
    pub fn leaf(t: Terminal) -> Self {
        Expr::Leaf(t)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    /// The UCT bound `Q + c * sqrt(2 * ln(N(s)) / N(s,a))` written with the
    /// protected operator set.
    pub fn ucb1_seed(c: f64) -> Result<Self, ExprError> {
        if !CONSTANT_SET.contains(&c) {
            return Err(ExprError::InvalidConstant(c));
        }
        use BinaryOp::*;
        let log_n = Expr::unary(UnaryOp::Log, Expr::leaf(Terminal::ParentVisits));
        let numerator = Expr::binary(Mul, Expr::leaf(Terminal::Const(2.0)), log_n);
        let ratio = Expr::binary(Div, numerator, Expr::leaf(Terminal::ChildVisits));
        let explore = Expr::binary(
            Mul,
            Expr::leaf(Terminal::Const(c)),
            Expr::unary(UnaryOp::Sqrt, ratio),
        );
        Ok(Expr::binary(Add, Expr::leaf(Terminal::Q), explore))
    }

    /// Evaluates the policy for one child. Never returns NaN or an infinity.
    pub fn evaluate(&self, ctx: &EvalContext) -> f64 {
        match self {
            Expr::Leaf(t) => match *t {
                Terminal::Q => saturate(ctx.q),
                Terminal::ParentVisits => ctx.n_parent as f64,
                Terminal::ChildVisits => ctx.n_child as f64,
                Terminal::Const(v) => v,
            },
            Expr::Unary(op, a) => op.apply(a.evaluate(ctx)),
            Expr::Binary(op, a, b) => op.apply(a.evaluate(ctx), b.evaluate(ctx)),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Leaf(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        match self {
            Expr::Leaf(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Leaf(_))
    }

    pub fn internal_count(&self) -> usize {
        match self {
            Expr::Leaf(_) => 0,
            Expr::Unary(_, a) => 1 + a.internal_count(),
            Expr::Binary(_, a, b) => 1 + a.internal_count() + b.internal_count(),
        }
    }

    /// Visits nodes in preorder, passing each node's depth (root = 1).
    fn for_each_preorder<'a>(&'a self, depth: usize, f: &mut impl FnMut(&'a Expr, usize)) {
        f(self, depth);
        match self {
            Expr::Leaf(_) => {}
            Expr::Unary(_, a) => a.for_each_preorder(depth + 1, f),
            Expr::Binary(_, a, b) => {
                a.for_each_preorder(depth + 1, f);
                b.for_each_preorder(depth + 1, f);
            }
        }
    }

    /// Picks a mutation point: 90% of the time uniformly among function
    /// nodes, otherwise uniformly among leaves. A lone leaf is always picked.
    pub fn pick_mutation_point<R: Rng + ?Sized>(&self, rng: &mut R) -> MutationPoint {
        let mut internal = Vec::new();
        let mut leaves = Vec::new();
        let mut index = 0;
        self.for_each_preorder(1, &mut |node, depth| {
            let point = MutationPoint {
                index,
                depth,
                internal: !node.is_leaf(),
            };
            if point.internal {
                internal.push(point);
            } else {
                leaves.push(point);
            }
            index += 1;
        });
        if internal.is_empty() {
            return leaves[0];
        }
        if rng.random_bool(0.9) {
            internal[rng.random_range(0..internal.len())]
        } else {
            leaves[rng.random_range(0..leaves.len())]
        }
    }

    /// Returns a copy with the preorder node `index` replaced by `subtree`.
    pub fn replace_at(&self, index: usize, subtree: Expr) -> Expr {
        fn go(e: &Expr, target: usize, next: &mut usize, sub: &mut Option<Expr>) -> Expr {
            let here = *next;
            *next += 1;
            if here == target {
                // skip over the replaced subtree's indices
                *next += e.size() - 1;
                return sub.take().expect("replacement used once");
            }
            match e {
                Expr::Leaf(t) => Expr::Leaf(*t),
                Expr::Unary(op, a) => Expr::unary(*op, go(a, target, next, sub)),
                Expr::Binary(op, a, b) => {
                    let a = go(a, target, next, sub);
                    let b = go(b, target, next, sub);
                    Expr::binary(*op, a, b)
                }
            }
        }
        let mut next = 0;
        let mut sub = Some(subtree);
        go(self, index, &mut next, &mut sub)
    }

    /// Subtree mutation. The input is left untouched; the grown replacement
    /// is sized so the result never exceeds [`MAX_DEPTH`].
    pub fn subtree_mutate<R: Rng + ?Sized>(&self, rng: &mut R) -> Expr {
        let point = self.pick_mutation_point(rng);
        let budget = MAX_DEPTH + 1 - point.depth;
        self.replace_at(point.index, random_subtree(budget, rng))
    }

    /// Prefix notation, e.g. `(+ Q (* sqrt2 (psqrt (pdiv (* 2 (plog Np)) Nc))))`.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse_text(s: &str) -> Result<Expr, ExprError> {
        let expr = Parser::new(s).parse()?;
        let depth = expr.depth();
        if depth > MAX_DEPTH {
            return Err(ExprError::TooDeep(depth));
        }
        Ok(expr)
    }
}

/// A node chosen for subtree mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MutationPoint {
    /// Preorder index.
    pub index: usize,
    /// Depth of the node, root = 1.
    pub depth: usize,
    pub internal: bool,
}

pub fn random_terminal<R: Rng + ?Sized>(rng: &mut R) -> Terminal {
    match rng.random_range(0..4) {
        0 => Terminal::Q,
        1 => Terminal::ParentVisits,
        2 => Terminal::ChildVisits,
        _ => Terminal::Const(CONSTANT_SET[rng.random_range(0..CONSTANT_SET.len())]),
    }
}

/// Grow initialisation: a terminal at budget 1, otherwise a fair coin between
/// a function node and a terminal.
pub fn random_subtree<R: Rng + ?Sized>(depth_budget: usize, rng: &mut R) -> Expr {
    assert!(depth_budget >= 1, "depth budget must be at least 1");
    if depth_budget == 1 || rng.random_bool(0.5) {
        return Expr::Leaf(random_terminal(rng));
    }
    let op = rng.random_range(0..UNARY_OPS.len() + BINARY_OPS.len());
    if op < UNARY_OPS.len() {
        Expr::unary(UNARY_OPS[op], random_subtree(depth_budget - 1, rng))
    } else {
        let a = random_subtree(depth_budget - 1, rng);
        let b = random_subtree(depth_budget - 1, rng);
        Expr::binary(BINARY_OPS[op - UNARY_OPS.len()], a, b)
    }
}

fn fmt_const(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v == SQRT_2 {
        f.write_str("sqrt2")
    } else {
        write!(f, "{v}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Leaf(Terminal::Q) => f.write_str("Q"),
            Expr::Leaf(Terminal::ParentVisits) => f.write_str("Np"),
            Expr::Leaf(Terminal::ChildVisits) => f.write_str("Nc"),
            Expr::Leaf(Terminal::Const(v)) => fmt_const(*v, f),
            Expr::Unary(op, a) => write!(f, "({} {a})", op.symbol()),
            Expr::Binary(op, a, b) => write!(f, "({} {a} {b})", op.symbol()),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse_text(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn err<T>(&self, position: usize, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse {
            position,
            message: message.into(),
        })
    }

    /// Returns the next token and its starting byte offset.
    fn next_token(&mut self) -> (Token<'a>, usize) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        match bytes.get(self.pos) {
            None => (Token::End, start),
            Some(b'(') => {
                self.pos += 1;
                (Token::Open, start)
            }
            Some(b')') => {
                self.pos += 1;
                (Token::Close, start)
            }
            Some(_) => {
                while self.pos < bytes.len()
                    && !bytes[self.pos].is_ascii_whitespace()
                    && bytes[self.pos] != b'('
                    && bytes[self.pos] != b')'
                {
                    self.pos += 1;
                }
                (Token::Atom(&self.src[start..self.pos]), start)
            }
        }
    }

    fn parse(mut self) -> Result<Expr, ExprError> {
        let expr = self.expr()?;
        match self.next_token() {
            (Token::End, _) => Ok(expr),
            (_, at) => self.err(at, "trailing input after expression"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        match self.next_token() {
            (Token::End, at) => self.err(at, "unexpected end of input"),
            (Token::Close, at) => self.err(at, "unexpected ')'"),
            (Token::Atom(atom), at) => self.terminal(atom, at),
            (Token::Open, _) => {
                let (op, at) = match self.next_token() {
                    (Token::Atom(op), at) => (op, at),
                    (Token::End, at) => return self.err(at, "unexpected end of input"),
                    (_, at) => return self.err(at, "expected an operator"),
                };
                let node = match op {
                    "plog" | "psqrt" => {
                        let op = if op == "plog" {
                            UnaryOp::Log
                        } else {
                            UnaryOp::Sqrt
                        };
                        Expr::unary(op, self.expr()?)
                    }
                    "+" | "-" | "*" | "pdiv" => {
                        let op = match op {
                            "+" => BinaryOp::Add,
                            "-" => BinaryOp::Sub,
                            "*" => BinaryOp::Mul,
                            _ => BinaryOp::Div,
                        };
                        let a = self.expr()?;
                        let b = self.expr()?;
                        Expr::binary(op, a, b)
                    }
                    other => return self.err(at, format!("unknown operator '{other}'")),
                };
                match self.next_token() {
                    (Token::Close, _) => Ok(node),
                    (Token::End, at) => self.err(at, "unexpected end of input, expected ')'"),
                    (_, at) => self.err(at, "too many operands, expected ')'"),
                }
            }
        }
    }

    fn terminal(&self, atom: &str, at: usize) -> Result<Expr, ExprError> {
        let t = match atom {
            "Q" => Terminal::Q,
            "Np" => Terminal::ParentVisits,
            "Nc" => Terminal::ChildVisits,
            "sqrt2" => Terminal::Const(SQRT_2),
            _ => match atom.parse::<f64>() {
                Ok(v) if v.is_finite() => Terminal::Const(v),
                _ => return self.err(at, format!("unknown terminal '{atom}'")),
            },
        };
        Ok(Expr::Leaf(t))
    }
}
