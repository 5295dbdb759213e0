//! Expression trees: prefix tokenization, parsing, guarded evaluation,
//! rule-based simplification, and complexity measurement.
//!
//! All types are immutable after construction and all operations are pure.

mod constant;
mod eval;
mod parse;
mod pretty;
mod simplify;
mod token;

pub use constant::{decode_constant, encode_constant, round_to_3_sig};
pub use eval::{evaluate, OVERFLOW_GUARD};
pub use parse::{parse, tokenize, ParseError, ParseErrorKind};
pub use pretty::to_infix;
pub use simplify::{complexity, node_count, simplify};
pub use token::{OpToken, Token, TokenSeq, ALL_OPS, MAX_VARS, VOCAB_SIZE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExprError {
    #[error("constant is not a finite real: {0}")]
    NonFiniteConstant(f64),
    #[error("token id {0} outside the 40-token vocabulary")]
    BadTokenId(u32),
    #[error("unknown token name `{0}`")]
    BadTokenName(String),
    #[error("expression uses x{index} but only {k} input columns were provided")]
    VarOutOfRange { index: u8, k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Tan,
    Tanh,
    Exp,
    Log,
    Sqrt,
    Sq,
    Cube,
    Abs,
    Neg,
}

impl BinaryOp {
    pub fn token(&self) -> OpToken {
        match self {
            BinaryOp::Add => OpToken::Add,
            BinaryOp::Sub => OpToken::Sub,
            BinaryOp::Mul => OpToken::Mul,
            BinaryOp::Div => OpToken::Div,
        }
    }

    pub fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

impl UnaryOp {
    pub fn token(&self) -> OpToken {
        match self {
            UnaryOp::Sin => OpToken::Sin,
            UnaryOp::Cos => OpToken::Cos,
            UnaryOp::Tan => OpToken::Tan,
            UnaryOp::Tanh => OpToken::Tanh,
            UnaryOp::Exp => OpToken::Exp,
            UnaryOp::Log => OpToken::Log,
            UnaryOp::Sqrt => OpToken::Sqrt,
            UnaryOp::Sq => OpToken::Sq,
            UnaryOp::Cube => OpToken::Cube,
            UnaryOp::Abs => OpToken::Abs,
            UnaryOp::Neg => OpToken::Neg,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tan => x.tan(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Sq => x * x,
            UnaryOp::Cube => x * x * x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Neg => -x,
        }
    }
}

pub const ALL_BINARY: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];
pub const ALL_UNARY: [UnaryOp; 11] = [
    UnaryOp::Sin,
    UnaryOp::Cos,
    UnaryOp::Tan,
    UnaryOp::Tanh,
    UnaryOp::Exp,
    UnaryOp::Log,
    UnaryOp::Sqrt,
    UnaryOp::Sq,
    UnaryOp::Cube,
    UnaryOp::Abs,
    UnaryOp::Neg,
];

/// Immutable expression tree. Every constant is a finite real; arity is
/// enforced by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(u8),
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(i: u8) -> Expr {
        Expr::Var(i)
    }

    pub fn con(v: f64) -> Expr {
        debug_assert!(v.is_finite());
        Expr::Const(v)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryOp::Div, a, b)
    }

    /// Highest variable index used, if any variable appears.
    pub fn max_var(&self) -> Option<u8> {
        match self {
            Expr::Var(i) => Some(*i),
            Expr::Const(_) => None,
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Set of variable indices that appear in the tree.
    pub fn vars_used(&self) -> std::collections::BTreeSet<u8> {
        let mut set = std::collections::BTreeSet::new();
        self.collect_vars(&mut set);
        set
    }

    fn collect_vars(&self, set: &mut std::collections::BTreeSet<u8>) {
        match self {
            Expr::Var(i) => {
                set.insert(*i);
            }
            Expr::Const(_) => {}
            Expr::Unary(_, a) => a.collect_vars(set),
            Expr::Binary(_, a, b) => {
                a.collect_vars(set);
                b.collect_vars(set);
            }
        }
    }

    /// Operator multiset as tokens, for structural property labeling.
    pub fn collect_ops(&self, out: &mut Vec<OpToken>) {
        match self {
            Expr::Var(_) | Expr::Const(_) => {}
            Expr::Unary(op, a) => {
                out.push(op.token());
                a.collect_ops(out);
            }
            Expr::Binary(op, a, b) => {
                out.push(op.token());
                a.collect_ops(out);
                b.collect_ops(out);
            }
        }
    }

    /// Constant values in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_constants(&mut out);
        out
    }

    fn collect_constants(&self, out: &mut Vec<f64>) {
        match self {
            Expr::Const(v) => out.push(*v),
            Expr::Var(_) => {}
            Expr::Unary(_, a) => a.collect_constants(out),
            Expr::Binary(_, a, b) => {
                a.collect_constants(out);
                b.collect_constants(out);
            }
        }
    }

    /// Rebuild the tree with constants replaced in pre-order.
    pub fn with_constants(&self, vals: &[f64]) -> Expr {
        let mut idx = 0;
        let out = self.substitute(vals, &mut idx);
        debug_assert_eq!(idx, vals.len());
        out
    }

    fn substitute(&self, vals: &[f64], idx: &mut usize) -> Expr {
        match self {
            Expr::Const(_) => {
                let v = vals[*idx];
                *idx += 1;
                Expr::Const(v)
            }
            Expr::Var(i) => Expr::Var(*i),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.substitute(vals, idx))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(vals, idx)),
                Box::new(b.substitute(vals, idx)),
            ),
        }
    }

    /// Rename variables through `perm` (slot i becomes slot perm[i]).
    pub fn permute_vars(&self, perm: &[u8]) -> Expr {
        match self {
            Expr::Var(i) => Expr::Var(perm[*i as usize]),
            Expr::Const(v) => Expr::Const(*v),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.permute_vars(perm))),
            Expr::Binary(op, a, b) => {
                Expr::Binary(*op, Box::new(a.permute_vars(perm)), Box::new(b.permute_vars(perm)))
            }
        }
    }
}
