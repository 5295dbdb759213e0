//! Deterministic bottom-up rewrite system, iterated to fixpoint.
//!
//! Rules: constant folding (binary and unary, only when the folded value is
//! finite), identity/annihilator elements for + - * /, double negation,
//! x - x -> 0, and x / x -> 1. Note x / x -> 1 (and 0 / x -> 0) enlarge the
//! domain at x = 0; complexity counting accepts that trade.

use super::{BinaryOp, Expr, UnaryOp};

const MAX_PASSES: usize = 20;

pub fn node_count(e: &Expr) -> usize {
    match e {
        Expr::Var(_) | Expr::Const(_) => 1,
        Expr::Unary(_, a) => 1 + node_count(a),
        Expr::Binary(_, a, b) => 1 + node_count(a) + node_count(b),
    }
}

pub fn simplify(e: &Expr) -> Expr {
    let mut cur = e.clone();
    for _ in 0..MAX_PASSES {
        let (next, changed) = rewrite(&cur);
        cur = next;
        if !changed {
            break;
        }
    }
    cur
}

/// Node count of the simplified tree; constants count as one node each.
pub fn complexity(e: &Expr) -> usize {
    node_count(&simplify(e))
}

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn rewrite(e: &Expr) -> (Expr, bool) {
    match e {
        Expr::Var(_) | Expr::Const(_) => (e.clone(), false),
        Expr::Unary(op, a) => {
            let (a, ch) = rewrite(a);
            if let Expr::Const(c) = a {
                let v = op.apply(c);
                if v.is_finite() {
                    return (Expr::Const(v), true);
                }
            }
            if *op == UnaryOp::Neg {
                if let Expr::Unary(UnaryOp::Neg, inner) = &a {
                    return ((**inner).clone(), true);
                }
            }
            (Expr::Unary(*op, Box::new(a)), ch)
        }
        Expr::Binary(op, a, b) => {
            let (a, cha) = rewrite(a);
            let (b, chb) = rewrite(b);
            let ch = cha || chb;
            if let (Expr::Const(ca), Expr::Const(cb)) = (&a, &b) {
                let v = op.apply(*ca, *cb);
                if v.is_finite() {
                    return (Expr::Const(v), true);
                }
            }
            match op {
                BinaryOp::Add => {
                    if is_const(&a, 0.0) {
                        return (b, true);
                    }
                    if is_const(&b, 0.0) {
                        return (a, true);
                    }
                }
                BinaryOp::Sub => {
                    if is_const(&b, 0.0) {
                        return (a, true);
                    }
                    if a == b {
                        return (Expr::Const(0.0), true);
                    }
                    if is_const(&a, 0.0) {
                        return (Expr::unary(UnaryOp::Neg, b), true);
                    }
                }
                BinaryOp::Mul => {
                    if is_const(&a, 1.0) {
                        return (b, true);
                    }
                    if is_const(&b, 1.0) {
                        return (a, true);
                    }
                    if is_const(&a, 0.0) || is_const(&b, 0.0) {
                        return (Expr::Const(0.0), true);
                    }
                }
                BinaryOp::Div => {
                    if is_const(&b, 1.0) {
                        return (a, true);
                    }
                    if a == b {
                        return (Expr::Const(1.0), true);
                    }
                    if is_const(&a, 0.0) {
                        return (Expr::Const(0.0), true);
                    }
                }
            }
            (Expr::Binary(*op, Box::new(a), Box::new(b)), ch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_identity() {
        let e = Expr::add(Expr::var(0), Expr::con(0.0));
        assert_eq!(simplify(&e), Expr::var(0));
    }

    #[test]
    fn multiplicative_identity() {
        let e = Expr::mul(Expr::con(1.0), Expr::unary(UnaryOp::Sin, Expr::var(0)));
        assert_eq!(simplify(&e), Expr::unary(UnaryOp::Sin, Expr::var(0)));
    }

    #[test]
    fn double_negation() {
        let e = Expr::unary(UnaryOp::Neg, Expr::unary(UnaryOp::Neg, Expr::var(0)));
        assert_eq!(simplify(&e), Expr::var(0));
    }

    #[test]
    fn x_minus_x_and_x_over_x() {
        let e = Expr::sub(Expr::var(1), Expr::var(1));
        assert_eq!(simplify(&e), Expr::Const(0.0));
        let e = Expr::div(Expr::unary(UnaryOp::Cos, Expr::var(0)), Expr::unary(UnaryOp::Cos, Expr::var(0)));
        assert_eq!(simplify(&e), Expr::Const(1.0));
    }

    #[test]
    fn constant_folding_including_sq_cube() {
        let e = Expr::unary(UnaryOp::Sq, Expr::con(3.0));
        assert_eq!(simplify(&e), Expr::Const(9.0));
        let e = Expr::unary(UnaryOp::Cube, Expr::con(-2.0));
        assert_eq!(simplify(&e), Expr::Const(-8.0));
        let e = Expr::add(Expr::con(2.0), Expr::mul(Expr::con(3.0), Expr::con(4.0)));
        assert_eq!(simplify(&e), Expr::Const(14.0));
    }

    #[test]
    fn non_finite_fold_left_in_place() {
        // log(-1) must not fold into a NaN constant
        let e = Expr::unary(UnaryOp::Log, Expr::con(-1.0));
        assert_eq!(simplify(&e), e);
    }

    #[test]
    fn complexity_counts_simplified_nodes() {
        assert_eq!(complexity(&Expr::var(0)), 1);
        assert_eq!(complexity(&Expr::add(Expr::var(0), Expr::con(0.0))), 1);
        let e = Expr::add(Expr::mul(Expr::var(0), Expr::var(1)), Expr::con(2.0));
        assert_eq!(complexity(&e), 5);
    }

    #[test]
    fn cascading_rewrites_reach_fixpoint() {
        // neg(neg(x0 + 0)) * 1 -> x0
        let e = Expr::mul(
            Expr::unary(
                UnaryOp::Neg,
                Expr::unary(UnaryOp::Neg, Expr::add(Expr::var(0), Expr::con(0.0))),
            ),
            Expr::con(1.0),
        );
        assert_eq!(simplify(&e), Expr::var(0));
    }
}
