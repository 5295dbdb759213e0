//! Guarded batch evaluation over row-major inputs.

use super::{Expr, ExprError};

/// Any intermediate with magnitude above this is treated as non-finite.
pub const OVERFLOW_GUARD: f64 = 1e30;

fn guard(v: f64) -> bool {
    v.is_finite() && v.abs() <= OVERFLOW_GUARD
}

/// Evaluate `expr` on `n` rows of `k` columns (row-major `x`). Returns the
/// value vector and a finite mask. The mask is monotone: once a subexpression
/// goes non-finite on a row, every ancestor is masked on that row, and the
/// value is poisoned to NaN. Evaluation never aborts on domain errors.
pub fn evaluate(expr: &Expr, x: &[f64], n: usize, k: usize) -> Result<(Vec<f64>, Vec<bool>), ExprError> {
    debug_assert_eq!(x.len(), n * k);
    if let Some(mv) = expr.max_var() {
        if mv as usize >= k {
            return Err(ExprError::VarOutOfRange { index: mv, k });
        }
    }
    let (vals, ok) = eval_node(expr, x, n, k);
    Ok((vals, ok))
}

fn eval_node(expr: &Expr, x: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<bool>) {
    match expr {
        Expr::Var(i) => {
            let i = *i as usize;
            let vals: Vec<f64> = (0..n).map(|r| x[r * k + i]).collect();
            let ok: Vec<bool> = vals.iter().map(|&v| guard(v)).collect();
            (vals, ok)
        }
        Expr::Const(c) => {
            let good = guard(*c);
            (vec![*c; n], vec![good; n])
        }
        Expr::Unary(op, a) => {
            let (av, aok) = eval_node(a, x, n, k);
            let mut vals = vec![f64::NAN; n];
            let mut ok = vec![false; n];
            for r in 0..n {
                if aok[r] {
                    let v = op.apply(av[r]);
                    if guard(v) {
                        vals[r] = v;
                        ok[r] = true;
                    }
                }
            }
            (vals, ok)
        }
        Expr::Binary(op, a, b) => {
            let (av, aok) = eval_node(a, x, n, k);
            let (bv, bok) = eval_node(b, x, n, k);
            let mut vals = vec![f64::NAN; n];
            let mut ok = vec![false; n];
            for r in 0..n {
                if aok[r] && bok[r] {
                    let v = op.apply(av[r], bv[r]);
                    if guard(v) {
                        vals[r] = v;
                        ok[r] = true;
                    }
                }
            }
            (vals, ok)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::UnaryOp;

    #[test]
    fn add_constant() {
        let e = Expr::add(Expr::var(0), Expr::con(1.0));
        let (y, ok) = evaluate(&e, &[2.0], 1, 1).unwrap();
        assert_eq!(y, vec![3.0]);
        assert_eq!(ok, vec![true]);
    }

    #[test]
    fn log_of_negative_is_masked() {
        let e = Expr::unary(UnaryOp::Log, Expr::var(0));
        let (_, ok) = evaluate(&e, &[-1.0, 1.0], 2, 1).unwrap();
        assert_eq!(ok, vec![false, true]);
    }

    #[test]
    fn division_by_zero_masked() {
        let e = Expr::div(Expr::con(1.0), Expr::var(0));
        let (_, ok) = evaluate(&e, &[0.0, 2.0], 2, 1).unwrap();
        assert_eq!(ok, vec![false, true]);
    }

    #[test]
    fn overflow_guard_masks_and_poisons_ancestors() {
        // 1e20 * 1e20 = 1e40 > guard; subtracting it back would be finite,
        // but the mask must stay monotone.
        let big = Expr::mul(Expr::con(1e20), Expr::con(1e20));
        let e = Expr::sub(big.clone(), big);
        let (y, ok) = evaluate(&e, &[0.0], 1, 1).unwrap();
        assert_eq!(ok, vec![false]);
        assert!(y[0].is_nan());
    }

    #[test]
    fn var_out_of_range_rejected() {
        let e = Expr::var(2);
        assert!(evaluate(&e, &[1.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn product_to_sum_identity() {
        // 2 sin(x0) cos(x1) == sin(x0+x1) + sin(x0-x1)
        let lhs = Expr::mul(
            Expr::con(2.0),
            Expr::mul(
                Expr::unary(UnaryOp::Sin, Expr::var(0)),
                Expr::unary(UnaryOp::Cos, Expr::var(1)),
            ),
        );
        let rhs = Expr::add(
            Expr::unary(UnaryOp::Sin, Expr::add(Expr::var(0), Expr::var(1))),
            Expr::unary(UnaryOp::Sin, Expr::sub(Expr::var(0), Expr::var(1))),
        );
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 1000;
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (ya, oka) = evaluate(&lhs, &x, n, 2).unwrap();
        let (yb, okb) = evaluate(&rhs, &x, n, 2).unwrap();
        for r in 0..n {
            assert!(oka[r] && okb[r]);
            assert!((ya[r] - yb[r]).abs() < 1e-12, "row {r}: {} vs {}", ya[r], yb[r]);
        }
    }
}
