//! Property suites over grammar-sampled expressions: serialization
//! round-trips, the independent evaluation oracle, simplifier idempotence,
//! and finite-mask monotonicity.

use lee_core::datagen::{GrammarConfig, Sampler};
use lee_core::expr::{
    complexity, evaluate, node_count, parse, round_to_3_sig, simplify, tokenize, BinaryOp, Expr,
    UnaryOp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample_exprs(n: usize, seed: u64, k: usize) -> Vec<Expr> {
    let mut sampler = Sampler::new(GrammarConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sampler.sample_expression(&mut rng, k).unwrap()).collect()
}

/// Round every constant to 3 significant figures, the precision carried by
/// token blocks.
fn round_constants(e: &Expr) -> Expr {
    match e {
        Expr::Var(i) => Expr::Var(*i),
        Expr::Const(v) => Expr::Const(round_to_3_sig(*v)),
        Expr::Unary(op, a) => Expr::Unary(*op, Box::new(round_constants(a))),
        Expr::Binary(op, a, b) => {
            Expr::Binary(*op, Box::new(round_constants(a)), Box::new(round_constants(b)))
        }
    }
}

#[test]
fn grammar_samples_round_trip_through_parse() {
    for (seed, k) in [(1u64, 1usize), (2, 2), (3, 3)] {
        for e in sample_exprs(700, seed, k) {
            let back = parse(&tokenize(&e)).unwrap();
            assert_eq!(back, round_constants(&e), "round trip failed for {e:?}");
        }
    }
}

/// Independent naive recursive evaluator: straight f64 per-row recursion,
/// no masking logic at all.
fn naive_eval(e: &Expr, row: &[f64]) -> f64 {
    match e {
        Expr::Var(i) => row[*i as usize],
        Expr::Const(v) => *v,
        Expr::Unary(op, a) => {
            let x = naive_eval(a, row);
            match op {
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
        Expr::Binary(op, a, b) => {
            let x = naive_eval(a, row);
            let y = naive_eval(b, row);
            match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                BinaryOp::Div => x / y,
            }
        }
    }
}

#[test]
fn evaluator_matches_naive_recursive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for e in sample_exprs(300, 11, 2) {
        let n = 50;
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let (vals, ok) = evaluate(&e, &x, n, 2).unwrap();
        for r in 0..n {
            if ok[r] {
                let want = naive_eval(&e, &x[r * 2..(r + 1) * 2]);
                assert!(want.is_finite());
                let rel = (vals[r] - want).abs() / want.abs().max(1e-12);
                assert!(rel < 1e-9, "{e:?} row {r}: {} vs {}", vals[r], want);
            }
        }
    }
}

#[test]
fn simplify_is_idempotent_and_never_grows() {
    for e in sample_exprs(800, 21, 2) {
        let s1 = simplify(&e);
        let s2 = simplify(&s1);
        assert_eq!(s1, s2, "not idempotent on {e:?}");
        assert!(complexity(&e) <= node_count(&e));
        assert_eq!(complexity(&e), node_count(&s1));
    }
}

#[test]
fn simplified_expression_is_functionally_equal() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for e in sample_exprs(200, 32, 2) {
        let s = simplify(&e);
        let n = 40;
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let (va, oa) = evaluate(&e, &x, n, 2).unwrap();
        let (vb, ob) = evaluate(&s, &x, n, 2).unwrap();
        for r in 0..n {
            if oa[r] && ob[r] {
                let rel = (va[r] - vb[r]).abs() / va[r].abs().max(1.0);
                assert!(rel < 1e-9, "{e:?} vs {s:?} at row {r}: {} vs {}", va[r], vb[r]);
            }
        }
    }
}

/// Every subtree of an expression, paired with the expression itself.
fn subtrees(e: &Expr, out: &mut Vec<Expr>) {
    out.push(e.clone());
    match e {
        Expr::Var(_) | Expr::Const(_) => {}
        Expr::Unary(_, a) => subtrees(a, out),
        Expr::Binary(_, a, b) => {
            subtrees(a, out);
            subtrees(b, out);
        }
    }
}

#[test]
fn finite_mask_is_monotone_up_the_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    // domain straddling zero makes log/sqrt/div failures common
    for e in sample_exprs(150, 42, 2) {
        let n = 30;
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (_, root_ok) = evaluate(&e, &x, n, 2).unwrap();
        let mut subs = Vec::new();
        subtrees(&e, &mut subs);
        for sub in &subs {
            let (_, sub_ok) = evaluate(sub, &x, n, 2).unwrap();
            for r in 0..n {
                if !sub_ok[r] {
                    assert!(!root_ok[r], "row {r}: subtree masked but ancestor finite in {e:?}");
                }
            }
        }
    }
}
