//! Constant refinement: bounded limited-memory quasi-Newton (L-BFGS-B style
//! projected two-loop recursion) minimizing MSE on the training fold, with
//! gradients by central finite differences on the expression evaluator.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::datagen::ScatterSet;
use crate::expr::{evaluate, Expr};

/// Penalty applied per row whose prediction is non-finite, so that shrinking
/// the finite domain never looks like an improvement.
const NONFINITE_ROW_PENALTY: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct FitConfig {
    /// History pairs kept by the two-loop recursion.
    pub memory: usize,
    /// Projected-gradient infinity-norm convergence threshold.
    pub pg_tol: f64,
    /// Box bounds applied to every constant.
    pub bound_lo: f64,
    pub bound_hi: f64,
    /// Row cap for each fit; larger sets are subsampled.
    pub subsample_cap: usize,
    /// Relative central-difference step per constant.
    pub fd_rel_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            memory: 10,
            pg_tol: 1e-8,
            bound_lo: -1e4,
            bound_hi: 1e4,
            subsample_cap: 1000,
            fd_rel_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitOutcome {
    /// Constants replaced by better values.
    Improved,
    /// Expression has no constants.
    NoConstants,
    /// Optimization failed to improve; original constants restored.
    NotImproved,
    /// Objective non-finite at the initial point; returned unchanged.
    DegenerateInit,
}

/// Linear budget ramp over rounds: 100 at round 1 up to 300 at round R.
pub fn budget_for_round(round: usize, total_rounds: usize) -> usize {
    if total_rounds <= 1 {
        return 300;
    }
    let r = round.clamp(1, total_rounds) as f64;
    (100.0 + 200.0 * (r - 1.0) / (total_rounds as f64 - 1.0)).round() as usize
}

/// Uniform row subsample without replacement, capped at `cap`; sets at or
/// under the cap are returned unchanged.
pub fn subsample_rows(data: &ScatterSet, cap: usize, rng: &mut ChaCha8Rng) -> ScatterSet {
    if data.n <= cap {
        return data.clone();
    }
    let mut rows: Vec<usize> = (0..data.n).collect();
    rows.partial_shuffle(rng, cap);
    rows.truncate(cap);
    data.select(&rows)
}

/// MSE over rows with finite targets; rows whose prediction is non-finite
/// contribute a fixed penalty. Returns None when no target row is finite.
fn objective(expr: &Expr, consts: &[f64], data: &ScatterSet) -> Option<f64> {
    let candidate = expr.with_constants(consts);
    let (pred, ok) = evaluate(&candidate, &data.x, data.n, data.k).ok()?;
    let mut acc = 0f64;
    let mut rows = 0usize;
    for i in 0..data.n {
        if !data.finite[i] {
            continue;
        }
        rows += 1;
        if ok[i] {
            let d = pred[i] - data.y[i];
            acc += d * d;
        } else {
            acc += NONFINITE_ROW_PENALTY;
        }
    }
    if rows == 0 {
        None
    } else {
        Some(acc / rows as f64)
    }
}

fn clip(x: &mut [f64], lo: f64, hi: f64) {
    for v in x.iter_mut() {
        *v = v.clamp(lo, hi);
    }
}

/// Bounded quasi-Newton minimization: two-loop L-BFGS direction, projection
/// onto the box, Armijo backtracking. `budget` counts outer iterations.
pub fn minimize_bounded(
    f: &mut dyn FnMut(&[f64]) -> f64,
    grad: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    x0: &[f64],
    budget: usize,
    cfg: &FitConfig,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut x = x0.to_vec();
    clip(&mut x, cfg.bound_lo, cfg.bound_hi);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new(); // (s, y, rho)

    for _ in 0..budget {
        // projected-gradient convergence check
        let mut pg = 0f64;
        for i in 0..n {
            let stepped = (x[i] - g[i]).clamp(cfg.bound_lo, cfg.bound_hi);
            pg = pg.max((stepped - x[i]).abs());
        }
        if pg < cfg.pg_tol || !fx.is_finite() {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, yv, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for i in 0..n {
                q[i] -= a * yv[i];
            }
            alphas.push(a);
        }
        if let Some((s, yv, _)) = hist.last() {
            let gamma = dot(s, yv) / dot(yv, yv).max(1e-300);
            for v in q.iter_mut() {
                *v *= gamma;
            }
        }
        for ((s, yv, rho), &a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &q);
            for i in 0..n {
                q[i] += s[i] * (a - b);
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|&v| -v).collect();
        if dot(&dir, &g) >= 0.0 {
            // not a descent direction; fall back to steepest descent
            dir = g.iter().map(|&v| -v).collect();
        }
        // backtracking with projection
        let gnorm = dot(&g, &g).sqrt().max(1e-12);
        let mut alpha = if hist.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + alpha * dir[i]).collect();
            clip(&mut xn, cfg.bound_lo, cfg.bound_hi);
            let fn_ = f(&xn);
            let actual: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
            let slope = dot(&g, &actual);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * slope.min(0.0) && fn_ < fx {
                let gn = grad(&xn);
                let s = actual;
                let yv: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
                let sy = dot(&s, &yv);
                if sy > 1e-12 * norm(&s) * norm(&yv) {
                    let rho = 1.0 / sy;
                    hist.push((s, yv, rho));
                    if hist.len() > cfg.memory {
                        hist.remove(0);
                    }
                }
                x = xn;
                fx = fn_;
                g = gn;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
        if !accepted {
            break;
        }
    }
    (best_x, best_f)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Refine the constants of `expr` against `data`. Deterministic given
/// (expr, data, budget, rng seed); the fitted expression's training MSE is
/// never worse than the input's.
pub fn fit_constants(
    expr: &Expr,
    data: &ScatterSet,
    budget: usize,
    rng: &mut ChaCha8Rng,
    cfg: &FitConfig,
) -> (Expr, FitOutcome) {
    let init = expr.constants();
    if init.is_empty() {
        return (expr.clone(), FitOutcome::NoConstants);
    }
    let sub = subsample_rows(data, cfg.subsample_cap, rng);
    let mut c0 = init.clone();
    clip(&mut c0, cfg.bound_lo, cfg.bound_hi);
    let f0 = match objective(expr, &c0, &sub) {
        Some(v) if v.is_finite() => v,
        _ => return (expr.clone(), FitOutcome::DegenerateInit),
    };
    let fd = cfg.fd_rel_step;
    let mut f = |c: &[f64]| objective(expr, c, &sub).unwrap_or(f64::INFINITY);
    let mut grad = |c: &[f64]| {
        let mut g = vec![0f64; c.len()];
        let mut probe = c.to_vec();
        for i in 0..c.len() {
            let h = fd * c[i].abs().max(1.0);
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = objective(expr, &probe, &sub).unwrap_or(f64::INFINITY);
            probe[i] = orig - h;
            let fm = objective(expr, &probe, &sub).unwrap_or(f64::INFINITY);
            probe[i] = orig;
            g[i] = if fp.is_finite() && fm.is_finite() { (fp - fm) / (2.0 * h) } else { 0.0 };
        }
        g
    };
    let (best, best_f) = minimize_bounded(&mut f, &mut grad, &c0, budget, cfg);
    if best_f < f0 {
        (expr.with_constants(&best), FitOutcome::Improved)
    } else {
        (expr.clone(), FitOutcome::NotImproved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn line_data(n: usize, seed: u64) -> ScatterSet {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..n).map(|_| r.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.0 * v + 1.0).collect();
        ScatterSet::new(x, y, 1, "line".into())
    }

    /// Closed-form least squares for y = a x + b.
    fn least_squares(data: &ScatterSet) -> (f64, f64) {
        let n = data.n as f64;
        let mx = data.x.iter().sum::<f64>() / n;
        let my = data.y.iter().sum::<f64>() / n;
        let cov: f64 = data.x.iter().zip(data.y.iter()).map(|(&x, &y)| (x - mx) * (y - my)).sum();
        let var: f64 = data.x.iter().map(|&x| (x - mx) * (x - mx)).sum();
        let a = cov / var;
        (a, my - a * mx)
    }

    #[test]
    fn recovers_line_coefficients() {
        let data = line_data(200, 1);
        let (a_star, b_star) = least_squares(&data);
        let expr = Expr::add(Expr::mul(Expr::con(0.3), Expr::var(0)), Expr::con(-0.7));
        let (fitted, outcome) = fit_constants(&expr, &data, 300, &mut rng(2), &FitConfig::default());
        assert_eq!(outcome, FitOutcome::Improved);
        let c = fitted.constants();
        assert!((c[0] - a_star).abs() < 1e-3, "a {} vs {}", c[0], a_star);
        assert!((c[1] - b_star).abs() < 1e-3, "b {} vs {}", c[1], b_star);
    }

    #[test]
    fn no_constants_returns_identical_expr() {
        let data = line_data(50, 3);
        let expr = Expr::mul(Expr::var(0), Expr::var(0));
        let (out, outcome) = fit_constants(&expr, &data, 100, &mut rng(4), &FitConfig::default());
        assert_eq!(outcome, FitOutcome::NoConstants);
        assert_eq!(out, expr);
    }

    #[test]
    fn degenerate_init_flagged() {
        // all targets non-finite
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![f64::NAN, f64::INFINITY, f64::NAN];
        let data = ScatterSet::new(x, y, 1, "bad".into());
        let expr = Expr::add(Expr::var(0), Expr::con(1.0));
        let (out, outcome) = fit_constants(&expr, &data, 100, &mut rng(5), &FitConfig::default());
        assert_eq!(outcome, FitOutcome::DegenerateInit);
        assert_eq!(out, expr);
    }

    #[test]
    fn budget_ramp_endpoints() {
        assert_eq!(budget_for_round(1, 10), 100);
        assert_eq!(budget_for_round(10, 10), 300);
        for r in 2..10 {
            let b = budget_for_round(r, 10);
            assert!(b > budget_for_round(r - 1, 10) && b < 300);
        }
        // linear between: round 5 and 6 bracket the midpoint
        assert_eq!(budget_for_round(5, 10), 189);
        assert_eq!(budget_for_round(6, 10), 211);
    }

    #[test]
    fn subsample_caps_and_is_deterministic() {
        let data = line_data(5000, 6);
        let a = subsample_rows(&data, 1000, &mut rng(7));
        assert_eq!(a.n, 1000);
        let b = subsample_rows(&data, 1000, &mut rng(7));
        assert_eq!(a.x, b.x);
        let small = line_data(500, 8);
        let c = subsample_rows(&small, 1000, &mut rng(9));
        assert_eq!(c.x, small.x);
        assert_eq!(c.y, small.y);
    }

    #[test]
    fn fit_never_worsens_training_mse() {
        let mut r = rng(10);
        for trial in 0..10 {
            let n = 80;
            let x: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = x.iter().map(|&v| (v * 1.3).sin() * 4.0 + 0.2 * v * v).collect();
            let data = ScatterSet::new(x, y, 1, "t".into());
            let expr = Expr::add(
                Expr::mul(Expr::con(r.gen_range(-3.0..3.0)), Expr::unary(crate::expr::UnaryOp::Sin, Expr::var(0))),
                Expr::mul(Expr::con(r.gen_range(-3.0..3.0)), Expr::var(0)),
            );
            let before = objective(&expr, &expr.constants(), &data).unwrap();
            let (fitted, _) = fit_constants(&expr, &data, 150, &mut rng(100 + trial), &FitConfig::default());
            let after = objective(&fitted, &fitted.constants(), &data).unwrap();
            assert!(after <= before + 1e-12, "trial {trial}: {before} -> {after}");
        }
    }

    #[test]
    fn determinism_given_seed() {
        let data = line_data(3000, 11);
        let expr = Expr::add(Expr::mul(Expr::con(0.1), Expr::var(0)), Expr::con(0.0));
        let run = |seed| {
            let (f, _) = fit_constants(&expr, &data, 120, &mut rng(seed), &FitConfig::default());
            f.constants()
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn out_of_box_constants_clipped_at_init() {
        let data = line_data(100, 12);
        let expr = Expr::add(Expr::mul(Expr::con(9.9e9), Expr::var(0)), Expr::con(0.0));
        let (fitted, _) = fit_constants(&expr, &data, 200, &mut rng(13), &FitConfig::default());
        for c in fitted.constants() {
            assert!((-1e4..=1e4).contains(&c));
        }
    }

    #[test]
    fn bounded_minimum_lands_on_box_face() {
        // f(x) = (x - 5)^2 constrained to [-1, 1]
        let cfg = FitConfig { bound_lo: -1.0, bound_hi: 1.0, ..Default::default() };
        let mut f = |x: &[f64]| (x[0] - 5.0) * (x[0] - 5.0);
        let mut g = |x: &[f64]| vec![2.0 * (x[0] - 5.0)];
        let (x, _) = minimize_bounded(&mut f, &mut g, &[0.0], 100, &cfg);
        assert!((x[0] - 1.0).abs() < 1e-9);
    }
}
