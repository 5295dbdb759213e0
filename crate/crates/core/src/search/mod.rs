//! The inference stack: candidate pool, scoring, iterative re-encoding
//! refinement, latent gradient refinement, the combined mode with its
//! validation fallback, trials, and the one-shot / CMA-ES baselines.

pub mod cmaes;
mod pool;
mod rounds;

pub use pool::{bucket_of, Pool};
pub use rounds::{
    baseline_cmaes, baseline_oneshot, gradient_refine, run_round, run_trial, ConvergencePoint,
    GradRefineOutcome, RoundResult, SearchMode, TrialResult,
};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bench::metrics::r2;
use crate::constfit::{subsample_rows, FitConfig};
use crate::expr::{complexity, evaluate, Expr};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Bench(#[from] crate::bench::BenchError),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Init,
    Iter,
    Refresh,
    Grad,
    Cma,
}

impl Origin {
    pub fn name(&self) -> &'static str {
        match self {
            Origin::Init => "init",
            Origin::Iter => "iter",
            Origin::Refresh => "refresh",
            Origin::Grad => "grad",
            Origin::Cma => "cma",
        }
    }
}

/// A scored expression with fitted constants.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub expr: Expr,
    /// Canonical token text (constants at 3 significant figures).
    pub text: String,
    /// s = clip(R^2_train, -1, 1) - alpha * C.
    pub score: f64,
    pub r2_train: f64,
    pub r2_val: f64,
    pub complexity: usize,
    pub origin: Origin,
    /// The latent the candidate was decoded from.
    pub latent: Vec<f32>,
}

/// Inference hyperparameters (defaults follow the full-scale table).
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub rounds: usize,
    pub iterations: usize,
    pub pool_size: usize,
    pub n_init: usize,
    pub n_new: usize,
    pub batch_k: usize,
    pub refresh_period: usize,
    pub alpha: f64,
    pub tau: f64,
    pub n_grad: usize,
    pub eta: f64,
    pub lambda_prox: f64,
    /// Iterations between gradient segments in the combined mode.
    pub grad_period: usize,
    /// Steps between decodes in the pure gradient mode.
    pub grad_decode_period: usize,
    /// Row cap for per-candidate R^2 scoring.
    pub score_rows: usize,
    pub n_trials: usize,
    /// Working-scatter rows re-sampled from the training fold.
    pub n_scatter: usize,
    pub max_len: usize,
    pub fit: FitConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            rounds: 10,
            iterations: 200,
            pool_size: 16,
            n_init: 32,
            n_new: 3,
            batch_k: 5,
            refresh_period: 5,
            alpha: 0.002,
            tau: 0.7,
            n_grad: 50,
            eta: 5e-3,
            lambda_prox: 0.1,
            grad_period: 25,
            grad_decode_period: 25,
            score_rows: 2000,
            n_trials: 10,
            n_scatter: 200,
            max_len: 64,
            fit: FitConfig::default(),
        }
    }
}

impl SearchConfig {
    /// Desk-scale settings for toy end-to-end runs.
    pub fn desk() -> Self {
        SearchConfig {
            rounds: 2,
            iterations: 25,
            n_init: 16,
            ..Default::default()
        }
    }
}

/// R^2 of an expression on a scatter set: rows with finite targets are used;
/// rows whose prediction is non-finite are imputed with the fold's target
/// mean. Returns None when nothing can be evaluated (no finite targets, no
/// finite prediction anywhere, or fewer than two usable rows).
pub fn eval_r2(expr: &Expr, data: &crate::datagen::ScatterSet) -> Option<f64> {
    let (pred, ok) = evaluate(expr, &data.x, data.n, data.k).ok()?;
    let mut y = Vec::new();
    let mut yh = Vec::new();
    let mut any_finite_pred = false;
    for i in 0..data.n {
        if !data.finite[i] {
            continue;
        }
        y.push(data.y[i]);
        if ok[i] {
            any_finite_pred = true;
            yh.push(pred[i]);
        } else {
            yh.push(f64::NAN); // placeholder, imputed below
        }
    }
    if y.len() < 2 || !any_finite_pred {
        return None;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    for v in yh.iter_mut() {
        if !v.is_finite() {
            *v = mean;
        }
    }
    r2(&y, &yh).ok()
}

/// Score a fitted expression on the training fold: R^2 on at most
/// `score_rows` subsampled rows, clipped to [-1, 1], minus alpha * C.
/// A fully non-finite evaluation earns the worst clip, -1 - alpha * C.
pub fn score_expr(
    expr: &Expr,
    train: &crate::datagen::ScatterSet,
    alpha: f64,
    score_rows: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, usize) {
    let c = complexity(expr);
    let sub = subsample_rows(train, score_rows, rng);
    match eval_r2(expr, &sub) {
        Some(r) => ((r.clamp(-1.0, 1.0)) - alpha * c as f64, r, c),
        None => (-1.0 - alpha * c as f64, f64::NEG_INFINITY, c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn line_scatter(n: usize) -> crate::datagen::ScatterSet {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / 10.0 - 5.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.0 * v).collect();
        crate::datagen::ScatterSet::new(x, y, 1, "line".into())
    }

    #[test]
    fn score_arithmetic() {
        // r2 = 0.9, C = 10, alpha = 0.002 -> 0.88 (checked via construction)
        let data = line_scatter(100);
        let expr = Expr::mul(Expr::con(2.0), Expr::var(0)); // perfect fit, C = 3
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, r, c) = score_expr(&expr, &data, 0.002, 2000, &mut rng);
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(c, 3);
        assert!((s - (1.0 - 0.002 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn score_clips_bad_r2_at_minus_one() {
        let data = line_scatter(50);
        let expr = Expr::con(1000.0); // terrible fit, r2 << -1
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, r, c) = score_expr(&expr, &data, 0.002, 2000, &mut rng);
        assert!(r < -1.0);
        assert_eq!(c, 1);
        assert!((s - (-1.0 - 0.002)).abs() < 1e-12);
    }

    #[test]
    fn perfect_single_node_scores_0998() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = x.clone();
        let data = crate::datagen::ScatterSet::new(x, y, 1, "id".into());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, _, c) = score_expr(&Expr::var(0), &data, 0.002, 2000, &mut rng);
        assert_eq!(c, 1);
        assert!((s - 0.998).abs() < 1e-12);
    }

    #[test]
    fn fully_non_finite_scores_worst_clip() {
        let data = line_scatter(50);
        // log of a negative constant is non-finite everywhere
        let expr = Expr::unary(crate::expr::UnaryOp::Log, Expr::con(-1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (s, _, c) = score_expr(&expr, &data, 0.002, 2000, &mut rng);
        assert!((s - (-1.0 - 0.002 * c as f64)).abs() < 1e-12);
    }
}
