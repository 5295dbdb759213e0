//! Rounds and trials: iterative re-encoding, latent gradient descent, the
//! combined mode with validation fallback, and budget-matched baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cmaes::Cmaes;
use super::{eval_r2, score_expr, Candidate, Origin, Pool, SearchConfig, SearchError};
use crate::bench::protocol::{add_noise, split};
use crate::constfit::{budget_for_round, fit_constants, subsample_rows};
use crate::datagen::ScatterSet;
use crate::expr::{parse, tokenize, to_infix, TokenSeq};
use crate::model::{DecodeMode, EncodeMode, LeeModel};
use lee_tensor::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Iterative,
    Gradient,
    Combined,
}

#[derive(Debug, Clone)]
pub struct ConvergencePoint {
    pub iteration: usize,
    pub best_score: f64,
    pub best_r2_train: f64,
    pub best_complexity: usize,
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub winner: Option<Candidate>,
    pub convergence: Vec<ConvergencePoint>,
    pub decode_calls: usize,
    pub discarded: usize,
    pub grad_segments_reverted: usize,
    pub fallback_applied: bool,
    /// Validation R^2 of the best non-gradient candidate that entered the
    /// pool (the iterative champion the safety fallback compares against).
    pub best_iterative_val: Option<f64>,
    pub failure: Option<String>,
}

/// Parse, constant-fit, and score one decoded sequence. Unparseable decodes
/// return None and are discarded by the caller.
#[allow(clippy::too_many_arguments)]
fn make_candidate(
    seq: &TokenSeq,
    origin: Origin,
    latent: &[f32],
    train: &ScatterSet,
    val: &ScatterSet,
    fit_budget: usize,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let expr = parse(seq).ok()?;
    let (fitted, _outcome) = fit_constants(&expr, train, fit_budget, rng, &cfg.fit);
    let text = tokenize(&fitted).to_text();
    let (score, r2_train, complexity) = score_expr(&fitted, train, cfg.alpha, cfg.score_rows, rng);
    let r2_val = eval_r2(&fitted, val).unwrap_or(f64::NEG_INFINITY);
    Some(Candidate { expr: fitted, text, score, r2_train, r2_val, complexity, origin, latent: latent.to_vec() })
}

/// Decode `count` candidates from one latent: the first greedily, the rest
/// temperature-sampled.
#[allow(clippy::too_many_arguments)]
fn decode_candidates(
    model: &LeeModel,
    z: &[f32],
    count: usize,
    origin: Origin,
    train: &ScatterSet,
    val: &ScatterSet,
    fit_budget: usize,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
    decode_calls: &mut usize,
    discarded: &mut usize,
    greedy_first: bool,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    for i in 0..count {
        let mode = if greedy_first && i == 0 { DecodeMode::Greedy } else { DecodeMode::Sample(cfg.tau) };
        let decoded = model.decode_expression(z, mode, Some(rng), cfg.max_len);
        *decode_calls += 1;
        match decoded {
            Ok((seq, _truncated)) => match make_candidate(&seq, origin, z, train, val, fit_budget, cfg, rng) {
                Some(c) => out.push(c),
                None => *discarded += 1,
            },
            Err(_) => *discarded += 1,
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GradRefineOutcome {
    pub z: Vec<f32>,
    pub reverted: bool,
    pub objective_start: f64,
    pub objective_end: f64,
}

/// Latent gradient refinement: Adam steps on z minimizing
/// ||g_eval(z, X) - y||_2^2 + lambda_prox ||z - z_anchor||_2^2
/// over the finite rows of `scatter`. A non-finite objective reverts to the
/// anchor.
pub fn gradient_refine(
    model: &LeeModel,
    anchor: &[f32],
    scatter: &ScatterSet,
    n_steps: usize,
    eta: f64,
    lambda_prox: f64,
) -> GradRefineOutcome {
    let rows: Vec<usize> = (0..scatter.n).filter(|&i| scatter.finite[i]).collect();
    if rows.is_empty() {
        return GradRefineOutcome { z: anchor.to_vec(), reverted: true, objective_start: f64::NAN, objective_end: f64::NAN };
    }
    let sub = scatter.select(&rows);
    let k_max = model.cfg.k_max;
    let mut queries = vec![0f64; sub.n * k_max];
    for r in 0..sub.n {
        for c in 0..sub.k.min(k_max) {
            queries[r * k_max + c] = sub.x[r * sub.k + c];
        }
    }
    let y: Vec<f32> = sub.y.iter().map(|&v| v as f32).collect();
    let d_z = model.cfg.d_z;
    let mut z = anchor.to_vec();
    let mut m = vec![0f64; d_z];
    let mut v = vec![0f64; d_z];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut objective_start = f64::NAN;
    let mut objective_end = f64::NAN;

    let eval_obj_and_grad = |zv: &[f32], want_grad: bool| -> (f64, Option<Vec<f32>>) {
        let mut g = Graph::new(&model.store, false);
        let zt = g.tape.leaf(&[1, d_z], zv.to_vec()).expect("leaf");
        let yhat = model
            .decode_eval_graph(&mut g, zt, &queries, 1, sub.n, None)
            .expect("eval decoder forward");
        let yt = g.tape.leaf(&[1, sub.n], y.clone()).expect("leaf");
        let diff = g.tape.sub(yhat, yt).expect("sub");
        let sq = g.tape.square(diff).expect("square");
        let data_term = g.tape.sum_all(sq);
        let at = g.tape.leaf(&[1, d_z], anchor.to_vec()).expect("leaf");
        let dz = g.tape.sub(zt, at).expect("sub");
        let dz2 = g.tape.square(dz).expect("square");
        let prox = g.tape.sum_all(dz2);
        let prox_s = g.tape.scale(prox, lambda_prox);
        let loss = g.tape.add(data_term, prox_s).expect("add");
        let val = g.tape.value(loss)[0] as f64;
        if !want_grad || !val.is_finite() {
            return (val, None);
        }
        g.backward(loss).expect("backward");
        (val, g.tape.grad(zt).map(|s| s.to_vec()))
    };

    for step in 0..n_steps {
        let (obj, grad) = eval_obj_and_grad(&z, true);
        if step == 0 {
            objective_start = obj;
        }
        if !obj.is_finite() {
            return GradRefineOutcome { z: anchor.to_vec(), reverted: true, objective_start, objective_end: obj };
        }
        let grad = match grad {
            Some(gv) if gv.iter().all(|x| x.is_finite()) => gv,
            _ => return GradRefineOutcome { z: anchor.to_vec(), reverted: true, objective_start, objective_end: obj },
        };
        let t = (step + 1) as i32;
        for i in 0..d_z {
            let gi = grad[i] as f64;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mhat = m[i] / (1.0 - b1.powi(t));
            let vhat = v[i] / (1.0 - b2.powi(t));
            z[i] = (z[i] as f64 - eta * mhat / (vhat.sqrt() + eps)) as f32;
        }
    }
    let (obj, _) = eval_obj_and_grad(&z, false);
    objective_end = obj;
    if n_steps == 0 {
        objective_start = obj;
    }
    if !obj.is_finite() {
        return GradRefineOutcome { z: anchor.to_vec(), reverted: true, objective_start, objective_end };
    }
    GradRefineOutcome { z, reverted: false, objective_start, objective_end }
}

fn best_by_val(members: &[Candidate]) -> Option<&Candidate> {
    members
        .iter()
        .filter(|c| c.r2_val.is_finite())
        .max_by(|a, b| a.r2_val.partial_cmp(&b.r2_val).unwrap())
        .or_else(|| members.first())
}

fn update_best_iterative(best: &mut Option<Candidate>, pool: &Pool) {
    for c in pool.members() {
        if c.origin == Origin::Grad {
            continue;
        }
        let better = match best {
            Some(b) => c.r2_val > b.r2_val,
            None => true,
        };
        if better {
            *best = Some(c.clone());
        }
    }
}

fn convergence_point(pool: &Pool, iteration: usize) -> ConvergencePoint {
    match pool.best() {
        Some(b) => ConvergencePoint {
            iteration,
            best_score: b.score,
            best_r2_train: b.r2_train,
            best_complexity: b.complexity,
        },
        None => ConvergencePoint {
            iteration,
            best_score: f64::NEG_INFINITY,
            best_r2_train: f64::NEG_INFINITY,
            best_complexity: 0,
        },
    }
}

/// One search round over fixed train/val folds.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    model: &LeeModel,
    mode: SearchMode,
    train: &ScatterSet,
    val: &ScatterSet,
    cfg: &SearchConfig,
    seed: u64,
    round_ix: usize,
    total_rounds: usize,
) -> Result<RoundResult, SearchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fit_budget = budget_for_round(round_ix, total_rounds);
    let mut working = subsample_rows(train, cfg.n_scatter, &mut rng);
    let mut pool = Pool::new(cfg.pool_size);
    let mut convergence = Vec::new();
    let mut decode_calls = 0usize;
    let mut discarded = 0usize;
    let mut reverted = 0usize;
    let mut best_iterative: Option<Candidate> = None;

    let z0 = model.encode(None, &working, EncodeMode::Deterministic, None)?;

    // pool initialization (greedy + sampled decodes); pure gradient mode
    // starts from a single greedy decode of z0 instead
    let n_init = if mode == SearchMode::Gradient { 1 } else { cfg.n_init };
    let mut init = decode_candidates(
        model, &z0.z, n_init, Origin::Init, train, val, fit_budget, cfg, &mut rng,
        &mut decode_calls, &mut discarded, true,
    );
    if init.is_empty() && mode != SearchMode::Gradient {
        // one retry with a fresh sampling stream
        let mut retry_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed_f00d);
        init = decode_candidates(
            model, &z0.z, n_init, Origin::Init, train, val, fit_budget, cfg, &mut retry_rng,
            &mut decode_calls, &mut discarded, true,
        );
        if init.is_empty() {
            return Ok(RoundResult {
                winner: None,
                convergence,
                decode_calls,
                discarded,
                grad_segments_reverted: 0,
                fallback_applied: false,
                best_iterative_val: None,
                failure: Some(format!("no parseable candidate after {} decodes (plus retry)", 2 * n_init)),
            });
        }
    }
    pool.merge(init);
    update_best_iterative(&mut best_iterative, &pool);
    convergence.push(convergence_point(&pool, 0));

    match mode {
        SearchMode::Iterative | SearchMode::Combined => {
            for t in 1..=cfg.iterations {
                if !pool.is_empty() {
                    // batched parents, each re-encoded jointly with scatter
                    let parent_texts: Vec<String> = pool
                        .select_parents(cfg.batch_k, &mut rng)
                        .into_iter()
                        .map(|c| c.text.clone())
                        .collect();
                    let mut fresh = Vec::new();
                    for text in parent_texts {
                        let seq = TokenSeq::from_text(&text).expect("pool text is canonical");
                        let lat = model.encode(Some(&seq), &working, EncodeMode::Sample, Some(&mut rng))?;
                        fresh.extend(decode_candidates(
                            model, &lat.z, cfg.n_new, Origin::Iter, train, val, fit_budget, cfg,
                            &mut rng, &mut decode_calls, &mut discarded, false,
                        ));
                    }
                    pool.merge(fresh);
                    update_best_iterative(&mut best_iterative, &pool);
                }
                // periodic scatter refresh injects fresh scatter-only decodes
                if cfg.refresh_period > 0 && t % cfg.refresh_period == 0 {
                    working = subsample_rows(train, cfg.n_scatter, &mut rng);
                    let zr = model.encode(None, &working, EncodeMode::Deterministic, None)?;
                    let fresh = decode_candidates(
                        model, &zr.z, 3, Origin::Refresh, train, val, fit_budget, cfg, &mut rng,
                        &mut decode_calls, &mut discarded, false,
                    );
                    pool.merge(fresh);
                    update_best_iterative(&mut best_iterative, &pool);
                }
                // combined mode: gradient segment seeded at the pool champion
                if mode == SearchMode::Combined && cfg.grad_period > 0 && t % cfg.grad_period == 0 {
                    if let Some(champion) = pool.best() {
                        let anchor = champion.latent.clone();
                        let out = gradient_refine(model, &anchor, &working, cfg.n_grad, cfg.eta, cfg.lambda_prox);
                        if out.reverted {
                            reverted += 1;
                        } else {
                            let fresh = decode_candidates(
                                model, &out.z, 1, Origin::Grad, train, val, fit_budget, cfg, &mut rng,
                                &mut decode_calls, &mut discarded, true,
                            );
                            pool.merge(fresh);
                        }
                    }
                }
                convergence.push(convergence_point(&pool, t));
            }
        }
        SearchMode::Gradient => {
            // pure latent descent from z0 with periodic decode
            let anchor = z0.z.clone();
            let mut z = anchor.clone();
            let period = cfg.grad_decode_period.max(1);
            let mut t = 0usize;
            while t < cfg.iterations {
                let steps = period.min(cfg.iterations - t);
                let out = gradient_refine(model, &z, &working, steps, cfg.eta, cfg.lambda_prox);
                if out.reverted {
                    reverted += 1;
                    break;
                }
                z = out.z;
                t += steps;
                let fresh = decode_candidates(
                    model, &z, 1, Origin::Grad, train, val, fit_budget, cfg, &mut rng,
                    &mut decode_calls, &mut discarded, true,
                );
                pool.merge(fresh);
                convergence.push(convergence_point(&pool, t));
            }
        }
    }

    // winner: highest validation R^2 in the final pool; in combined mode the
    // safety fallback reverts a gradient-made winner that scores below the
    // best iterative entry seen in the pool
    let pool_winner = best_by_val(pool.members()).cloned();
    let best_iterative_val = best_iterative.as_ref().map(|c| c.r2_val);
    let mut fallback_applied = false;
    let winner = match (mode, pool_winner, best_iterative) {
        (SearchMode::Combined, Some(w), Some(bi)) => {
            if bi.r2_val > w.r2_val {
                fallback_applied = w.origin == Origin::Grad;
                Some(bi)
            } else {
                Some(w)
            }
        }
        (_, w, _) => w,
    };
    let failure = if winner.is_none() { Some("round produced no candidates".to_string()) } else { None };
    Ok(RoundResult {
        winner,
        convergence,
        decode_calls,
        discarded,
        grad_segments_reverted: reverted,
        fallback_applied,
        best_iterative_val,
        failure,
    })
}

/// CMA-ES over the latent space with the matched decode budget.
#[allow(clippy::too_many_arguments)]
fn run_round_cmaes(
    model: &LeeModel,
    train: &ScatterSet,
    val: &ScatterSet,
    cfg: &SearchConfig,
    seed: u64,
    round_ix: usize,
    total_rounds: usize,
) -> Result<RoundResult, SearchError> {
    const POPULATION: usize = 24;
    const WORST_COMPLEXITY: usize = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fit_budget = budget_for_round(round_ix, total_rounds);
    let working = subsample_rows(train, cfg.n_scatter, &mut rng);
    let mut pool = Pool::new(cfg.pool_size);
    let mut decode_calls = 0usize;
    let mut discarded = 0usize;
    let mut convergence = Vec::new();

    let z0 = model.encode(None, &working, EncodeMode::Deterministic, None)?;
    let init = decode_candidates(
        model, &z0.z, cfg.n_init, Origin::Init, train, val, fit_budget, cfg, &mut rng,
        &mut decode_calls, &mut discarded, true,
    );
    // step-size from the spread of re-encoded init-candidate latents
    let mut latents: Vec<Vec<f32>> = Vec::new();
    for c in &init {
        let seq = TokenSeq::from_text(&c.text).expect("canonical");
        let lat = model.encode(Some(&seq), &working, EncodeMode::Sample, Some(&mut rng))?;
        latents.push(lat.z);
    }
    let sigma0 = latent_spread(&latents).map(|s| (0.3 * s).max(0.1)).unwrap_or(0.3);
    pool.merge(init);
    convergence.push(convergence_point(&pool, 0));

    let total_budget = cfg.n_init + cfg.iterations * cfg.n_new;
    let mean: Vec<f64> = z0.z.iter().map(|&v| v as f64).collect();
    let mut es = Cmaes::new(mean, sigma0, POPULATION);
    let mut gen_ix = 0usize;
    while decode_calls + POPULATION <= total_budget {
        gen_ix += 1;
        let popn = es.ask(&mut rng);
        let mut fitness = Vec::with_capacity(popn.len());
        let mut fresh = Vec::new();
        for zv in &popn {
            let zf: Vec<f32> = zv.iter().map(|&v| v as f32).collect();
            let fit = match model.decode_expression(&zf, DecodeMode::Greedy, None, cfg.max_len) {
                Ok((seq, _)) => {
                    decode_calls += 1;
                    match make_candidate(&seq, Origin::Cma, &zf, train, val, fit_budget, cfg, &mut rng) {
                        Some(c) => {
                            let f = -c.score;
                            fresh.push(c);
                            f
                        }
                        None => {
                            discarded += 1;
                            1.0 + cfg.alpha * WORST_COMPLEXITY as f64
                        }
                    }
                }
                Err(_) => {
                    decode_calls += 1;
                    discarded += 1;
                    1.0 + cfg.alpha * WORST_COMPLEXITY as f64
                }
            };
            fitness.push(fit);
        }
        es.tell(&popn, &fitness);
        pool.merge(fresh);
        convergence.push(convergence_point(&pool, gen_ix));
    }

    let winner = best_by_val(pool.members()).cloned();
    let best_iterative_val = winner.as_ref().map(|c| c.r2_val);
    let failure = if winner.is_none() { Some("cma-es produced no candidates".into()) } else { None };
    Ok(RoundResult {
        winner,
        convergence,
        decode_calls,
        discarded,
        grad_segments_reverted: 0,
        fallback_applied: false,
        best_iterative_val,
        failure,
    })
}

fn latent_spread(latents: &[Vec<f32>]) -> Option<f64> {
    if latents.len() < 2 {
        return None;
    }
    let d = latents[0].len();
    let n = latents.len() as f64;
    let mut acc = 0f64;
    for j in 0..d {
        let mean = latents.iter().map(|z| z[j] as f64).sum::<f64>() / n;
        let var = latents.iter().map(|z| (z[j] as f64 - mean).powi(2)).sum::<f64>() / n;
        acc += var.sqrt();
    }
    Some(acc / d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialMode {
    Search(SearchMode),
    OneShot,
    Cmaes,
}

#[derive(Debug, Clone)]
pub struct RoundBrief {
    pub round: usize,
    pub val_r2: Option<f64>,
    pub origin: Option<&'static str>,
    pub decode_calls: usize,
    pub fallback_applied: bool,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub val_r2: Option<f64>,
    pub test_r2: Option<f64>,
    pub complexity: Option<usize>,
    pub expr_text: Option<String>,
    pub expr_infix: Option<String>,
    pub failed_rounds: usize,
    pub rounds: Vec<RoundBrief>,
    /// Convergence log of the winning round.
    pub convergence: Vec<ConvergencePoint>,
}

fn round_seed(trial_seed: u64, round: usize) -> u64 {
    trial_seed.wrapping_add(10_007u64.wrapping_mul(round as u64 + 1))
}

fn run_trial_inner(
    model: &LeeModel,
    data: &ScatterSet,
    eps: f64,
    mode: TrialMode,
    cfg: &SearchConfig,
    trial_index: usize,
    s_base: u64,
) -> Result<TrialResult, SearchError> {
    let seed = s_base + 1000 * trial_index as u64;
    let mut folds = split(data, seed)?;
    add_noise(&mut folds, eps, seed.wrapping_add(1));

    let total_rounds = cfg.rounds.max(1);
    let results: Vec<Result<RoundResult, SearchError>> = (1..=total_rounds)
        .into_par_iter()
        .map(|r| {
            let rs = round_seed(seed, r);
            match mode {
                TrialMode::Search(m) => run_round(model, m, &folds.train, &folds.val, cfg, rs, r, total_rounds),
                TrialMode::OneShot => {
                    // budget-matched one-shot: a T = 0 round decoding
                    // n_init + T * n_new candidates from z0
                    let cfg2 = SearchConfig {
                        iterations: 0,
                        n_init: cfg.n_init + cfg.iterations * cfg.n_new,
                        ..cfg.clone()
                    };
                    run_round(model, SearchMode::Iterative, &folds.train, &folds.val, &cfg2, rs, r, total_rounds)
                }
                TrialMode::Cmaes => run_round_cmaes(model, &folds.train, &folds.val, cfg, rs, r, total_rounds),
            }
        })
        .collect();

    let mut rounds = Vec::new();
    let mut failed_rounds = 0usize;
    let mut best: Option<(usize, RoundResult)> = None;
    for (i, res) in results.into_iter().enumerate() {
        let rr = res?;
        let brief = RoundBrief {
            round: i + 1,
            val_r2: rr.winner.as_ref().map(|w| w.r2_val),
            origin: rr.winner.as_ref().map(|w| w.origin.name()),
            decode_calls: rr.decode_calls,
            fallback_applied: rr.fallback_applied,
        };
        rounds.push(brief);
        match &rr.winner {
            Some(w) => {
                let better = match &best {
                    Some((_, b)) => {
                        let bv = b.winner.as_ref().map(|x| x.r2_val).unwrap_or(f64::NEG_INFINITY);
                        w.r2_val > bv
                    }
                    None => true,
                };
                if better {
                    best = Some((i + 1, rr));
                }
            }
            None => failed_rounds += 1,
        }
    }

    let mut out = TrialResult {
        trial: trial_index,
        seed,
        val_r2: None,
        test_r2: None,
        complexity: None,
        expr_text: None,
        expr_infix: None,
        failed_rounds,
        rounds,
        convergence: Vec::new(),
    };
    if let Some((_ix, rr)) = best {
        let winner = rr.winner.expect("best round has a winner");
        // final report: the test fold is read exactly once, here
        folds.test.unseal_for_final_report();
        let test = folds.test.read()?;
        out.val_r2 = Some(winner.r2_val);
        out.test_r2 = eval_r2(&winner.expr, test);
        out.complexity = Some(winner.complexity);
        out.expr_text = Some(winner.text.clone());
        out.expr_infix = Some(to_infix(&winner.expr));
        out.convergence = rr.convergence;
    }
    Ok(out)
}

/// Best-of-R-rounds trial with seed `s_base + 1000 * trial_index`.
pub fn run_trial(
    model: &LeeModel,
    data: &ScatterSet,
    eps: f64,
    mode: SearchMode,
    cfg: &SearchConfig,
    trial_index: usize,
    s_base: u64,
) -> Result<TrialResult, SearchError> {
    run_trial_inner(model, data, eps, TrialMode::Search(mode), cfg, trial_index, s_base)
}

/// One-shot baseline: no search, budget-matched decode count from z0.
pub fn baseline_oneshot(
    model: &LeeModel,
    data: &ScatterSet,
    eps: f64,
    cfg: &SearchConfig,
    trial_index: usize,
    s_base: u64,
) -> Result<TrialResult, SearchError> {
    run_trial_inner(model, data, eps, TrialMode::OneShot, cfg, trial_index, s_base)
}

/// CMA-ES-on-latent baseline (population 24, matched decode budget).
pub fn baseline_cmaes(
    model: &LeeModel,
    data: &ScatterSet,
    eps: f64,
    cfg: &SearchConfig,
    trial_index: usize,
    s_base: u64,
) -> Result<TrialResult, SearchError> {
    run_trial_inner(model, data, eps, TrialMode::Cmaes, cfg, trial_index, s_base)
}
