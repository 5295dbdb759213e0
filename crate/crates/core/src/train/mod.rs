//! Five-phase training: weighted loss combination, decoder freezing,
//! scatter subsampling and variable-permutation augmentation, skip-guarded
//! optimization, and newline-delimited metrics.

mod losses;

pub use losses::{loss_align, loss_eval, loss_expr, loss_kl};

use std::io::Write;

use lee_tensor::{AdamW, CosineSchedule, Graph, TensorError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::datagen::{corrupt, CorpusRecord, CorruptionConfig, DatagenError};
use crate::expr::Token;
use crate::model::{decoder_prefixes, EncodeBatch, EncodeMode, LeeModel, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cross-entropy target is entirely padding")]
    AllPadTarget,
    #[error("no usable training records (need scatter with >= {min_rows} finite rows and tokens <= {max_len})")]
    EmptyCorpus { min_rows: usize, max_len: usize },
    #[error("aborted at step {step}: {skipped} of the last {window} steps skipped on non-finite loss")]
    TooManySkips { step: u64, skipped: u64, window: u64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub expr: f64,
    pub eval: f64,
    pub kl: f64,
    pub align: f64,
    pub refine: f64,
}

#[derive(Debug, Clone)]
pub struct Phase {
    pub name: &'static str,
    pub steps: u64,
    pub weights: LossWeights,
    pub freeze_decoders: bool,
}

/// The five-phase plan. Weights per phase:
/// 1 basic    (1.0, 5.0, 0.001, 0,   0)
/// 2 +align   (1.0, 5.0, 0.001, 2.0, 0)
/// 3 +refine  (1.0, 5.0, 0.001, 2.0, 1.0)
/// 4 freeze   (0,   0,   0.001, 5.0, 0)    decoders frozen
/// 5 unfreeze (1.0, 5.0, 0.001, 2.0, 1.0)
#[derive(Debug, Clone)]
pub struct PhasePlan {
    pub phases: Vec<Phase>,
}

impl PhasePlan {
    pub fn with_steps(steps: [u64; 5]) -> Self {
        let w = |expr, eval, kl, align, refine| LossWeights { expr, eval, kl, align, refine };
        PhasePlan {
            phases: vec![
                Phase { name: "basic", steps: steps[0], weights: w(1.0, 5.0, 0.001, 0.0, 0.0), freeze_decoders: false },
                Phase { name: "align", steps: steps[1], weights: w(1.0, 5.0, 0.001, 2.0, 0.0), freeze_decoders: false },
                Phase { name: "refine", steps: steps[2], weights: w(1.0, 5.0, 0.001, 2.0, 1.0), freeze_decoders: false },
                Phase { name: "freeze-dec", steps: steps[3], weights: w(0.0, 0.0, 0.001, 5.0, 0.0), freeze_decoders: true },
                Phase { name: "unfreeze", steps: steps[4], weights: w(1.0, 5.0, 0.001, 2.0, 1.0), freeze_decoders: false },
            ],
        }
    }

    /// Full-scale step counts.
    pub fn paper() -> Self {
        Self::with_steps([50_000, 30_000, 50_000, 30_000, 40_000])
    }

    /// Desk-scale default (paper ratios at 1/10).
    pub fn desk() -> Self {
        Self::with_steps([5_000, 3_000, 5_000, 3_000, 4_000])
    }

    pub fn total_steps(&self) -> u64 {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Phase index (1-based) and phase for a global step.
    pub fn phase_at(&self, step: u64) -> (usize, &Phase) {
        let mut acc = 0u64;
        for (i, p) in self.phases.iter().enumerate() {
            acc += p.steps;
            if step < acc {
                return (i + 1, p);
            }
        }
        (self.phases.len(), self.phases.last().expect("non-empty plan"))
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Scatter-subsampling augmentation range per batch.
    pub scatter_min: usize,
    pub scatter_max: usize,
    /// Query-row cap for the evaluation loss.
    pub eval_queries: usize,
    /// Records whose scatter has fewer finite rows are dropped at assembly.
    pub min_finite_rows: usize,
    pub corruption: CorruptionConfig,
    pub log_every: u64,
    pub val_every: u64,
    pub val_examples: usize,
    pub seed: u64,
    /// Early stop once the expression loss falls below this value.
    pub stop_when_expr_below: Option<f64>,
    /// Window for the non-finite skip guard (>1% skipped aborts).
    pub skip_window: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr_max: 3e-4,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            scatter_min: 128,
            scatter_max: 200,
            eval_queries: 64,
            min_finite_rows: 32,
            corruption: CorruptionConfig::default(),
            log_every: 50,
            val_every: 1000,
            val_examples: 64,
            seed: 0,
            stop_when_expr_below: None,
            skip_window: 500,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepMetrics {
    pub step: u64,
    pub phase: usize,
    pub loss_expr: Option<f64>,
    pub loss_eval: Option<f64>,
    pub loss_kl: Option<f64>,
    pub loss_align: Option<f64>,
    pub loss_refine: Option<f64>,
    pub total: f64,
    pub lr: f64,
}

impl StepMetrics {
    fn to_json(&self, kind: &str) -> String {
        serde_json::json!({
            "kind": kind,
            "step": self.step,
            "phase": self.phase,
            "loss_expr": self.loss_expr,
            "loss_eval": self.loss_eval,
            "loss_kl": self.loss_kl,
            "loss_align": self.loss_align,
            "loss_refine": self.loss_refine,
            "total": self.total,
            "lr": self.lr,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps_done: u64,
    pub skipped_steps: u64,
    pub skipped_params: u64,
    pub empty_eval_batches: u64,
    pub last: Option<StepMetrics>,
    pub stopped_early: bool,
}

struct StepBatch {
    enc: EncodeBatch,
    dec_in: Vec<u32>,
    dec_tgt: Vec<u32>,
    dec_mask: Vec<f32>,
    td: usize,
    queries: Vec<f64>,
    qm: usize,
    y_eval: Vec<f32>,
    finite: Vec<f32>,
    corr_tokens: Vec<u32>,
    corr_ts: usize,
}

/// Assemble a padded batch with augmentation: scatter rows subsampled to a
/// per-batch count, and a variable-slot permutation applied consistently to
/// X columns and variable tokens.
fn assemble(
    records: &[&CorpusRecord],
    model: &LeeModel,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    with_corruption: bool,
) -> StepBatch {
    let b = records.len();
    let k_max = model.cfg.k_max;
    let n_min = records.iter().map(|r| r.scatter.n).min().unwrap_or(0);
    let lo = cfg.scatter_min.min(n_min);
    let hi = cfg.scatter_max.min(n_min);
    let n_sub = if lo >= hi { hi.max(1) } else { rng.gen_range(lo..=hi) };

    let mut seqs: Vec<Vec<Token>> = Vec::with_capacity(b);
    let mut corr_seqs: Vec<Vec<Token>> = Vec::with_capacity(b);
    let mut xs = vec![0f64; b * n_sub * k_max];
    let mut ys = vec![0f64; b * n_sub];
    for (bi, rec) in records.iter().enumerate() {
        // variable-slot permutation
        let mut perm: Vec<u8> = (0..k_max as u8).collect();
        perm.shuffle(rng);
        let permute_tok = |t: &Token| match t {
            Token::Var(i) if (*i as usize) < k_max => Token::Var(perm[*i as usize]),
            other => *other,
        };
        let seq: Vec<Token> = rec.seq.0.iter().map(|t| permute_tok(t)).collect();
        if with_corruption {
            let corr = corrupt(&crate::expr::TokenSeq(seq.clone()), rng, &cfg.corruption);
            corr_seqs.push(corr.0);
        }
        seqs.push(seq);
        // subsample scatter rows
        let mut rows: Vec<usize> = (0..rec.scatter.n).collect();
        rows.partial_shuffle(rng, n_sub);
        for (ri, &r) in rows.iter().take(n_sub).enumerate() {
            for c in 0..rec.scatter.k.min(k_max) {
                xs[(bi * n_sub + ri) * k_max + perm[c] as usize] = rec.scatter.x[r * rec.scatter.k + c];
            }
            ys[bi * n_sub + ri] = rec.scatter.y[r];
        }
    }

    let ts = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut tokens = vec![Token::Pad.id(); b * ts];
    for (bi, s) in seqs.iter().enumerate() {
        for (ti, t) in s.iter().enumerate() {
            tokens[bi * ts + ti] = t.id();
        }
    }
    let (corr_tokens, corr_ts) = if with_corruption {
        let cts = corr_seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut ct = vec![Token::Pad.id(); b * cts];
        for (bi, s) in corr_seqs.iter().enumerate() {
            for (ti, t) in s.iter().enumerate() {
                ct[bi * cts + ti] = t.id();
            }
        }
        (ct, cts)
    } else {
        (Vec::new(), 0)
    };

    // teacher forcing: input drops EOS, target drops BOS
    let td = ts - 1;
    let mut dec_in = vec![Token::Pad.id(); b * td];
    let mut dec_tgt = vec![Token::Pad.id(); b * td];
    let mut dec_mask = vec![0f32; b * td];
    for (bi, s) in seqs.iter().enumerate() {
        for ti in 0..s.len() - 1 {
            dec_in[bi * td + ti] = s[ti].id();
            dec_tgt[bi * td + ti] = s[ti + 1].id();
            dec_mask[bi * td + ti] = 1.0;
        }
    }

    // evaluation-loss queries: leading subsampled rows with finite targets
    let qm = cfg.eval_queries.min(n_sub).max(1);
    let mut queries = vec![0f64; b * qm * k_max];
    let mut y_eval = vec![0f32; b * qm];
    let mut finite = vec![0f32; b * qm];
    for bi in 0..b {
        for ri in 0..qm {
            let src = (bi * n_sub + ri) * k_max;
            queries[(bi * qm + ri) * k_max..(bi * qm + ri + 1) * k_max]
                .copy_from_slice(&xs[src..src + k_max]);
            let y = ys[bi * n_sub + ri];
            if y.is_finite() && y.abs() <= crate::expr::OVERFLOW_GUARD {
                y_eval[bi * qm + ri] = y as f32;
                finite[bi * qm + ri] = 1.0;
            }
        }
    }

    StepBatch {
        enc: EncodeBatch { tokens, ts, xs, ys, n: n_sub, b },
        dec_in,
        dec_tgt,
        dec_mask,
        td,
        queries,
        qm,
        y_eval,
        finite,
        corr_tokens,
        corr_ts,
    }
}

struct StepOutcome {
    metrics: StepMetrics,
    grads: Option<indexmap::IndexMap<String, Vec<f32>>>,
    empty_eval: bool,
}

fn run_step(
    model: &LeeModel,
    batch: &StepBatch,
    weights: &LossWeights,
    train_mode: bool,
    rng: Option<&mut ChaCha8Rng>,
    want_grads: bool,
) -> Result<StepOutcome, TrainError> {
    let mut g = Graph::new(&model.store, train_mode);
    let mut rng = rng;
    let mode = if train_mode { EncodeMode::Sample } else { EncodeMode::Deterministic };
    let enc = model.encode_graph(&mut g, &batch.enc, mode, rng.as_deref_mut())?;

    let mut metrics = StepMetrics::default();
    let mut terms: Vec<(f64, lee_tensor::TensorId)> = Vec::new();
    let mut empty_eval = false;

    if weights.expr > 0.0 {
        let logits = model.decode_expr_graph(&mut g, enc.z, &batch.dec_in, batch.enc.b, batch.td, rng.as_deref_mut())?;
        let l = loss_expr(&mut g, logits, &batch.dec_tgt, &batch.dec_mask)?;
        metrics.loss_expr = Some(g.tape.value(l)[0] as f64);
        terms.push((weights.expr, l));
    }
    if weights.eval > 0.0 {
        let yhat = model.decode_eval_graph(&mut g, enc.z, &batch.queries, batch.enc.b, batch.qm, rng.as_deref_mut())?;
        match loss_eval(&mut g, yhat, &batch.y_eval, &batch.finite)? {
            Some(l) => {
                metrics.loss_eval = Some(g.tape.value(l)[0] as f64);
                terms.push((weights.eval, l));
            }
            None => empty_eval = true,
        }
    }
    if weights.kl > 0.0 {
        let l = loss_kl(&mut g, enc.mu, enc.logvar)?;
        metrics.loss_kl = Some(g.tape.value(l)[0] as f64);
        terms.push((weights.kl, l));
    }
    if weights.align > 0.0 {
        let scatter_only = EncodeBatch {
            tokens: Vec::new(),
            ts: 0,
            xs: batch.enc.xs.clone(),
            ys: batch.enc.ys.clone(),
            n: batch.enc.n,
            b: batch.enc.b,
        };
        let p = model.encode_graph(&mut g, &scatter_only, EncodeMode::Deterministic, None)?;
        let l = loss_align(&mut g, enc.mu, enc.logvar, p.mu, p.logvar)?;
        metrics.loss_align = Some(g.tape.value(l)[0] as f64);
        terms.push((weights.align, l));
    }
    if weights.refine > 0.0 && batch.corr_ts > 0 {
        let corr = EncodeBatch {
            tokens: batch.corr_tokens.clone(),
            ts: batch.corr_ts,
            xs: batch.enc.xs.clone(),
            ys: batch.enc.ys.clone(),
            n: batch.enc.n,
            b: batch.enc.b,
        };
        let enc_c = model.encode_graph(&mut g, &corr, mode, rng.as_deref_mut())?;
        let logits = model.decode_expr_graph(&mut g, enc_c.z, &batch.dec_in, batch.enc.b, batch.td, rng.as_deref_mut())?;
        let l = loss_expr(&mut g, logits, &batch.dec_tgt, &batch.dec_mask)?;
        metrics.loss_refine = Some(g.tape.value(l)[0] as f64);
        terms.push((weights.refine, l));
    }

    let mut total = match terms.first() {
        Some(&(w, l)) => g.tape.scale(l, w),
        None => g.tape.scalar(0.0),
    };
    for &(w, l) in terms.iter().skip(1) {
        let s = g.tape.scale(l, w);
        total = g.tape.add(total, s)?;
    }
    metrics.total = g.tape.value(total)[0] as f64;

    let grads = if want_grads && metrics.total.is_finite() && !terms.is_empty() {
        g.backward(total)?;
        Some(g.param_grads())
    } else {
        None
    };
    Ok(StepOutcome { metrics, grads, empty_eval })
}

/// Records usable for training under the config and model limits.
pub fn usable_records<'r>(records: &'r [CorpusRecord], model: &LeeModel, cfg: &TrainConfig) -> Vec<&'r CorpusRecord> {
    records
        .iter()
        .filter(|r| r.scatter.finite_count() >= cfg.min_finite_rows && r.seq.len() <= model.cfg.max_seq_len)
        .collect()
}

/// Run the phase plan over the corpus. Metrics are written as
/// newline-delimited JSON records when a sink is provided.
pub fn train(
    model: &mut LeeModel,
    records: &[CorpusRecord],
    val_records: &[CorpusRecord],
    plan: &PhasePlan,
    cfg: &TrainConfig,
    mut metrics_out: Option<&mut dyn Write>,
) -> Result<TrainReport, TrainError> {
    let usable = usable_records(records, model, cfg);
    if usable.is_empty() {
        return Err(TrainError::EmptyCorpus { min_rows: cfg.min_finite_rows, max_len: model.cfg.max_seq_len });
    }
    let val_usable = usable_records(val_records, model, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(cfg.beta1, cfg.beta2, cfg.weight_decay);
    let total_steps = plan.total_steps();
    let schedule = CosineSchedule::new(cfg.lr_max, cfg.lr_min, total_steps);
    let mut report = TrainReport::default();
    let mut window_skipped = 0u64;

    for step in 0..total_steps {
        let (phase_ix, phase) = plan.phase_at(step);
        // draw a batch without replacement
        let mut idxs: Vec<usize> = (0..usable.len()).collect();
        let bsz = cfg.batch_size.min(usable.len());
        idxs.partial_shuffle(&mut rng, bsz);
        let batch_recs: Vec<&CorpusRecord> = idxs.iter().take(bsz).map(|&i| usable[i]).collect();
        let with_corr = phase.weights.refine > 0.0;
        let batch = assemble(&batch_recs, model, cfg, &mut rng, with_corr);

        let outcome = run_step(model, &batch, &phase.weights, true, Some(&mut rng), true)?;
        let mut m = outcome.metrics;
        m.step = step;
        m.phase = phase_ix;
        m.lr = schedule.lr(step);
        if outcome.empty_eval {
            report.empty_eval_batches += 1;
        }

        match outcome.grads {
            Some(mut grads) => {
                if phase.freeze_decoders {
                    let frozen = decoder_prefixes();
                    grads.retain(|name, _| !frozen.iter().any(|p| name.starts_with(p)));
                }
                let stats = opt.step(&mut model.store, &grads, m.lr);
                report.skipped_params += stats.skipped.len() as u64;
            }
            None => {
                report.skipped_steps += 1;
                window_skipped += 1;
            }
        }

        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            if let Some(out) = metrics_out.as_deref_mut() {
                writeln!(out, "{}", m.to_json("train"))?;
            }
        }
        if cfg.val_every > 0 && !val_usable.is_empty() && step > 0 && step % cfg.val_every == 0 {
            let vb: Vec<&CorpusRecord> = val_usable.iter().take(cfg.val_examples).copied().collect();
            // fixed augmentation stream so validation is comparable across steps
            let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0a11);
            let vbatch = assemble(&vb, model, cfg, &mut vrng, phase.weights.refine > 0.0);
            let vout = run_step(model, &vbatch, &phase.weights, false, Some(&mut vrng), false)?;
            let mut vm = vout.metrics;
            vm.step = step;
            vm.phase = phase_ix;
            vm.lr = m.lr;
            if let Some(out) = metrics_out.as_deref_mut() {
                writeln!(out, "{}", vm.to_json("val"))?;
            }
        }

        // skip-rate guard
        if step > 0 && step % cfg.skip_window == 0 {
            if window_skipped * 100 > cfg.skip_window {
                return Err(TrainError::TooManySkips { step, skipped: window_skipped, window: cfg.skip_window });
            }
            window_skipped = 0;
        }

        report.steps_done = step + 1;
        let expr_now = m.loss_expr;
        report.last = Some(m);
        if let (Some(th), Some(le)) = (cfg.stop_when_expr_below, expr_now) {
            if le < th {
                report.stopped_early = true;
                break;
            }
        }
    }
    Ok(report)
}
