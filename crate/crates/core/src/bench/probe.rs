//! Linear probes over encoder latents: seven structural property labelers
//! and a logistic-regression probe trained by full-batch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::datagen::{sample_scatter, CorpusRecord, GrammarConfig};
use crate::expr::{Expr, OpToken};
use crate::model::{EncodeMode, LeeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    HasTrig,
    HasLogExp,
    HasSqCube,
    HasDivision,
    IsPolynomial,
    HighDim,
    NumVariables,
}

pub const ALL_PROPERTIES: [Property; 7] = [
    Property::HasTrig,
    Property::HasLogExp,
    Property::HasSqCube,
    Property::HasDivision,
    Property::IsPolynomial,
    Property::HighDim,
    Property::NumVariables,
];

impl Property {
    pub fn name(&self) -> &'static str {
        match self {
            Property::HasTrig => "has-trig",
            Property::HasLogExp => "has-log-exp",
            Property::HasSqCube => "has-sq-cube",
            Property::HasDivision => "has-division",
            Property::IsPolynomial => "is-polynomial",
            Property::HighDim => "high-dim",
            Property::NumVariables => "num-variables",
        }
    }

    pub fn is_binary(&self) -> bool {
        !matches!(self, Property::NumVariables)
    }
}

/// Structural label of an expression under a property. Binary properties
/// return 0/1; `NumVariables` returns the distinct-variable count.
pub fn property_label(expr: &Expr, prop: Property, highdim_threshold: usize) -> usize {
    let mut ops = Vec::new();
    expr.collect_ops(&mut ops);
    let has = |set: &[OpToken]| ops.iter().any(|o| set.contains(o)) as usize;
    match prop {
        Property::HasTrig => has(&[OpToken::Sin, OpToken::Cos, OpToken::Tan, OpToken::Tanh]),
        Property::HasLogExp => has(&[OpToken::Log, OpToken::Exp]),
        Property::HasSqCube => has(&[OpToken::Sq, OpToken::Cube]),
        Property::HasDivision => has(&[OpToken::Div]),
        Property::IsPolynomial => {
            // polynomial: no trig, log/exp, abs, sqrt anywhere
            let banned = [
                OpToken::Sin,
                OpToken::Cos,
                OpToken::Tan,
                OpToken::Tanh,
                OpToken::Log,
                OpToken::Exp,
                OpToken::Abs,
                OpToken::Sqrt,
            ];
            (!ops.iter().any(|o| banned.contains(o))) as usize
        }
        Property::HighDim => (expr.vars_used().len() >= highdim_threshold) as usize,
        Property::NumVariables => expr.vars_used().len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTask {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub accuracy: f64,
    /// Rank-based AUC; present for binary tasks only.
    pub auc: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Single linear classifier with L2 penalty at C=1-equivalent strength,
/// trained by full-batch gradient descent (2000 iterations, lr 0.1) on
/// standardized features, evaluated on a stratified 80/20 split.
pub fn linear_probe(
    latents: &[Vec<f32>],
    labels: &[usize],
    task: ProbeTask,
    seed: u64,
) -> Result<ProbeResult, BenchError> {
    if latents.len() != labels.len() {
        return Err(BenchError::LengthMismatch { a: latents.len(), b: labels.len() });
    }
    let n = latents.len();
    if n < 10 {
        return Err(BenchError::TooFewRows(n));
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut class_counts = vec![0usize; n_classes];
    for &l in labels {
        class_counts[l] += 1;
    }
    if class_counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(BenchError::SingleClassLabels);
    }

    // stratified 80/20 split
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ix = Vec::new();
    let mut test_ix = Vec::new();
    for class in 0..n_classes {
        let mut ixs: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        ixs.shuffle(&mut rng);
        let n_tr = (ixs.len() * 4) / 5;
        train_ix.extend_from_slice(&ixs[..n_tr]);
        test_ix.extend_from_slice(&ixs[n_tr..]);
    }
    if train_ix.is_empty() || test_ix.is_empty() {
        return Err(BenchError::TooFewRows(n));
    }

    let d = latents[0].len();
    // standardize on training statistics
    let mut mean = vec![0f64; d];
    let mut std = vec![0f64; d];
    for &i in &train_ix {
        for j in 0..d {
            mean[j] += latents[i][j] as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= train_ix.len() as f64;
    }
    for &i in &train_ix {
        for j in 0..d {
            let c = latents[i][j] as f64 - mean[j];
            std[j] += c * c;
        }
    }
    for s in std.iter_mut() {
        *s = (*s / train_ix.len() as f64).sqrt().max(1e-8);
    }
    let feat = |i: usize, j: usize| (latents[i][j] as f64 - mean[j]) / std[j];

    let n_tr = train_ix.len() as f64;
    let l2 = 1.0 / n_tr; // C = 1 equivalent in mean-loss form
    let iters = 2000;
    let lr = 0.1;

    match task {
        ProbeTask::Binary => {
            let mut w = vec![0f64; d];
            let mut b = 0f64;
            for _ in 0..iters {
                let mut gw = vec![0f64; d];
                let mut gb = 0f64;
                for &i in &train_ix {
                    let mut zv = b;
                    for j in 0..d {
                        zv += w[j] * feat(i, j);
                    }
                    let p = 1.0 / (1.0 + (-zv).exp());
                    let err = p - labels[i] as f64;
                    for j in 0..d {
                        gw[j] += err * feat(i, j);
                    }
                    gb += err;
                }
                for j in 0..d {
                    w[j] -= lr * (gw[j] / n_tr + l2 * w[j]);
                }
                b -= lr * gb / n_tr;
            }
            let mut correct = 0usize;
            let mut scores = Vec::with_capacity(test_ix.len());
            for &i in &test_ix {
                let mut zv = b;
                for j in 0..d {
                    zv += w[j] * feat(i, j);
                }
                let pred = (zv > 0.0) as usize;
                if pred == labels[i] {
                    correct += 1;
                }
                scores.push((zv, labels[i]));
            }
            Ok(ProbeResult {
                accuracy: correct as f64 / test_ix.len() as f64,
                auc: Some(rank_auc(&scores)),
                n_train: train_ix.len(),
                n_test: test_ix.len(),
            })
        }
        ProbeTask::Multiclass => {
            let kc = n_classes;
            let mut w = vec![0f64; d * kc];
            let mut b = vec![0f64; kc];
            for _ in 0..iters {
                let mut gw = vec![0f64; d * kc];
                let mut gb = vec![0f64; kc];
                for &i in &train_ix {
                    let mut logits = b.clone();
                    for j in 0..d {
                        let f = feat(i, j);
                        for c in 0..kc {
                            logits[c] += w[j * kc + c] * f;
                        }
                    }
                    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = logits.iter().map(|&l| (l - mx).exp()).sum();
                    for c in 0..kc {
                        let p = (logits[c] - mx).exp() / z;
                        let err = p - (labels[i] == c) as usize as f64;
                        gb[c] += err;
                        for j in 0..d {
                            gw[j * kc + c] += err * feat(i, j);
                        }
                    }
                }
                for jc in 0..d * kc {
                    w[jc] -= lr * (gw[jc] / n_tr + l2 * w[jc]);
                }
                for c in 0..kc {
                    b[c] -= lr * gb[c] / n_tr;
                }
            }
            let mut correct = 0usize;
            for &i in &test_ix {
                let mut logits = b.clone();
                for j in 0..d {
                    let f = feat(i, j);
                    for c in 0..kc {
                        logits[c] += w[j * kc + c] * f;
                    }
                }
                let pred = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred == labels[i] {
                    correct += 1;
                }
            }
            Ok(ProbeResult {
                accuracy: correct as f64 / test_ix.len() as f64,
                auc: None,
                n_train: train_ix.len(),
                n_test: test_ix.len(),
            })
        }
    }
}

/// Mann-Whitney AUC with midrank tie handling.
fn rank_auc(scores: &[(f64, usize)]) -> f64 {
    let n_pos = scores.iter().filter(|(_, l)| *l == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut sorted: Vec<(f64, usize)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_pos = 0f64;
    let mut i = 0usize;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in sorted.iter().take(j + 1).skip(i) {
            if item.1 == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    (rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// Encode corpus records through the full encoder on freshly generated
/// scatter, yielding the probe's latent matrix.
pub fn encode_probe_set(
    model: &LeeModel,
    records: &[CorpusRecord],
    grammar: &GrammarConfig,
    cap: usize,
    seed: u64,
) -> Result<(Vec<Vec<f32>>, Vec<usize>), crate::model::ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = Vec::new();
    let mut kept = Vec::new();
    for (i, rec) in records.iter().take(cap).enumerate() {
        let k = rec.scatter.k;
        let scatter = sample_scatter(
            &rec.expr,
            &mut rng,
            grammar.n_scatter,
            k,
            grammar.domain_lo,
            grammar.domain_hi,
            &rec.text,
        )
        .map_err(|_| crate::model::ModelError::EmptyScatter)?;
        let lat = model.encode(Some(&rec.seq), &scatter, EncodeMode::Deterministic, None)?;
        latents.push(lat.z);
        kept.push(i);
    }
    Ok((latents, kept))
}
