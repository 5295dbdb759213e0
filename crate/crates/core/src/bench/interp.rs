//! Latent-space interpolation between two encoded expressions.

use rand_chacha::ChaCha8Rng;

use crate::datagen::ScatterSet;
use crate::expr::{evaluate, parse, tokenize, Expr, TokenSeq};
use crate::model::{DecodeMode, EncodeMode, LeeModel, ModelError};

#[derive(Debug, Clone)]
pub struct InterpPoint {
    pub t: f64,
    pub z: Vec<f32>,
    /// Best decoded candidate by MAE to the blended targets; None when every
    /// decode at this t was unparseable.
    pub expr: Option<Expr>,
    pub text: Option<String>,
    pub mae: Option<f64>,
}

/// Encode A and B jointly with their scatters, lerp the latents at each t,
/// decode 1 greedy + (n_candidates - 1) sampled candidates, and keep the one
/// minimizing MAE to the blend (1-t) y_A + t y_B on shared query points.
#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    model: &LeeModel,
    expr_a: &Expr,
    scatter_a: &ScatterSet,
    expr_b: &Expr,
    scatter_b: &ScatterSet,
    ts: &[f64],
    queries: &ScatterSet,
    n_candidates: usize,
    tau: f64,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<InterpPoint>, ModelError> {
    let tok_a = tokenize(expr_a);
    let tok_b = tokenize(expr_b);
    let za = model.encode(Some(&tok_a), scatter_a, EncodeMode::Deterministic, None)?;
    let zb = model.encode(Some(&tok_b), scatter_b, EncodeMode::Deterministic, None)?;
    let (ya, oka) = evaluate(expr_a, &queries.x, queries.n, queries.k).expect("query eval");
    let (yb, okb) = evaluate(expr_b, &queries.x, queries.n, queries.k).expect("query eval");

    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let tf = t as f32;
        let z: Vec<f32> = za
            .z
            .iter()
            .zip(zb.z.iter())
            .map(|(&a, &b)| (1.0 - tf) * a + tf * b)
            .collect();
        let blend: Vec<f64> = ya.iter().zip(yb.iter()).map(|(&a, &b)| (1.0 - t) * a + t * b).collect();
        let mut best: Option<(Expr, String, f64)> = None;
        for i in 0..n_candidates {
            let mode = if i == 0 { DecodeMode::Greedy } else { DecodeMode::Sample(tau) };
            let Ok((seq, _)) = model.decode_expression(&z, mode, Some(rng), max_len) else {
                continue;
            };
            let Ok(cand) = parse(&seq) else { continue };
            let Ok((yc, okc)) = evaluate(&cand, &queries.x, queries.n, queries.k) else {
                continue;
            };
            let mut acc = 0f64;
            let mut rows = 0usize;
            for r in 0..queries.n {
                if oka[r] && okb[r] && okc[r] {
                    acc += (yc[r] - blend[r]).abs();
                    rows += 1;
                }
            }
            if rows == 0 {
                continue;
            }
            let mae = acc / rows as f64;
            let better = match &best {
                Some((_, _, m)) => mae < *m,
                None => true,
            };
            if better {
                let text = seq.to_text();
                best = Some((cand, text, mae));
            }
        }
        out.push(match best {
            Some((e, text, mae)) => InterpPoint { t, z, expr: Some(e), text: Some(text), mae: Some(mae) },
            None => InterpPoint { t, z, expr: None, text: None, mae: None },
        });
    }
    Ok(out)
}
