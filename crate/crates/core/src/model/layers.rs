//! Pre-LN transformer building blocks assembled on a [`Graph`].

use lee_tensor::{Graph, TensorError, TensorId};
use rand_chacha::ChaCha8Rng;

type Result<T> = std::result::Result<T, TensorError>;

pub const MASK_NEG: f32 = -1e30;

pub struct LayerCtx<'g, 'p, 'r> {
    pub g: &'g mut Graph<'p>,
    pub dropout: f32,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl LayerCtx<'_, '_, '_> {
    fn maybe_dropout(&mut self, x: TensorId) -> Result<TensorId> {
        if self.dropout > 0.0 && self.g.train {
            if let Some(rng) = self.rng.as_deref_mut() {
                use rand::Rng;
                let n = self.g.tape.value(x).len();
                let keep: Vec<f32> = (0..n)
                    .map(|_| if rng.gen::<f32>() < self.dropout { 0.0 } else { 1.0 })
                    .collect();
                return self.g.tape.dropout(x, keep, self.dropout);
            }
        }
        Ok(x)
    }
}

pub fn linear(g: &mut Graph, prefix: &str, x: TensorId) -> Result<TensorId> {
    let w = g.param(&format!("{prefix}.w"))?;
    let b = g.param(&format!("{prefix}.b"))?;
    let y = g.tape.matmul(x, w)?;
    g.tape.add(y, b)
}

pub fn layer_norm(g: &mut Graph, prefix: &str, x: TensorId) -> Result<TensorId> {
    let gain = g.param(&format!("{prefix}.g"))?;
    let bias = g.param(&format!("{prefix}.b"))?;
    g.tape.layer_norm(x, gain, bias, 1e-5)
}

/// Multi-head scaled-dot-product attention. `mask_bias`, when present, is an
/// additive bias broadcastable to the `[B, H, Tq, Tk]` score tensor.
pub fn attention(
    ctx: &mut LayerCtx,
    prefix: &str,
    heads: usize,
    x_q: TensorId,
    x_kv: TensorId,
    mask_bias: Option<TensorId>,
) -> Result<TensorId> {
    let (b, tq, d) = {
        let s = ctx.g.tape.shape(x_q);
        (s[0], s[1], s[2])
    };
    let tk = ctx.g.tape.shape(x_kv)[1];
    let dh = d / heads;
    let q = linear(ctx.g, &format!("{prefix}.q"), x_q)?;
    let k = linear(ctx.g, &format!("{prefix}.k"), x_kv)?;
    let v = linear(ctx.g, &format!("{prefix}.v"), x_kv)?;
    let q = ctx.g.tape.reshape(q, &[b, tq, heads, dh])?;
    let k = ctx.g.tape.reshape(k, &[b, tk, heads, dh])?;
    let v = ctx.g.tape.reshape(v, &[b, tk, heads, dh])?;
    let q = ctx.g.tape.swap_axes_12(q)?; // [B,H,Tq,dh]
    let k = ctx.g.tape.swap_axes_12(k)?;
    let v = ctx.g.tape.swap_axes_12(v)?;
    let kt = ctx.g.tape.swap_last2(k)?; // [B,H,dh,Tk]
    let scores = ctx.g.tape.matmul(q, kt)?;
    let mut scores = ctx.g.tape.scale(scores, 1.0 / (dh as f64).sqrt());
    if let Some(bias) = mask_bias {
        scores = ctx.g.tape.add(scores, bias)?;
    }
    let probs = ctx.g.tape.softmax(scores)?;
    let probs = ctx.maybe_dropout(probs)?;
    let cx = ctx.g.tape.matmul(probs, v)?; // [B,H,Tq,dh]
    let cx = ctx.g.tape.swap_axes_12(cx)?;
    let cx = ctx.g.tape.reshape(cx, &[b, tq, d])?;
    linear(ctx.g, &format!("{prefix}.o"), cx)
}

pub fn ffn(ctx: &mut LayerCtx, prefix: &str, x: TensorId) -> Result<TensorId> {
    let h = linear(ctx.g, &format!("{prefix}.1"), x)?;
    let h = ctx.g.tape.silu(h);
    let h = linear(ctx.g, &format!("{prefix}.2"), h)?;
    ctx.maybe_dropout(h)
}

/// Encoder layer: self-attention + FFN with pre-LN residuals.
pub fn encoder_layer(
    ctx: &mut LayerCtx,
    prefix: &str,
    heads: usize,
    x: TensorId,
    mask_bias: Option<TensorId>,
) -> Result<TensorId> {
    let a = layer_norm(ctx.g, &format!("{prefix}.ln1"), x)?;
    let att = attention(ctx, &format!("{prefix}.attn"), heads, a, a, mask_bias)?;
    let att = ctx.maybe_dropout(att)?;
    let x = ctx.g.tape.add(x, att)?;
    let f = layer_norm(ctx.g, &format!("{prefix}.ln2"), x)?;
    let ff = ffn(ctx, &format!("{prefix}.ffn"), f)?;
    ctx.g.tape.add(x, ff)
}

/// Decoder layer: self-attention (optionally masked), cross-attention to
/// memory tokens, FFN; pre-LN residuals.
pub fn decoder_layer(
    ctx: &mut LayerCtx,
    prefix: &str,
    heads: usize,
    x: TensorId,
    memory: TensorId,
    self_mask: Option<TensorId>,
) -> Result<TensorId> {
    let a = layer_norm(ctx.g, &format!("{prefix}.ln1"), x)?;
    let att = attention(ctx, &format!("{prefix}.attn"), heads, a, a, self_mask)?;
    let att = ctx.maybe_dropout(att)?;
    let x = ctx.g.tape.add(x, att)?;
    let c = layer_norm(ctx.g, &format!("{prefix}.lnc"), x)?;
    let cross = attention(ctx, &format!("{prefix}.cross"), heads, c, memory, None)?;
    let cross = ctx.maybe_dropout(cross)?;
    let x = ctx.g.tape.add(x, cross)?;
    let f = layer_norm(ctx.g, &format!("{prefix}.ln2"), x)?;
    let ff = ffn(ctx, &format!("{prefix}.ffn"), f)?;
    ctx.g.tape.add(x, ff)
}

/// Additive key-padding bias `[B,1,1,T]` from a 0/1 mask.
pub fn padding_bias(g: &mut Graph, mask: &[f32], b: usize, t: usize) -> Result<TensorId> {
    let bias: Vec<f32> = mask.iter().map(|&m| if m == 0.0 { MASK_NEG } else { 0.0 }).collect();
    g.tape.leaf(&[b, 1, 1, t], bias)
}

/// Additive causal bias `[1,1,T,T]`.
pub fn causal_bias(g: &mut Graph, t: usize) -> Result<TensorId> {
    let mut bias = vec![0f32; t * t];
    for i in 0..t {
        for j in (i + 1)..t {
            bias[i * t + j] = MASK_NEG;
        }
    }
    g.tape.leaf(&[1, 1, t, t], bias)
}
