//! The three jointly trained components sharing one latent space: the
//! symbolic/numeric fusion encoder, the autoregressive expression decoder,
//! and the differentiable evaluation decoder.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use layers::{causal_bias, padding_bias};

use lee_tensor::{Graph, ParamStore, TensorError, TensorId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::datagen::ScatterSet;
use crate::expr::{Token, TokenSeq, VOCAB_SIZE};
use layers::{decoder_layer, encoder_layer, layer_norm, linear, LayerCtx};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("scatter set is empty")]
    EmptyScatter,
    #[error("query width {got} exceeds configured k_max {k_max}")]
    QueryWidth { got: usize, k_max: usize },
    #[error("latent has {got} values, model expects d_z = {want}")]
    LatentWidth { got: usize, want: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_enc: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub d_expr: usize,
    pub expr_layers: usize,
    pub expr_heads: usize,
    pub d_eval: usize,
    pub eval_layers: usize,
    pub eval_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f32,
    /// Memory-token count K.
    pub k_mem: usize,
    pub d_z: usize,
    pub max_seq_len: usize,
    /// Variable slots the numeric streams carry.
    pub k_max: usize,
    pub numeric_hidden: usize,
    /// Fixed divisor applied to log-compressed coordinates.
    pub coord_scale: f64,
    pub logvar_lo: f32,
    pub logvar_hi: f32,
}

impl Default for ModelConfig {
    /// Desk-scale configuration.
    fn default() -> Self {
        ModelConfig {
            d_enc: 64,
            enc_layers: 2,
            enc_heads: 4,
            d_expr: 64,
            expr_layers: 2,
            expr_heads: 4,
            d_eval: 64,
            eval_layers: 2,
            eval_heads: 4,
            ffn_mult: 4,
            dropout: 0.0,
            k_mem: 2,
            d_z: 32,
            max_seq_len: 64,
            k_max: 3,
            numeric_hidden: 256,
            coord_scale: 4.0,
            logvar_lo: -8.0,
            logvar_hi: 4.0,
        }
    }
}

impl ModelConfig {
    /// Full-scale hyperparameters (for reference; far beyond desk budget).
    pub fn paper_scale() -> Self {
        ModelConfig {
            d_enc: 768,
            enc_layers: 6,
            enc_heads: 12,
            d_expr: 512,
            expr_layers: 8,
            expr_heads: 8,
            d_eval: 512,
            eval_layers: 4,
            eval_heads: 8,
            ffn_mult: 4,
            dropout: 0.1,
            k_mem: 4,
            d_z: 512,
            max_seq_len: 256,
            k_max: 5,
            numeric_hidden: 256,
            coord_scale: 4.0,
            logvar_lo: -8.0,
            logvar_hi: 4.0,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "d_enc = {}\nenc_layers = {}\nenc_heads = {}\nd_expr = {}\nexpr_layers = {}\nexpr_heads = {}\nd_eval = {}\neval_layers = {}\neval_heads = {}\nffn_mult = {}\ndropout = {}\nk_mem = {}\nd_z = {}\nmax_seq_len = {}\nk_max = {}\nnumeric_hidden = {}\ncoord_scale = {}\nlogvar_lo = {}\nlogvar_hi = {}\n",
            self.d_enc,
            self.enc_layers,
            self.enc_heads,
            self.d_expr,
            self.expr_layers,
            self.expr_heads,
            self.d_eval,
            self.eval_layers,
            self.eval_heads,
            self.ffn_mult,
            self.dropout,
            self.k_mem,
            self.d_z,
            self.max_seq_len,
            self.k_max,
            self.numeric_hidden,
            self.coord_scale,
            self.logvar_lo,
            self.logvar_hi,
        )
    }

    pub fn from_text(text: &str) -> std::result::Result<Self, String> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| format!("bad config line `{line}`"))?;
            let key = key.trim();
            let val = val.trim();
            let pu = |v: &str| v.parse::<usize>().map_err(|e| format!("{key}: {e}"));
            let pf = |v: &str| v.parse::<f32>().map_err(|e| format!("{key}: {e}"));
            match key {
                "d_enc" => cfg.d_enc = pu(val)?,
                "enc_layers" => cfg.enc_layers = pu(val)?,
                "enc_heads" => cfg.enc_heads = pu(val)?,
                "d_expr" => cfg.d_expr = pu(val)?,
                "expr_layers" => cfg.expr_layers = pu(val)?,
                "expr_heads" => cfg.expr_heads = pu(val)?,
                "d_eval" => cfg.d_eval = pu(val)?,
                "eval_layers" => cfg.eval_layers = pu(val)?,
                "eval_heads" => cfg.eval_heads = pu(val)?,
                "ffn_mult" => cfg.ffn_mult = pu(val)?,
                "dropout" => cfg.dropout = pf(val)?,
                "k_mem" => cfg.k_mem = pu(val)?,
                "d_z" => cfg.d_z = pu(val)?,
                "max_seq_len" => cfg.max_seq_len = pu(val)?,
                "k_max" => cfg.k_max = pu(val)?,
                "numeric_hidden" => cfg.numeric_hidden = pu(val)?,
                "coord_scale" => cfg.coord_scale = pf(val)? as f64,
                "logvar_lo" => cfg.logvar_lo = pf(val)?,
                "logvar_hi" => cfg.logvar_hi = pf(val)?,
                other => return Err(format!("unknown model config key `{other}`")),
            }
        }
        Ok(cfg)
    }
}

/// A latent draw together with the Gaussian it came from.
#[derive(Debug, Clone)]
pub struct Latent {
    pub z: Vec<f32>,
    pub mu: Vec<f32>,
    pub log_var: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Sample,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample(f64),
}

/// Batched encoder input: PAD-padded token ids plus raw scatter rows,
/// coordinates zero-padded to `k_max` columns.
pub struct EncodeBatch {
    pub tokens: Vec<u32>,
    pub ts: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub n: usize,
    pub b: usize,
}

/// Graph-resident encoder outputs.
pub struct EncodedIds {
    pub mu: TensorId,
    pub logvar: TensorId,
    pub z: TensorId,
}

pub fn log_compress(u: f64) -> f64 {
    u.signum() * (1.0 + u.abs()).ln()
}

pub struct LeeModel {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

impl LeeModel {
    pub fn new(cfg: ModelConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_params(&cfg, &mut store, &mut rng);
        LeeModel { cfg, store }
    }

    /// Expected parameter shapes for this config (used by checkpoint loading).
    pub fn expected_shapes(cfg: &ModelConfig) -> ParamStore {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        init_params(cfg, &mut store, &mut rng);
        store
    }

    // ---- graph-level forwards (training and gradient search) ----

    /// Joint encode of symbolic and numeric streams. `ts == 0` is the
    /// scatter-only branch; an all-PAD symbolic stream is equivalent.
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        batch: &EncodeBatch,
        mode: EncodeMode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncodedIds> {
        let cfg = &self.cfg;
        let (b, ts, n) = (batch.b, batch.ts, batch.n);
        if n == 0 {
            return Err(ModelError::EmptyScatter);
        }
        // numeric stream: [x~ / scale, y~] with non-finite y routed to a
        // learnable special embedding
        let kf = cfg.k_max + 1;
        let mut feats = vec![0f32; b * n * kf];
        let mut nf_mask = vec![0f32; b * n];
        for r in 0..b * n {
            for c in 0..cfg.k_max {
                feats[r * kf + c] = (log_compress(batch.xs[r * cfg.k_max + c]) / cfg.coord_scale) as f32;
            }
            let y = batch.ys[r];
            if y.is_finite() && y.abs() <= crate::expr::OVERFLOW_GUARD {
                feats[r * kf + cfg.k_max] = log_compress(y) as f32;
            } else {
                nf_mask[r] = 1.0;
            }
        }
        let feat = g.tape.leaf(&[b * n, kf], feats)?;
        let h = linear(g, "enc.num.1", feat)?;
        let h = g.tape.silu(h);
        let h = linear(g, "enc.num.2", h)?;
        let nf = g.tape.leaf(&[b * n, 1], nf_mask)?;
        let nf_emb = g.param("enc.num.nonfinite")?;
        let nf_term = g.tape.mul(nf, nf_emb)?;
        let h = g.tape.add(h, nf_term)?;
        let num_h = g.tape.reshape(h, &[b, n, cfg.d_enc])?;

        // symbolic stream with learned positions
        let (fused, t_total, mask) = if ts > 0 {
            let emb = g.param("enc.tok_emb")?;
            let sym = g.tape.embedding(emb, &batch.tokens)?;
            let sym = g.tape.reshape(sym, &[b, ts, cfg.d_enc])?;
            let pos_tab = g.param("enc.pos_emb")?;
            let pos_ids: Vec<u32> = (0..ts as u32).collect();
            let pos = g.tape.embedding(pos_tab, &pos_ids)?;
            let sym = g.tape.add(sym, pos)?;
            let fused = g.tape.concat(sym, num_h, 1)?;
            let mut mask = vec![1f32; b * (ts + n)];
            for bi in 0..b {
                for ti in 0..ts {
                    if batch.tokens[bi * ts + ti] == Token::Pad.id() {
                        mask[bi * (ts + n) + ti] = 0.0;
                    }
                }
            }
            (fused, ts + n, mask)
        } else {
            (num_h, n, vec![1f32; b * n])
        };

        let bias = padding_bias(g, &mask, b, t_total)?;
        let mask_t = g.tape.leaf(&[b, t_total], mask)?;
        let mut x = fused;
        {
            let mut ctx = LayerCtx { g, dropout: cfg.dropout, rng: rng.as_deref_mut() };
            for l in 0..cfg.enc_layers {
                x = encoder_layer(&mut ctx, &format!("enc.l{l}"), cfg.enc_heads, x, Some(bias))?;
            }
        }
        let x = layer_norm(g, "enc.lnf", x)?;
        let pooled = g.tape.mean_pool_masked(x, mask_t)?;
        let mu = linear(g, "enc.mu", pooled)?;
        let logvar_raw = linear(g, "enc.logvar", pooled)?;
        let logvar = g.tape.clamp(logvar_raw, cfg.logvar_lo, cfg.logvar_hi);
        let z = match mode {
            EncodeMode::Deterministic => mu,
            EncodeMode::Sample => {
                let rng = rng.expect("sample mode needs an rng");
                let normal = Normal::new(0.0, 1.0).unwrap();
                let eps: Vec<f32> = (0..b * cfg.d_z).map(|_| normal.sample(rng) as f32).collect();
                let eps = g.tape.leaf(&[b, cfg.d_z], eps)?;
                let half = g.tape.scale(logvar, 0.5);
                let sigma = g.tape.exp(half);
                let noise = g.tape.mul(sigma, eps)?;
                g.tape.add(mu, noise)?
            }
        };
        Ok(EncodedIds { mu, logvar, z })
    }

    /// Teacher-forced expression decoder: logits `[B, T, V]` for the next
    /// token at each input position.
    pub fn decode_expr_graph(
        &self,
        g: &mut Graph,
        z: TensorId,
        tgt_in: &[u32],
        b: usize,
        t: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TensorId> {
        let cfg = &self.cfg;
        let mem = linear(g, "dexpr.mem", z)?;
        let mem = g.tape.reshape(mem, &[b, cfg.k_mem, cfg.d_expr])?;
        let emb = g.param("dexpr.tok_emb")?;
        let x = g.tape.embedding(emb, tgt_in)?;
        let x = g.tape.reshape(x, &[b, t, cfg.d_expr])?;
        let pos_tab = g.param("dexpr.pos_emb")?;
        let pos_ids: Vec<u32> = (0..t as u32).collect();
        let pos = g.tape.embedding(pos_tab, &pos_ids)?;
        let mut x = g.tape.add(x, pos)?;
        let causal = causal_bias(g, t)?;
        {
            let mut ctx = LayerCtx { g, dropout: cfg.dropout, rng: rng.as_deref_mut() };
            for l in 0..cfg.expr_layers {
                x = decoder_layer(&mut ctx, &format!("dexpr.l{l}"), cfg.expr_heads, x, mem, Some(causal))?;
            }
        }
        let x = layer_norm(g, "dexpr.lnf", x)?;
        Ok(linear(g, "dexpr.head", x)?)
    }

    /// Evaluation decoder: per-query scalar predictions `[B, M]`.
    /// Bidirectional self-attention over query positions, cross-attention to
    /// the memory tokens; differentiable w.r.t. `z`.
    pub fn decode_eval_graph(
        &self,
        g: &mut Graph,
        z: TensorId,
        queries: &[f64],
        b: usize,
        m: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TensorId> {
        let cfg = &self.cfg;
        let mem = linear(g, "deval.mem", z)?;
        let mem = g.tape.reshape(mem, &[b, cfg.k_mem, cfg.d_eval])?;
        let mut feats = vec![0f32; b * m * cfg.k_max];
        for (i, &q) in queries.iter().enumerate() {
            feats[i] = (log_compress(q) / cfg.coord_scale) as f32;
        }
        debug_assert_eq!(queries.len(), b * m * cfg.k_max);
        let feat = g.tape.leaf(&[b * m, cfg.k_max], feats)?;
        let h = linear(g, "deval.query.1", feat)?;
        let h = g.tape.silu(h);
        let h = linear(g, "deval.query.2", h)?;
        let mut x = g.tape.reshape(h, &[b, m, cfg.d_eval])?;
        {
            let mut ctx = LayerCtx { g, dropout: cfg.dropout, rng: rng.as_deref_mut() };
            for l in 0..cfg.eval_layers {
                x = decoder_layer(&mut ctx, &format!("deval.l{l}"), cfg.eval_heads, x, mem, None)?;
            }
        }
        let x = layer_norm(g, "deval.lnf", x)?;
        let h = linear(g, "deval.head.1", x)?;
        let h = g.tape.silu(h);
        let y = linear(g, "deval.head.2", h)?;
        Ok(g.tape.reshape(y, &[b, m])?)
    }

    // ---- single-example inference helpers ----

    /// Build the batched encoder input for one (tokens, scatter) pair.
    /// `tokens = None` is the scatter-only branch.
    pub fn batch_for(&self, tokens: Option<&TokenSeq>, scatter: &ScatterSet) -> Result<EncodeBatch> {
        if scatter.n == 0 {
            return Err(ModelError::EmptyScatter);
        }
        if scatter.k > self.cfg.k_max {
            return Err(ModelError::QueryWidth { got: scatter.k, k_max: self.cfg.k_max });
        }
        let ids: Vec<u32> = match tokens {
            Some(seq) => seq.ids(),
            None => Vec::new(),
        };
        let mut xs = vec![0f64; scatter.n * self.cfg.k_max];
        for r in 0..scatter.n {
            for c in 0..scatter.k {
                xs[r * self.cfg.k_max + c] = scatter.x[r * scatter.k + c];
            }
        }
        Ok(EncodeBatch {
            ts: ids.len(),
            tokens: ids,
            xs,
            ys: scatter.y.clone(),
            n: scatter.n,
            b: 1,
        })
    }

    pub fn encode(
        &self,
        tokens: Option<&TokenSeq>,
        scatter: &ScatterSet,
        mode: EncodeMode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Latent> {
        let batch = self.batch_for(tokens, scatter)?;
        let mut g = Graph::new(&self.store, false);
        let enc = self.encode_graph(&mut g, &batch, mode, rng)?;
        Ok(Latent {
            z: g.tape.value(enc.z).to_vec(),
            mu: g.tape.value(enc.mu).to_vec(),
            log_var: g.tape.value(enc.logvar).to_vec(),
        })
    }

    /// Autoregressive decode from a latent vector. Returns the framed
    /// sequence and whether it was truncated at `max_len`.
    pub fn decode_expression(
        &self,
        z: &[f32],
        mode: DecodeMode,
        rng: Option<&mut ChaCha8Rng>,
        max_len: usize,
    ) -> Result<(TokenSeq, bool)> {
        if z.len() != self.cfg.d_z {
            return Err(ModelError::LatentWidth { got: z.len(), want: self.cfg.d_z });
        }
        let mut ids: Vec<u32> = vec![Token::Bos.id()];
        let mut rng = rng;
        let mut truncated = true;
        for _ in 0..max_len {
            let mut g = Graph::new(&self.store, false);
            let zt = g.tape.leaf(&[1, self.cfg.d_z], z.to_vec())?;
            let t = ids.len();
            let logits = self.decode_expr_graph(&mut g, zt, &ids, 1, t, None)?;
            let row = &g.tape.value(logits)[(t - 1) * VOCAB_SIZE..t * VOCAB_SIZE];
            let next = match mode {
                DecodeMode::Greedy => argmax(row),
                DecodeMode::Sample(tau) => {
                    if tau <= 0.0 {
                        argmax(row)
                    } else {
                        sample_logits(row, tau, rng.as_deref_mut().expect("sample mode needs an rng"))
                    }
                }
            };
            ids.push(next as u32);
            if next as u32 == Token::Eos.id() {
                truncated = false;
                break;
            }
        }
        let seq = TokenSeq::from_ids(&ids).expect("decoder emits vocabulary ids");
        Ok((seq, truncated))
    }

    /// Evaluate the latent at query points (row-major `m x k`, `k <= k_max`).
    pub fn decode_eval(&self, z: &[f32], queries: &[f64], m: usize, k: usize) -> Result<Vec<f64>> {
        if z.len() != self.cfg.d_z {
            return Err(ModelError::LatentWidth { got: z.len(), want: self.cfg.d_z });
        }
        if k > self.cfg.k_max {
            return Err(ModelError::QueryWidth { got: k, k_max: self.cfg.k_max });
        }
        let mut padded = vec![0f64; m * self.cfg.k_max];
        for r in 0..m {
            for c in 0..k {
                padded[r * self.cfg.k_max + c] = queries[r * k + c];
            }
        }
        let mut g = Graph::new(&self.store, false);
        let zt = g.tape.leaf(&[1, self.cfg.d_z], z.to_vec())?;
        let y = self.decode_eval_graph(&mut g, zt, &padded, 1, m, None)?;
        Ok(g.tape.value(y).iter().map(|&v| v as f64).collect())
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_logits(row: &[f32], tau: f64, rng: &mut ChaCha8Rng) -> usize {
    let mx = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let weights: Vec<f64> = row.iter().map(|&l| ((l as f64 - mx) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn init_params(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0f64, 0.02).unwrap();
    let mut w = |store: &mut ParamStore, name: &str, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| normal.sample(rng) as f32).collect();
        store.insert(name, shape, data);
    };
    let zeros = |store: &mut ParamStore, name: &str, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        store.insert(name, shape, vec![0f32; n]);
    };
    let ones = |store: &mut ParamStore, name: &str, shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        store.insert(name, shape, vec![1f32; n]);
    };
    let lin = |store: &mut ParamStore,
               w: &mut dyn FnMut(&mut ParamStore, &str, Vec<usize>),
               name: &str,
               din: usize,
               dout: usize| {
        w(store, &format!("{name}.w"), vec![din, dout]);
        store.insert(&format!("{name}.b"), vec![dout], vec![0f32; dout]);
    };
    let ln = |store: &mut ParamStore, name: &str, d: usize| {
        store.insert(&format!("{name}.g"), vec![d], vec![1f32; d]);
        store.insert(&format!("{name}.b"), vec![d], vec![0f32; d]);
    };
    let attn = |store: &mut ParamStore, w: &mut dyn FnMut(&mut ParamStore, &str, Vec<usize>), name: &str, d: usize| {
        for part in ["q", "k", "v", "o"] {
            w(store, &format!("{name}.{part}.w"), vec![d, d]);
            store.insert(&format!("{name}.{part}.b"), vec![d], vec![0f32; d]);
        }
    };

    // encoder
    w(store, "enc.tok_emb", vec![VOCAB_SIZE, cfg.d_enc]);
    w(store, "enc.pos_emb", vec![cfg.max_seq_len, cfg.d_enc]);
    lin(store, &mut w, "enc.num.1", cfg.k_max + 1, cfg.numeric_hidden);
    lin(store, &mut w, "enc.num.2", cfg.numeric_hidden, cfg.d_enc);
    w(store, "enc.num.nonfinite", vec![cfg.d_enc]);
    for l in 0..cfg.enc_layers {
        let p = format!("enc.l{l}");
        ln(store, &format!("{p}.ln1"), cfg.d_enc);
        attn(store, &mut w, &format!("{p}.attn"), cfg.d_enc);
        ln(store, &format!("{p}.ln2"), cfg.d_enc);
        lin(store, &mut w, &format!("{p}.ffn.1"), cfg.d_enc, cfg.d_enc * cfg.ffn_mult);
        lin(store, &mut w, &format!("{p}.ffn.2"), cfg.d_enc * cfg.ffn_mult, cfg.d_enc);
    }
    ln(store, "enc.lnf", cfg.d_enc);
    lin(store, &mut w, "enc.mu", cfg.d_enc, cfg.d_z);
    lin(store, &mut w, "enc.logvar", cfg.d_enc, cfg.d_z);

    // expression decoder
    lin(store, &mut w, "dexpr.mem", cfg.d_z, cfg.k_mem * cfg.d_expr);
    w(store, "dexpr.tok_emb", vec![VOCAB_SIZE, cfg.d_expr]);
    w(store, "dexpr.pos_emb", vec![cfg.max_seq_len, cfg.d_expr]);
    for l in 0..cfg.expr_layers {
        let p = format!("dexpr.l{l}");
        ln(store, &format!("{p}.ln1"), cfg.d_expr);
        attn(store, &mut w, &format!("{p}.attn"), cfg.d_expr);
        ln(store, &format!("{p}.lnc"), cfg.d_expr);
        attn(store, &mut w, &format!("{p}.cross"), cfg.d_expr);
        ln(store, &format!("{p}.ln2"), cfg.d_expr);
        lin(store, &mut w, &format!("{p}.ffn.1"), cfg.d_expr, cfg.d_expr * cfg.ffn_mult);
        lin(store, &mut w, &format!("{p}.ffn.2"), cfg.d_expr * cfg.ffn_mult, cfg.d_expr);
    }
    ln(store, "dexpr.lnf", cfg.d_expr);
    lin(store, &mut w, "dexpr.head", cfg.d_expr, VOCAB_SIZE);

    // evaluation decoder
    lin(store, &mut w, "deval.mem", cfg.d_z, cfg.k_mem * cfg.d_eval);
    lin(store, &mut w, "deval.query.1", cfg.k_max, cfg.numeric_hidden);
    lin(store, &mut w, "deval.query.2", cfg.numeric_hidden, cfg.d_eval);
    for l in 0..cfg.eval_layers {
        let p = format!("deval.l{l}");
        ln(store, &format!("{p}.ln1"), cfg.d_eval);
        attn(store, &mut w, &format!("{p}.attn"), cfg.d_eval);
        ln(store, &format!("{p}.lnc"), cfg.d_eval);
        attn(store, &mut w, &format!("{p}.cross"), cfg.d_eval);
        ln(store, &format!("{p}.ln2"), cfg.d_eval);
        lin(store, &mut w, &format!("{p}.ffn.1"), cfg.d_eval, cfg.d_eval * cfg.ffn_mult);
        lin(store, &mut w, &format!("{p}.ffn.2"), cfg.d_eval * cfg.ffn_mult, cfg.d_eval);
    }
    ln(store, "deval.lnf", cfg.d_eval);
    lin(store, &mut w, "deval.head.1", cfg.d_eval, cfg.numeric_hidden);
    lin(store, &mut w, "deval.head.2", cfg.numeric_hidden, 1);

    let _ = ones;
    let _ = zeros;
}

/// Parameter-name prefixes frozen in the decoder-freeze training phase.
pub fn decoder_prefixes() -> [&'static str; 2] {
    ["dexpr.", "deval."]
}
