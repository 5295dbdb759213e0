//! Model-level invariants: scatter-only/PAD equivalence, decode determinism,
//! query-permutation equivariance, latent differentiability, checkpoints.

use std::collections::HashMap;

use lee_core::datagen::ScatterSet;
use lee_core::expr::{Token, TokenSeq};
use lee_core::model::{
    load_checkpoint, save_checkpoint, DecodeMode, EncodeMode, LeeModel, ModelConfig,
};
use lee_tensor::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_enc: 16,
        enc_layers: 1,
        enc_heads: 2,
        d_expr: 16,
        expr_layers: 1,
        expr_heads: 2,
        d_eval: 16,
        eval_layers: 1,
        eval_heads: 2,
        ffn_mult: 2,
        dropout: 0.0,
        k_mem: 2,
        d_z: 8,
        max_seq_len: 32,
        k_max: 2,
        numeric_hidden: 32,
        coord_scale: 4.0,
        logvar_lo: -8.0,
        logvar_hi: 4.0,
    }
}

fn toy_scatter(seed: u64, n: usize, k: usize) -> ScatterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let y: Vec<f64> = (0..n).map(|i| x[i * k] * 2.0 + 1.0).collect();
    ScatterSet::new(x, y, k, "test".into())
}

#[test]
fn scatter_only_equals_all_pad_bit_identical() {
    let model = LeeModel::new(tiny_config(), 3);
    let scatter = toy_scatter(1, 24, 2);
    let z_none = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    for pad_len in [1usize, 5, 17] {
        let pads = TokenSeq::new(vec![Token::Pad; pad_len]);
        let z_pad = model.encode(Some(&pads), &scatter, EncodeMode::Deterministic, None).unwrap();
        assert_eq!(z_none.mu, z_pad.mu, "pad_len {pad_len}");
        assert_eq!(z_none.log_var, z_pad.log_var, "pad_len {pad_len}");
    }
}

#[test]
fn deterministic_encode_is_repeatable() {
    let model = LeeModel::new(tiny_config(), 4);
    let scatter = toy_scatter(2, 30, 2);
    let a = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    let b = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    assert_eq!(a.z, b.z);
    assert_eq!(a.z, a.mu, "deterministic mode must return z = mu exactly");
}

#[test]
fn sample_mode_uses_reparameterization() {
    let model = LeeModel::new(tiny_config(), 4);
    let scatter = toy_scatter(2, 30, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = model.encode(None, &scatter, EncodeMode::Sample, Some(&mut rng)).unwrap();
    let mut rng2 = ChaCha8Rng::seed_from_u64(9);
    let b = model.encode(None, &scatter, EncodeMode::Sample, Some(&mut rng2)).unwrap();
    assert_eq!(a.z, b.z, "same rng seed gives the same draw");
    let mut rng3 = ChaCha8Rng::seed_from_u64(10);
    let c = model.encode(None, &scatter, EncodeMode::Sample, Some(&mut rng3)).unwrap();
    assert_ne!(a.z, c.z, "different rng seed gives a different draw");
    assert_eq!(a.mu, c.mu, "gaussian parameters are draw-independent");
}

#[test]
fn empty_scatter_rejected() {
    let model = LeeModel::new(tiny_config(), 4);
    let empty = ScatterSet::new(vec![], vec![], 1, "t".into());
    assert!(model.encode(None, &empty, EncodeMode::Deterministic, None).is_err());
}

#[test]
fn greedy_decode_deterministic_and_tau_zero_limit() {
    let model = LeeModel::new(tiny_config(), 5);
    let scatter = toy_scatter(3, 20, 2);
    let z = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    let (a, _) = model.decode_expression(&z.z, DecodeMode::Greedy, None, 24).unwrap();
    let (b, _) = model.decode_expression(&z.z, DecodeMode::Greedy, None, 24).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (c, _) = model
        .decode_expression(&z.z, DecodeMode::Sample(1e-6), Some(&mut rng), 24)
        .unwrap();
    assert_eq!(a, c, "tau -> 0 sampling converges to greedy");
}

#[test]
fn sampled_decodes_are_diverse() {
    let model = LeeModel::new(tiny_config(), 6);
    let scatter = toy_scatter(4, 20, 2);
    let z = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut distinct = std::collections::HashSet::new();
    for _ in 0..32 {
        let (seq, _) = model
            .decode_expression(&z.z, DecodeMode::Sample(0.7), Some(&mut rng), 24)
            .unwrap();
        distinct.insert(seq.to_text());
    }
    assert!(distinct.len() >= 2, "expected diversity, got {}", distinct.len());
}

#[test]
fn decode_eval_shape_and_permutation_equivariance() {
    let model = LeeModel::new(tiny_config(), 7);
    let m = 13usize;
    let k = 2usize;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let q: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let y = model.decode_eval(&z, &q, m, k).unwrap();
    assert_eq!(y.len(), m);
    // permute rows and compare
    let perm: Vec<usize> = (0..m).rev().collect();
    let mut qp = vec![0f64; m * k];
    for (new, &old) in perm.iter().enumerate() {
        qp[new * k..(new + 1) * k].copy_from_slice(&q[old * k..(old + 1) * k]);
    }
    let yp = model.decode_eval(&z, &qp, m, k).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(yp[new], y[old], "row {old} -> {new}");
    }
}

/// d(sum (g_eval(z, X) - y)^2)/dz against central finite differences on the
/// f64 replay of the recorded graph.
#[test]
fn eval_decoder_latent_gradient_matches_finite_differences() {
    let model = LeeModel::new(tiny_config(), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = 6usize;
    let z0: Vec<f32> = (0..8).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let q: Vec<f64> = (0..m * 2).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let targets: Vec<f32> = (0..m).map(|_| rng.gen_range(-1.0f32..1.0)).collect();

    let mut g = Graph::new(&model.store, false);
    let z = g.tape.leaf(&[1, 8], z0.clone()).unwrap();
    let yhat = model.decode_eval_graph(&mut g, z, &pad_queries(&q, m, 2, 2), 1, m, None).unwrap();
    let y = g.tape.leaf(&[1, m], targets).unwrap();
    let diff = g.tape.sub(yhat, y).unwrap();
    let sq = g.tape.square(diff).unwrap();
    let loss = g.tape.sum_all(sq);
    g.backward(loss).unwrap();
    let grad = g.tape.grad(z).unwrap().to_vec();

    for idx in 0..8 {
        let h = 1e-3f64;
        let eval = |delta: f64| {
            let mut zmod: Vec<f64> = z0.iter().map(|&v| v as f64).collect();
            zmod[idx] += delta;
            let mut overrides = HashMap::new();
            overrides.insert(z, zmod);
            g.tape.forward_f64(&overrides)[loss.index()][0]
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let got = grad[idx] as f64;
        let denom = fd.abs().max(1e-4);
        assert!(
            ((got - fd) / denom).abs() < 1e-4,
            "z[{idx}]: autodiff {got} vs fd {fd}"
        );
    }
}

fn pad_queries(q: &[f64], m: usize, k: usize, k_max: usize) -> Vec<f64> {
    let mut out = vec![0f64; m * k_max];
    for r in 0..m {
        for c in 0..k {
            out[r * k_max + c] = q[r * k + c];
        }
    }
    out
}

/// Backward through decode_eval(encode(.)) produces finite gradients.
#[test]
fn end_to_end_differentiability() {
    let model = LeeModel::new(tiny_config(), 9);
    let scatter = toy_scatter(5, 12, 2);
    let batch = model.batch_for(None, &scatter).unwrap();
    let mut g = Graph::new(&model.store, true);
    let enc = model.encode_graph(&mut g, &batch, EncodeMode::Deterministic, None).unwrap();
    let q = pad_queries(&scatter.x, scatter.n, 2, 2);
    let yhat = model.decode_eval_graph(&mut g, enc.z, &q, 1, scatter.n, None).unwrap();
    let y: Vec<f32> = scatter.y.iter().map(|&v| v as f32).collect();
    let yt = g.tape.leaf(&[1, scatter.n], y).unwrap();
    let d = g.tape.sub(yhat, yt).unwrap();
    let sq = g.tape.square(d).unwrap();
    let loss = g.tape.sum_all(sq);
    g.backward(loss).unwrap();
    let grads = g.param_grads();
    assert!(!grads.is_empty());
    let mut saw_encoder = false;
    for (name, grad) in &grads {
        assert!(grad.iter().all(|v| v.is_finite()), "non-finite grad in {name}");
        if name.starts_with("enc.") {
            saw_encoder = true;
        }
    }
    assert!(saw_encoder, "gradient must reach encoder parameters");
}

#[test]
fn logvar_is_clamped() {
    let model = LeeModel::new(tiny_config(), 10);
    let scatter = toy_scatter(6, 16, 2);
    let lat = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    for &lv in &lat.log_var {
        assert!((-8.0..=4.0).contains(&lv));
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = LeeModel::new(tiny_config(), 11);
    save_checkpoint(&path, &model, "prov = 1").unwrap();
    let (loaded, prov) = load_checkpoint(&path).unwrap();
    assert_eq!(prov, "prov = 1");
    assert_eq!(loaded.cfg, model.cfg);
    for (name, p) in model.store.iter() {
        let q = loaded.store.get(name).unwrap();
        assert_eq!(p.shape, q.shape, "{name}");
        assert_eq!(p.data, q.data, "{name}");
    }
    // behavioral equivalence
    let scatter = toy_scatter(7, 10, 2);
    let a = model.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    let b = loaded.encode(None, &scatter, EncodeMode::Deterministic, None).unwrap();
    assert_eq!(a.z, b.z);
}

#[test]
fn checkpoint_rejects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = LeeModel::new(tiny_config(), 12);
    save_checkpoint(&path, &model, "").unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 64]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn model_config_text_round_trip() {
    let cfg = ModelConfig::default();
    let back = ModelConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(cfg, back);
    assert!(ModelConfig::from_text("nonsense_key = 3").is_err());
    // full-scale values are storable
    let paper = ModelConfig::paper_scale();
    let back = ModelConfig::from_text(&paper.to_text()).unwrap();
    assert_eq!(paper, back);
}
