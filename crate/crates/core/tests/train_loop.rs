//! Training-loop contracts: the phase table, decoder freezing, the
//! weighted-total invariant, and refine/expr equivalence at zero corruption.

use lee_core::datagen::{
    build_corpus, read_corpus, CorruptionConfig, GrammarConfig,
};
use lee_core::model::{EncodeMode, LeeModel, ModelConfig};
use lee_core::train::{
    loss_expr, train, PhasePlan, TrainConfig,
};
use lee_tensor::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model(seed: u64) -> LeeModel {
    LeeModel::new(
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
            max_seq_len: 48,
            k_max: 2,
            numeric_hidden: 32,
            coord_scale: 4.0,
            logvar_lo: -8.0,
            logvar_hi: 4.0,
        },
        seed,
    )
}

fn tiny_corpus(n: usize, seed: u64) -> Vec<lee_core::datagen::CorpusRecord> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GrammarConfig { k_max: 2, b_max: 2, n_scatter: 48, ..Default::default() };
    build_corpus(&cfg, n, seed, dir.path(), "test").unwrap();
    let mut recs = Vec::new();
    for split in ["train.lee", "val.lee", "test.lee"] {
        recs.extend(read_corpus(&dir.path().join(split)).unwrap());
    }
    recs
}

fn small_train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        scatter_min: 16,
        scatter_max: 24,
        eval_queries: 12,
        min_finite_rows: 8,
        log_every: 0,
        val_every: 0,
        seed,
        ..Default::default()
    }
}

#[test]
fn phase_table_matches_bit_exact() {
    let plan = PhasePlan::paper();
    let rows: Vec<[f64; 5]> = plan
        .phases
        .iter()
        .map(|p| [p.weights.expr, p.weights.eval, p.weights.kl, p.weights.align, p.weights.refine])
        .collect();
    assert_eq!(rows[0], [1.0, 5.0, 0.001, 0.0, 0.0]);
    assert_eq!(rows[1], [1.0, 5.0, 0.001, 2.0, 0.0]);
    assert_eq!(rows[2], [1.0, 5.0, 0.001, 2.0, 1.0]);
    assert_eq!(rows[3], [0.0, 0.0, 0.001, 5.0, 0.0]);
    assert_eq!(rows[4], [1.0, 5.0, 0.001, 2.0, 1.0]);
    let steps: Vec<u64> = plan.phases.iter().map(|p| p.steps).collect();
    assert_eq!(steps, vec![50_000, 30_000, 50_000, 30_000, 40_000]);
    assert!(plan.phases[3].freeze_decoders);
    assert!(!plan.phases[0].freeze_decoders && !plan.phases[4].freeze_decoders);
}

#[test]
fn phase4_leaves_decoder_params_bit_identical() {
    let mut model = tiny_model(1);
    let recs = tiny_corpus(12, 2);
    let before: Vec<(String, Vec<f32>)> = model
        .store
        .iter()
        .filter(|(n, _)| n.starts_with("dexpr.") || n.starts_with("deval."))
        .map(|(n, p)| (n.clone(), p.data.clone()))
        .collect();
    let enc_before: Vec<f32> = model.store.get("enc.mu.w").unwrap().data.clone();
    let plan = PhasePlan::with_steps([0, 0, 0, 100, 0]);
    let report = train(&mut model, &recs, &[], &plan, &small_train_cfg(3), None).unwrap();
    assert_eq!(report.steps_done, 100);
    for (name, data) in &before {
        assert_eq!(&model.store.get(name).unwrap().data, data, "{name} changed during freeze");
    }
    assert_ne!(model.store.get("enc.mu.w").unwrap().data, enc_before, "encoder must keep training");
}

#[test]
fn total_loss_is_the_weighted_sum_of_terms() {
    let mut model = tiny_model(4);
    let recs = tiny_corpus(12, 5);
    // phase 5 row has all five terms active
    let plan = PhasePlan::with_steps([0, 0, 0, 0, 3]);
    let report = train(&mut model, &recs, &[], &plan, &small_train_cfg(6), None).unwrap();
    let m = report.last.unwrap();
    let want = 1.0 * m.loss_expr.unwrap()
        + 5.0 * m.loss_eval.unwrap()
        + 0.001 * m.loss_kl.unwrap()
        + 2.0 * m.loss_align.unwrap()
        + 1.0 * m.loss_refine.unwrap();
    let rel = ((m.total - want) / want.abs().max(1e-9)).abs();
    assert!(rel < 1e-6, "total {} vs weighted sum {}", m.total, want);
}

#[test]
fn refine_equals_expr_loss_at_zero_corruption() {
    let model = tiny_model(7);
    let recs = tiny_corpus(6, 8);
    let rec = &recs[0];
    let zero = CorruptionConfig { p_drop: 0.0, p_swap: 0.0, p_keep: 1.0 };
    let mut rng_noise = ChaCha8Rng::seed_from_u64(9);
    let corrupted = lee_core::datagen::corrupt(&rec.seq, &mut rng_noise, &zero);
    assert_eq!(corrupted, rec.seq);

    let ids = rec.seq.ids();
    let t = ids.len() - 1;
    let dec_in = &ids[..t];
    let dec_tgt = &ids[1..];
    let mask = vec![1f32; t];

    let run = |seq: &lee_core::TokenSeq| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = model.batch_for(Some(seq), &rec.scatter).unwrap();
        let mut g = Graph::new(&model.store, true);
        let enc = model
            .encode_graph(&mut g, &batch, EncodeMode::Sample, Some(&mut rng))
            .unwrap();
        let logits = model.decode_expr_graph(&mut g, enc.z, dec_in, 1, t, None).unwrap();
        let l = loss_expr(&mut g, logits, dec_tgt, &mask).unwrap();
        g.tape.value(l)[0]
    };
    assert_eq!(run(&corrupted), run(&rec.seq));
}

#[test]
fn expr_loss_decreases_when_overfitting_a_tiny_batch() {
    let mut model = tiny_model(12);
    let recs: Vec<_> = tiny_corpus(40, 13).into_iter().take(4).collect();
    let plan = PhasePlan::with_steps([120, 0, 0, 0, 0]);
    let mut cfg = small_train_cfg(14);
    cfg.batch_size = 4;
    cfg.log_every = 10;
    let mut log = Vec::new();
    {
        let mut sink: &mut dyn std::io::Write = &mut log;
        let report = train(&mut model, &recs, &[], &plan, &cfg, Some(&mut sink)).unwrap();
        assert_eq!(report.steps_done, 120);
    }
    let lines = String::from_utf8(log).unwrap();
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let last: serde_json::Value = serde_json::from_str(lines.lines().last().unwrap()).unwrap();
    let l0 = first["loss_expr"].as_f64().unwrap();
    let l1 = last["loss_expr"].as_f64().unwrap();
    assert!(l1 < l0, "expression loss did not decrease: {l0} -> {l1}");
}

#[test]
fn early_stop_on_expression_loss() {
    let mut model = tiny_model(15);
    let recs: Vec<_> = tiny_corpus(40, 16).into_iter().take(2).collect();
    let plan = PhasePlan::with_steps([5000, 0, 0, 0, 0]);
    let mut cfg = small_train_cfg(17);
    cfg.batch_size = 2;
    cfg.stop_when_expr_below = Some(2.0);
    let report = train(&mut model, &recs, &[], &plan, &cfg, None).unwrap();
    assert!(report.stopped_early);
    assert!(report.steps_done < 5000);
}
