//! Stochastic expression grammar, scatter generation, token corruption, and
//! corpus construction with hash-deterministic train/val/test splits.

use std::collections::BTreeSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{
    evaluate, parse, tokenize, Expr, Token, TokenSeq, ALL_BINARY, ALL_UNARY, OVERFLOW_GUARD,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("corruption probabilities must sum to 1, got {0}")]
    BadCorruptionWeights(f64),
    #[error("constant mixture weights must sum to 1, got {0}")]
    BadMixtureWeights(f64),
    #[error("k = {k} requires more leaves than b_max = {b_max} allows")]
    TooManyVariables { k: usize, b_max: usize },
    #[error("corpus file `{path}`: {msg}")]
    BadCorpus { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Expr(#[from] crate::expr::ExprError),
}

/// Physics-constant catalogue for the 10% mixture component.
pub const PHYSICS_CONSTANTS: [f64; 8] = [
    std::f64::consts::PI,
    std::f64::consts::E,
    std::f64::consts::TAU,
    0.5,
    std::f64::consts::SQRT_2,
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::LN_2,
    1.618033988749895,
];

#[derive(Debug, Clone)]
pub struct GrammarConfig {
    pub b_max: usize,
    pub u_max: usize,
    pub k_max: usize,
    /// Constant mixture weights: integer, log-uniform, physics.
    pub w_int: f64,
    pub w_logu: f64,
    pub w_phys: f64,
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub n_scatter: usize,
    /// Probability that a non-coverage leaf becomes a constant.
    pub leaf_const_prob: f64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            b_max: 4,
            u_max: 4,
            k_max: 3,
            w_int: 0.6,
            w_logu: 0.3,
            w_phys: 0.1,
            domain_lo: -10.0,
            domain_hi: 10.0,
            n_scatter: 200,
            leaf_const_prob: 0.4,
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let s = self.w_int + self.w_logu + self.w_phys;
        if (s - 1.0).abs() > 1e-9 {
            return Err(DatagenError::BadMixtureWeights(s));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorruptionConfig {
    pub p_drop: f64,
    pub p_swap: f64,
    pub p_keep: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig { p_drop: 0.15, p_swap: 0.10, p_keep: 0.75 }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let s = self.p_drop + self.p_swap + self.p_keep;
        if (s - 1.0).abs() > 1e-9 {
            return Err(DatagenError::BadCorruptionWeights(s));
        }
        Ok(())
    }
}

/// Observation set: row-major X, targets, and finite flags. Rows with
/// non-finite y are flagged, never dropped at storage time.
#[derive(Debug, Clone)]
pub struct ScatterSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub finite: Vec<bool>,
    pub n: usize,
    pub k: usize,
    pub provenance: String,
}

impl ScatterSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>, k: usize, provenance: String) -> Self {
        let n = y.len();
        debug_assert_eq!(x.len(), n * k);
        let finite = y.iter().map(|&v| v.is_finite() && v.abs() <= OVERFLOW_GUARD).collect();
        ScatterSet { x, y, finite, n, k, provenance }
    }

    pub fn finite_count(&self) -> usize {
        self.finite.iter().filter(|&&f| f).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    /// New set from the given row indices.
    pub fn select(&self, rows: &[usize]) -> ScatterSet {
        let mut x = Vec::with_capacity(rows.len() * self.k);
        let mut y = Vec::with_capacity(rows.len());
        let mut finite = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.y[r]);
            finite.push(self.finite[r]);
        }
        ScatterSet { x, y, finite, n: rows.len(), k: self.k, provenance: self.provenance.clone() }
    }
}

#[derive(Debug, Default, Clone)]
pub struct GenStats {
    pub resampled: u64,
    pub coverage_relaxed: u64,
}

/// Grammar-driven expression sampler.
pub struct Sampler {
    pub cfg: GrammarConfig,
    pub stats: GenStats,
}

/// Scaffold for the binary-tree-first sampling protocol.
enum Scaffold {
    Leaf,
    Node(Box<Scaffold>, Box<Scaffold>),
}

fn scaffold(n_internal: usize, rng: &mut ChaCha8Rng) -> Scaffold {
    if n_internal == 0 {
        return Scaffold::Leaf;
    }
    let left = rng.gen_range(0..n_internal);
    Scaffold::Node(
        Box::new(scaffold(left, rng)),
        Box::new(scaffold(n_internal - 1 - left, rng)),
    )
}

impl Sampler {
    pub fn new(cfg: GrammarConfig) -> Self {
        Sampler { cfg, stats: GenStats::default() }
    }

    /// Draw from the constant mixture: 60% integer in [-10, 10], 30%
    /// log-uniform magnitude in [1e-2, 1e2] with random sign, 10% physics.
    pub fn sample_constant(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.gen();
        if u < self.cfg.w_int {
            rng.gen_range(-10i32..=10) as f64
        } else if u < self.cfg.w_int + self.cfg.w_logu {
            let lo = 0.01f64.ln();
            let hi = 100f64.ln();
            let mag = rng.gen_range(lo..hi).exp();
            if rng.gen::<bool>() {
                mag
            } else {
                -mag
            }
        } else {
            *PHYSICS_CONSTANTS.choose(rng).unwrap()
        }
    }

    /// Sample an expression over exactly `k` variables: binary scaffold
    /// first, unary attachments, leaf fill with variable coverage, and
    /// re-sampling while the fixed query grid yields too few finite rows.
    pub fn sample_expression(&mut self, rng: &mut ChaCha8Rng, k: usize) -> Result<Expr, DatagenError> {
        if k == 0 || k > self.cfg.k_max {
            return Err(DatagenError::TooManyVariables { k, b_max: self.cfg.b_max });
        }
        if k > self.cfg.b_max + 1 {
            return Err(DatagenError::TooManyVariables { k, b_max: self.cfg.b_max });
        }
        let (grid, rows) = query_grid(k, self.cfg.domain_lo, self.cfg.domain_hi);
        let mut last = None;
        for attempt in 0..200 {
            let coverage = attempt < 100;
            if attempt == 100 {
                self.stats.coverage_relaxed += 1;
            }
            let e = self.draw(rng, k, coverage);
            let (_, ok) = evaluate(&e, &grid, rows, k)?;
            let finite = ok.iter().filter(|&&f| f).count();
            if finite * 4 >= rows {
                return Ok(e);
            }
            self.stats.resampled += 1;
            last = Some(e);
        }
        Ok(last.expect("at least one draw"))
    }

    fn draw(&self, rng: &mut ChaCha8Rng, k: usize, coverage: bool) -> Expr {
        let b_lo = if coverage { (k - 1).max(1) } else { 1 };
        let b = rng.gen_range(b_lo..=self.cfg.b_max.max(b_lo));
        let tree = scaffold(b, rng);
        let mut leaves = Vec::new();
        let mut expr = self.fill(&tree, rng, k, &mut leaves);
        // coverage: route each declared variable to a distinct leaf
        if coverage {
            let mut slots: Vec<usize> = (0..leaves.len()).collect();
            slots.shuffle(rng);
            for (vi, &slot) in slots.iter().take(k).enumerate() {
                assign_leaf(&mut expr, leaves[slot], Expr::Var(vi as u8));
            }
        }
        // unary attachments
        let u = rng.gen_range(0..=self.cfg.u_max);
        for _ in 0..u {
            let count = crate::expr::node_count(&expr);
            let pos = rng.gen_range(0..count);
            let op = *ALL_UNARY.choose(rng).unwrap();
            expr = wrap_at(&expr, pos, op, &mut 0).0;
        }
        expr
    }

    /// Build from the scaffold, recording leaf pre-order positions.
    fn fill(&self, s: &Scaffold, rng: &mut ChaCha8Rng, k: usize, leaves: &mut Vec<usize>) -> Expr {
        let mut pre = 0usize;
        self.fill_inner(s, rng, k, leaves, &mut pre)
    }

    fn fill_inner(
        &self,
        s: &Scaffold,
        rng: &mut ChaCha8Rng,
        k: usize,
        leaves: &mut Vec<usize>,
        pre: &mut usize,
    ) -> Expr {
        match s {
            Scaffold::Leaf => {
                leaves.push(*pre);
                *pre += 1;
                if rng.gen::<f64>() < self.cfg.leaf_const_prob {
                    Expr::Const(self.sample_constant(rng))
                } else {
                    Expr::Var(rng.gen_range(0..k) as u8)
                }
            }
            Scaffold::Node(l, r) => {
                let op = *ALL_BINARY.choose(rng).unwrap();
                *pre += 1;
                let a = self.fill_inner(l, rng, k, leaves, pre);
                let b = self.fill_inner(r, rng, k, leaves, pre);
                Expr::binary(op, a, b)
            }
        }
    }
}

/// Replace the node at pre-order position `target` with `value`.
fn assign_leaf(e: &mut Expr, target: usize, value: Expr) {
    let mut pre = 0usize;
    replace_at(e, target, &value, &mut pre);
}

fn replace_at(e: &mut Expr, target: usize, value: &Expr, pre: &mut usize) -> bool {
    if *pre == target {
        *e = value.clone();
        return true;
    }
    *pre += 1;
    match e {
        Expr::Var(_) | Expr::Const(_) => false,
        Expr::Unary(_, a) => replace_at(a, target, value, pre),
        Expr::Binary(_, a, b) => {
            if replace_at(a, target, value, pre) {
                true
            } else {
                replace_at(b, target, value, pre)
            }
        }
    }
}

/// Wrap the node at pre-order position `target` in `op`.
fn wrap_at(e: &Expr, target: usize, op: crate::expr::UnaryOp, pre: &mut usize) -> (Expr, bool) {
    if *pre == target {
        return (Expr::unary(op, e.clone()), true);
    }
    *pre += 1;
    match e {
        Expr::Var(_) | Expr::Const(_) => (e.clone(), false),
        Expr::Unary(o, a) => {
            let (a, hit) = wrap_at(a, target, op, pre);
            (Expr::Unary(*o, Box::new(a)), hit)
        }
        Expr::Binary(o, a, b) => {
            let (a, hit) = wrap_at(a, target, op, pre);
            if hit {
                return (Expr::Binary(*o, Box::new(a), b.clone()), true);
            }
            let (b, hit) = wrap_at(b, target, op, pre);
            (Expr::Binary(*o, Box::new(a), Box::new(b)), hit)
        }
    }
}

/// Fixed validation grid: 64 uniform points per axis, lattice clipped to
/// 1024 rows by deterministic striding.
pub fn query_grid(k: usize, lo: f64, hi: f64) -> (Vec<f64>, usize) {
    const PER_AXIS: usize = 64;
    const MAX_ROWS: usize = 1024;
    let total = PER_AXIS.checked_pow(k as u32).unwrap_or(usize::MAX).min(1 << 24);
    let rows = total.min(MAX_ROWS);
    let stride = (total / rows).max(1);
    let step = (hi - lo) / (PER_AXIS - 1) as f64;
    let mut out = Vec::with_capacity(rows * k);
    for r in 0..rows {
        let mut ix = r * stride;
        for _ in 0..k {
            out.push(lo + (ix % PER_AXIS) as f64 * step);
            ix /= PER_AXIS;
        }
    }
    (out, rows)
}

/// Uniform scatter on the configured box, evaluated with finite flags.
pub fn sample_scatter(
    expr: &Expr,
    rng: &mut ChaCha8Rng,
    n: usize,
    k: usize,
    lo: f64,
    hi: f64,
    provenance: &str,
) -> Result<ScatterSet, DatagenError> {
    let mut x = Vec::with_capacity(n * k);
    for _ in 0..n * k {
        x.push(rng.gen_range(lo..hi));
    }
    let (y, _) = evaluate(expr, &x, n, k)?;
    Ok(ScatterSet::new(x, y, k, provenance.to_string()))
}

/// Corrupt interior tokens: drop / swap-with-random-vocab-token / keep.
/// Framing tokens are untouched and PAD/BOS/EOS are never swap targets.
/// The output may be unparseable; it is encoder input, never parsed.
pub fn corrupt(seq: &TokenSeq, rng: &mut ChaCha8Rng, cfg: &CorruptionConfig) -> TokenSeq {
    let mut out = Vec::with_capacity(seq.len());
    out.push(Token::Bos);
    for &tok in seq.interior() {
        let u: f64 = rng.gen();
        if u < cfg.p_drop {
            continue;
        } else if u < cfg.p_drop + cfg.p_swap {
            // uniform over the vocabulary minus {PAD, BOS, EOS}
            let id = rng.gen_range(3..crate::expr::VOCAB_SIZE as u32);
            out.push(Token::from_id(id).expect("valid vocab id"));
        } else {
            out.push(tok);
        }
    }
    out.push(Token::Eos);
    TokenSeq(out)
}

const CORPUS_MAGIC: &str = "LEE-CORPUS v1";

fn fnv1a64(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn encode_block(scatter: &ScatterSet) -> String {
    let mut bytes = Vec::with_capacity(8 + 4 * (scatter.x.len() + scatter.y.len()));
    bytes.extend_from_slice(&(scatter.k as u32).to_le_bytes());
    bytes.extend_from_slice(&(scatter.n as u32).to_le_bytes());
    for &v in &scatter.x {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in &scatter.y {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_block(b64: &str, provenance: &str) -> Option<ScatterSet> {
    let bytes = B64.decode(b64.trim()).ok()?;
    if bytes.len() < 8 {
        return None;
    }
    let k = u32::from_le_bytes(bytes[0..4].try_into().ok()?) as usize;
    let n = u32::from_le_bytes(bytes[4..8].try_into().ok()?) as usize;
    if bytes.len() != 8 + 4 * (n * k + n) {
        return None;
    }
    let mut x = Vec::with_capacity(n * k);
    let mut off = 8;
    for _ in 0..n * k {
        x.push(f32::from_le_bytes(bytes[off..off + 4].try_into().ok()?) as f64);
        off += 4;
    }
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        y.push(f32::from_le_bytes(bytes[off..off + 4].try_into().ok()?) as f64);
        off += 4;
    }
    Some(ScatterSet::new(x, y, k, provenance.to_string()))
}

#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub duplicates: usize,
    pub coverage_relaxed: u64,
}

/// Build a corpus of `n_total` unique expressions under `out_dir` as
/// `train.lee` / `val.lee` / `test.lee`. Dedup is by canonical token text;
/// the 80/10/10 split assignment is deterministic in the record hash.
pub fn build_corpus(
    cfg: &GrammarConfig,
    n_total: usize,
    seed: u64,
    out_dir: &Path,
    provenance: &str,
) -> Result<CorpusStats, DatagenError> {
    cfg.validate()?;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::fs::create_dir_all(out_dir)?;
    let header = format!("{CORPUS_MAGIC} k_max={} n_scatter={}", cfg.k_max, cfg.n_scatter);
    let mut writers = Vec::new();
    for name in ["train.lee", "val.lee", "test.lee"] {
        let f = std::fs::File::create(out_dir.join(name))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{header}")?;
        for line in provenance.lines() {
            writeln!(w, "# {line}")?;
        }
        writers.push(w);
    }
    let mut sampler = Sampler::new(cfg.clone());
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut stats = CorpusStats::default();
    let mut guard = 0usize;
    while seen.len() < n_total && guard < n_total * 50 {
        guard += 1;
        let k = rng.gen_range(1..=cfg.k_max);
        let expr = sampler.sample_expression(&mut rng, k)?;
        let seq = tokenize(&expr);
        let text = seq.to_text();
        if !seen.insert(text.clone()) {
            stats.duplicates += 1;
            continue;
        }
        let scatter = sample_scatter(
            &expr,
            &mut rng,
            cfg.n_scatter,
            k,
            cfg.domain_lo,
            cfg.domain_hi,
            &text,
        )?;
        let h = fnv1a64(text.as_bytes()) % 10;
        let w = match h {
            0..=7 => {
                stats.train += 1;
                &mut writers[0]
            }
            8 => {
                stats.val += 1;
                &mut writers[1]
            }
            _ => {
                stats.test += 1;
                &mut writers[2]
            }
        };
        writeln!(w, "{} | {}", text, encode_block(&scatter))?;
    }
    for mut w in writers {
        w.flush()?;
    }
    stats.coverage_relaxed = sampler.stats.coverage_relaxed;
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct CorpusRecord {
    pub text: String,
    pub seq: TokenSeq,
    pub expr: Expr,
    pub scatter: ScatterSet,
}

/// Load one corpus split; every record is round-tripped through `parse`.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, DatagenError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let pstr = path.display().to_string();
    let mut out = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            if !line.starts_with(CORPUS_MAGIC) {
                return Err(DatagenError::BadCorpus { path: pstr, msg: "missing header".into() });
            }
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (text, block) = line.split_once(" | ").ok_or_else(|| DatagenError::BadCorpus {
            path: pstr.clone(),
            msg: format!("line {}: missing ` | ` separator", ln + 1),
        })?;
        let seq = TokenSeq::from_text(text).map_err(|e| DatagenError::BadCorpus {
            path: pstr.clone(),
            msg: format!("line {}: {e}", ln + 1),
        })?;
        let expr = parse(&seq).map_err(|e| DatagenError::BadCorpus {
            path: pstr.clone(),
            msg: format!("line {}: {e}", ln + 1),
        })?;
        let scatter = decode_block(block, text).ok_or_else(|| DatagenError::BadCorpus {
            path: pstr.clone(),
            msg: format!("line {}: bad scatter block", ln + 1),
        })?;
        out.push(CorpusRecord { text: text.to_string(), seq, expr, scatter });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn constant_mixture_frequencies() {
        let sampler = Sampler::new(GrammarConfig::default());
        let mut r = rng(1);
        let n = 1_000_000usize;
        let mut n_int = 0usize;
        let mut n_phys = 0usize;
        let mut n_logu = 0usize;
        for _ in 0..n {
            let c = sampler.sample_constant(&mut r);
            if PHYSICS_CONSTANTS.iter().any(|&p| p == c) {
                n_phys += 1;
            } else if c == c.round() && (-10.0..=10.0).contains(&c) {
                n_int += 1;
            } else {
                assert!((0.01..=100.0).contains(&c.abs()), "log-uniform support violated: {c}");
                n_logu += 1;
            }
        }
        let f_int = n_int as f64 / n as f64;
        assert!((0.59..=0.61).contains(&f_int), "integer fraction {f_int}");
        // chi-squared against (0.6, 0.3, 0.1); df = 2, p = 0.01 threshold 9.21
        let expect = [0.6 * n as f64, 0.3 * n as f64, 0.1 * n as f64];
        let got = [n_int as f64, n_logu as f64, n_phys as f64];
        let chi2: f64 = expect
            .iter()
            .zip(got.iter())
            .map(|(&e, &o)| (o - e) * (o - e) / e)
            .sum();
        assert!(chi2 < 9.21, "chi2 {chi2}");
    }

    #[test]
    fn physics_catalogue_contains_pi_and_e() {
        assert!(PHYSICS_CONSTANTS.contains(&std::f64::consts::PI));
        assert!(PHYSICS_CONSTANTS.contains(&std::f64::consts::E));
    }

    #[test]
    fn expression_sampling_coverage_and_caps() {
        let mut sampler = Sampler::new(GrammarConfig::default());
        let mut r = rng(2);
        for _ in 0..2_000 {
            let e = sampler.sample_expression(&mut r, 3).unwrap();
            let vars = e.vars_used();
            assert!(vars.contains(&0) && vars.contains(&1) && vars.contains(&2), "coverage violated: {e:?}");
            let mut ops = Vec::new();
            e.collect_ops(&mut ops);
            let b = ops.iter().filter(|o| o.is_binary()).count();
            assert!((2..=4).contains(&b), "binary count {b}");
            let u = ops.len() - b;
            assert!(u <= 4, "unary count {u}");
        }
        assert_eq!(sampler.stats.coverage_relaxed, 0);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let draw = |seed| {
            let mut sampler = Sampler::new(GrammarConfig::default());
            let mut r = rng(seed);
            (0..20)
                .map(|_| tokenize(&sampler.sample_expression(&mut r, 2).unwrap()).to_text())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn scatter_constant_expression() {
        let mut r = rng(3);
        let s = sample_scatter(&Expr::con(5.0), &mut r, 50, 1, -10.0, 10.0, "t").unwrap();
        assert!(s.y.iter().all(|&v| v == 5.0));
        assert_eq!(s.finite_count(), 50);
    }

    #[test]
    fn scatter_shape_and_domain() {
        let mut r = rng(4);
        let e = Expr::add(Expr::var(0), Expr::var(1));
        let s = sample_scatter(&e, &mut r, 200, 2, -10.0, 10.0, "t").unwrap();
        assert_eq!(s.n, 200);
        assert_eq!(s.k, 2);
        assert_eq!(s.x.len(), 400);
        assert!(s.x.iter().all(|&v| (-10.0..10.0).contains(&v)));
    }

    #[test]
    fn scatter_poles_flagged() {
        let e = Expr::div(Expr::con(1.0), Expr::var(0));
        let x = vec![0.0, 1e-40, 1.0, 2.0];
        let (y, _) = evaluate(&e, &x, 4, 1).unwrap();
        let s = ScatterSet::new(x, y, 1, "t".into());
        assert_eq!(s.finite, vec![false, false, true, true]);
    }

    #[test]
    fn corrupt_identity_when_probabilities_zero() {
        let e = Expr::add(Expr::var(0), Expr::con(1.0));
        let seq = tokenize(&e);
        let cfg = CorruptionConfig { p_drop: 0.0, p_swap: 0.0, p_keep: 1.0 };
        let mut r = rng(6);
        assert_eq!(corrupt(&seq, &mut r, &cfg), seq);
    }

    #[test]
    fn corrupt_empty_interior_preserves_framing() {
        let seq = TokenSeq(vec![Token::Bos, Token::Eos]);
        let mut r = rng(7);
        assert_eq!(corrupt(&seq, &mut r, &CorruptionConfig::default()), seq);
    }

    #[test]
    fn corrupt_keep_fraction_and_swap_targets() {
        let inner: Vec<Token> = (0..100_000).map(|i| Token::Var((i % 3) as u8)).collect();
        let mut tokens = vec![Token::Bos];
        tokens.extend(inner);
        tokens.push(Token::Eos);
        let seq = TokenSeq(tokens);
        let mut r = rng(8);
        let out = corrupt(&seq, &mut r, &CorruptionConfig::default());
        assert_eq!(out.0.first(), Some(&Token::Bos));
        assert_eq!(out.0.last(), Some(&Token::Eos));
        let kept = out
            .interior()
            .iter()
            .filter(|t| matches!(t, Token::Var(_)))
            .count();
        // swaps can also land on a variable token; bound the drift loosely
        let frac = kept as f64 / 100_000.0;
        assert!((0.73..=0.785).contains(&frac), "kept fraction {frac}");
        for t in out.interior() {
            assert!(!matches!(t, Token::Pad | Token::Bos | Token::Eos), "illegal token {t:?}");
        }
    }

    #[test]
    fn corpus_round_trips_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GrammarConfig { k_max: 2, n_scatter: 16, ..Default::default() };
        let stats = build_corpus(&cfg, 500, 42, dir.path(), "test run").unwrap();
        assert_eq!(stats.train + stats.val + stats.test, 500);
        // hash split is binomial around 80/10/10
        assert!((350..=450).contains(&stats.train), "train {}", stats.train);
        let recs = read_corpus(&dir.path().join("train.lee")).unwrap();
        assert_eq!(recs.len(), stats.train);
        for rec in &recs {
            assert_eq!(tokenize(&rec.expr).to_text(), rec.text);
            assert_eq!(rec.scatter.n, 16);
        }
    }

    #[test]
    fn corpus_rebuild_is_byte_identical() {
        let cfg = GrammarConfig { k_max: 2, n_scatter: 8, ..Default::default() };
        let gen = || {
            let dir = tempfile::tempdir().unwrap();
            build_corpus(&cfg, 200, 11, dir.path(), "prov").unwrap();
            std::fs::read(dir.path().join("train.lee")).unwrap()
        };
        assert_eq!(gen(), gen());
    }

    #[test]
    fn query_grid_caps_rows() {
        let (g1, n1) = query_grid(1, -10.0, 10.0);
        assert_eq!(n1, 64);
        assert_eq!(g1.len(), 64);
        let (_, n2) = query_grid(2, -10.0, 10.0);
        assert_eq!(n2, 1024);
        let (_, n3) = query_grid(3, -10.0, 10.0);
        assert_eq!(n3, 1024);
    }
}
