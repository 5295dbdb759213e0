//! SRBench-style protocol: splits, target noise, and the test-fold guard.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::BenchError;
use crate::datagen::ScatterSet;

/// Protocol constants: 75/25 train/test, then a 20% validation slice from
/// the 75%, i.e. 60/15/25 overall.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolConfig {
    pub noise: f64,
    pub n_trials: usize,
    pub alpha: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { noise: 0.0, n_trials: 10, alpha: 0.002 }
    }
}

/// Test fold wrapped in a read guard. The fold stays sealed during search;
/// it is unsealed exactly once for final reporting, and any read while
/// sealed is a protocol violation that aborts the trial.
#[derive(Debug, Clone)]
pub struct TestFold {
    data: ScatterSet,
    sealed: bool,
}

impl TestFold {
    pub fn new(data: ScatterSet) -> Self {
        TestFold { data, sealed: true }
    }

    pub fn unseal_for_final_report(&mut self) {
        self.sealed = false;
    }

    pub fn read(&self) -> Result<&ScatterSet, BenchError> {
        if self.sealed {
            return Err(BenchError::TestFoldSealed);
        }
        Ok(&self.data)
    }

    pub fn n_rows(&self) -> usize {
        self.data.n
    }
}

#[derive(Debug, Clone)]
pub struct Folds {
    pub train: ScatterSet,
    pub val: ScatterSet,
    pub test: TestFold,
}

/// Deterministic 60/15/25 row partition: disjoint, exhaustive, seeded.
pub fn split(data: &ScatterSet, seed: u64) -> Result<Folds, BenchError> {
    if data.n < 10 {
        return Err(BenchError::TooFewRows(data.n));
    }
    let mut rows: Vec<usize> = (0..data.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let n_test = data.n / 4;
    let n_trainval = data.n - n_test;
    let n_val = n_trainval / 5;
    let n_train = n_trainval - n_val;
    let train = data.select(&rows[..n_train]);
    let val = data.select(&rows[n_train..n_train + n_val]);
    let test = data.select(&rows[n_train + n_val..]);
    Ok(Folds { train, val, test: TestFold::new(test) })
}

/// Add Gaussian target noise with standard deviation proportional to the
/// training-fold target range. Noise touches train and validation targets
/// only; the test fold stays clean. `eps = 0` returns folds bit-identical.
pub fn add_noise(folds: &mut Folds, eps: f64, seed: u64) {
    if eps == 0.0 {
        return;
    }
    let finite: Vec<f64> = folds
        .train
        .y
        .iter()
        .zip(folds.train.finite.iter())
        .filter(|(_, &f)| f)
        .map(|(&y, _)| y)
        .collect();
    if finite.is_empty() {
        return;
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sigma = eps * (hi - lo);
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    for y in folds.train.y.iter_mut() {
        *y += normal.sample(&mut rng);
    }
    for y in folds.val.y.iter_mut() {
        *y += normal.sample(&mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> ScatterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| v * 3.0).collect();
        ScatterSet::new(x, y, 1, "d".into())
    }

    #[test]
    fn split_is_60_15_25_exact() {
        let d = data(100, 1);
        let folds = split(&d, 7).unwrap();
        assert_eq!(folds.train.n, 60);
        assert_eq!(folds.val.n, 15);
        assert_eq!(folds.test.n_rows(), 25);
    }

    #[test]
    fn folds_disjoint_and_exhaustive() {
        let d = data(97, 2);
        let mut folds = split(&d, 8).unwrap();
        folds.test.unseal_for_final_report();
        let mut seen: Vec<(u64, u64)> = Vec::new();
        for set in [&folds.train, &folds.val, folds.test.read().unwrap()] {
            for i in 0..set.n {
                seen.push((set.x[i].to_bits(), set.y[i].to_bits()));
            }
        }
        assert_eq!(seen.len(), 97);
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 97, "rows duplicated across folds");
    }

    #[test]
    fn split_rejects_tiny_and_varies_with_seed() {
        let d = data(5, 3);
        assert!(split(&d, 1).is_err());
        let d = data(40, 4);
        let a = split(&d, 1).unwrap();
        let b = split(&d, 2).unwrap();
        assert_ne!(a.train.x, b.train.x);
        let c = split(&d, 1).unwrap();
        assert_eq!(a.train.x, c.train.x);
    }

    #[test]
    fn noise_zero_is_identity() {
        let d = data(40, 5);
        let mut folds = split(&d, 9).unwrap();
        let before = folds.train.y.clone();
        add_noise(&mut folds, 0.0, 11);
        assert_eq!(folds.train.y, before);
    }

    #[test]
    fn noise_sigma_proportional_to_training_range() {
        // train targets with range 10 at eps=0.1 -> sigma = 1
        let x: Vec<f64> = (0..4000).map(|i| i as f64 / 400.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| v).collect();
        let d = ScatterSet::new(x, y, 1, "r".into());
        let mut folds = split(&d, 12).unwrap();
        let lo = folds.train.y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = folds.train.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let before = folds.train.y.clone();
        add_noise(&mut folds, 0.1, 13);
        let diffs: Vec<f64> = folds.train.y.iter().zip(before.iter()).map(|(a, b)| a - b).collect();
        let var = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        let sigma = var.sqrt();
        assert!((sigma - 0.1 * range).abs() < 0.05 * range, "sigma {sigma} vs {}", 0.1 * range);
    }

    #[test]
    fn noise_is_seed_deterministic_and_leaves_test_clean() {
        let d = data(80, 6);
        let run = |seed| {
            let mut folds = split(&d, 3).unwrap();
            add_noise(&mut folds, 0.05, seed);
            folds
        };
        let a = run(21);
        let b = run(21);
        assert_eq!(a.train.y, b.train.y);
        let c = run(22);
        assert_ne!(a.train.y, c.train.y);
        let mut a = a;
        let mut clean = split(&d, 3).unwrap();
        a.test.unseal_for_final_report();
        clean.test.unseal_for_final_report();
        assert_eq!(a.test.read().unwrap().y, clean.test.read().unwrap().y);
    }

    #[test]
    fn sealed_test_fold_rejects_reads() {
        let d = data(40, 7);
        let mut folds = split(&d, 5).unwrap();
        assert!(folds.test.read().is_err(), "sealed fold must refuse reads");
        folds.test.unseal_for_final_report();
        assert!(folds.test.read().is_ok());
    }
}
