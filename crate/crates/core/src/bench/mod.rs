//! Benchmark harness: dataset ingestion, the split/noise/trial protocol,
//! metrics and Pareto analysis, aggregation, latent property probes, and
//! latent interpolation.

mod dataset;
mod interp;
pub mod metrics;
mod probe;
pub mod protocol;

pub use dataset::{ingest_dataset, BenchDataset};
pub use interp::{interpolate, InterpPoint};
pub use metrics::{pareto_front, r2, DEGENERATE_R2};
pub use probe::{
    encode_probe_set, linear_probe, property_label, ProbeResult, ProbeTask, Property, ALL_PROPERTIES,
};
pub use protocol::{add_noise, split, Folds, ProtocolConfig, TestFold};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("too few rows: {0}")]
    TooFewRows(usize),
    #[error("test fold read before final reporting")]
    TestFoldSealed,
    #[error("dataset `{path}`: {msg}")]
    BadDataset { path: String, msg: String },
    #[error("probe labels contain a single class")]
    SingleClassLabels,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One (dataset, eps, trial) outcome for aggregation.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub dataset: String,
    pub eps: f64,
    pub trial: usize,
    pub r2: Option<f64>,
    pub complexity: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub eps: f64,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub mean_complexity: f64,
    pub n_datasets: usize,
    pub n_trials: usize,
    pub n_failures: usize,
}

/// Aggregate trial outcomes per noise level: the group mean is the mean over
/// datasets of per-dataset trial means; the std is the sample std across
/// per-trial group means. Null trials are excluded and counted as failures.
pub fn aggregate(outcomes: &[TrialOutcome]) -> Vec<GroupSummary> {
    let mut eps_values: Vec<f64> = outcomes.iter().map(|o| o.eps).collect();
    eps_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eps_values.dedup();
    let mut out = Vec::new();
    for eps in eps_values {
        let subset: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.eps == eps).collect();
        let mut datasets: Vec<String> = subset.iter().map(|o| o.dataset.clone()).collect();
        datasets.sort();
        datasets.dedup();
        let mut trials: Vec<usize> = subset.iter().map(|o| o.trial).collect();
        trials.sort_unstable();
        trials.dedup();
        let n_failures = subset.iter().filter(|o| o.r2.is_none()).count();

        // mean over datasets of per-dataset trial means
        let mut ds_means = Vec::new();
        let mut cx_means = Vec::new();
        for ds in &datasets {
            let vals: Vec<f64> = subset
                .iter()
                .filter(|o| &o.dataset == ds)
                .filter_map(|o| o.r2)
                .collect();
            if !vals.is_empty() {
                ds_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
            let cxs: Vec<f64> = subset
                .iter()
                .filter(|o| &o.dataset == ds)
                .filter_map(|o| o.complexity.map(|c| c as f64))
                .collect();
            if !cxs.is_empty() {
                cx_means.push(cxs.iter().sum::<f64>() / cxs.len() as f64);
            }
        }
        let mean_r2 = if ds_means.is_empty() { f64::NAN } else { ds_means.iter().sum::<f64>() / ds_means.len() as f64 };
        let mean_complexity = if cx_means.is_empty() { f64::NAN } else { cx_means.iter().sum::<f64>() / cx_means.len() as f64 };

        // sample std across per-trial group means
        let mut trial_means = Vec::new();
        for &t in &trials {
            let vals: Vec<f64> = subset
                .iter()
                .filter(|o| o.trial == t)
                .filter_map(|o| o.r2)
                .collect();
            if !vals.is_empty() {
                trial_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        let std_r2 = if trial_means.len() >= 2 {
            let m = trial_means.iter().sum::<f64>() / trial_means.len() as f64;
            let var = trial_means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (trial_means.len() - 1) as f64;
            var.sqrt()
        } else {
            0.0
        };
        out.push(GroupSummary {
            eps,
            mean_r2,
            std_r2,
            mean_complexity,
            n_datasets: datasets.len(),
            n_trials: trials.len(),
            n_failures,
        });
    }
    out
}
