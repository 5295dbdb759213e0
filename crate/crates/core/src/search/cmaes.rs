//! Covariance matrix adaptation evolution strategy, (mu/mu_w, lambda) with
//! cumulative step-size adaptation. Used as the latent-space search baseline.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Cmaes {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: Vec<f64>,
    sigma: f64,
    cov: Vec<f64>,
    p_sigma: Vec<f64>,
    p_c: Vec<f64>,
    eig_vecs: Vec<f64>,
    eig_vals: Vec<f64>,
    generation: u64,
    best_x: Vec<f64>,
    best_f: f64,
}

impl Cmaes {
    pub fn new(mean: Vec<f64>, sigma0: f64, lambda: usize) -> Self {
        let dim = mean.len();
        let mu = lambda / 2;
        let mut weights: Vec<f64> = (1..=mu)
            .map(|i| ((mu as f64) + 0.5).ln() - (i as f64).ln())
            .collect();
        let wsum: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= wsum;
        }
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let d = dim as f64;
        let c_sigma = (mu_eff + 2.0) / (d + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (d + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / d) / (d + 4.0 + 2.0 * mu_eff / d);
        let c_1 = 2.0 / ((d + 1.3) * (d + 1.3) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((d + 2.0) * (d + 2.0) + mu_eff));
        let chi_n = d.sqrt() * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d));
        let mut cov = vec![0f64; dim * dim];
        let mut eig_vecs = vec![0f64; dim * dim];
        for i in 0..dim {
            cov[i * dim + i] = 1.0;
            eig_vecs[i * dim + i] = 1.0;
        }
        Cmaes {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean,
            sigma: sigma0,
            cov,
            p_sigma: vec![0f64; dim],
            p_c: vec![0f64; dim],
            eig_vecs,
            eig_vals: vec![1f64; dim],
            generation: 0,
            best_x: vec![0f64; dim],
            best_f: f64::INFINITY,
        }
    }

    pub fn population(&self) -> usize {
        self.lambda
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.best_x, self.best_f)
    }

    /// Sample one generation of candidates.
    pub fn ask(&mut self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            // x = mean + sigma * B * (sqrt(D) .* n)
            let n: Vec<f64> = (0..self.dim).map(|_| normal.sample(rng)).collect();
            let mut x = self.mean.clone();
            for i in 0..self.dim {
                let mut acc = 0f64;
                for j in 0..self.dim {
                    acc += self.eig_vecs[i * self.dim + j] * self.eig_vals[j].max(0.0).sqrt() * n[j];
                }
                x[i] += self.sigma * acc;
            }
            out.push(x);
        }
        out
    }

    /// Rank the generation by fitness (minimization) and update all state.
    pub fn tell(&mut self, solutions: &[Vec<f64>], fitness: &[f64]) {
        assert_eq!(solutions.len(), fitness.len());
        self.generation += 1;
        let mut order: Vec<usize> = (0..solutions.len()).collect();
        order.sort_by(|&a, &b| fitness[a].partial_cmp(&fitness[b]).unwrap_or(std::cmp::Ordering::Equal));
        if fitness[order[0]] < self.best_f {
            self.best_f = fitness[order[0]];
            self.best_x = solutions[order[0]].clone();
        }
        let d = self.dim;
        let old_mean = self.mean.clone();
        let mut new_mean = vec![0f64; d];
        for (wi, &ix) in self.weights.iter().zip(order.iter()) {
            for i in 0..d {
                new_mean[i] += wi * solutions[ix][i];
            }
        }
        // mean displacement in the isotropic frame: C^{-1/2} (m' - m) / sigma
        let diff: Vec<f64> = (0..d).map(|i| (new_mean[i] - old_mean[i]) / self.sigma).collect();
        let c_inv_sqrt_diff = {
            // B D^{-1/2} B^T diff
            let mut bt = vec![0f64; d];
            for j in 0..d {
                let mut acc = 0f64;
                for i in 0..d {
                    acc += self.eig_vecs[i * d + j] * diff[i];
                }
                bt[j] = acc / self.eig_vals[j].max(1e-30).sqrt();
            }
            let mut out = vec![0f64; d];
            for i in 0..d {
                let mut acc = 0f64;
                for j in 0..d {
                    acc += self.eig_vecs[i * d + j] * bt[j];
                }
                out[i] = acc;
            }
            out
        };
        for i in 0..d {
            self.p_sigma[i] = (1.0 - self.c_sigma) * self.p_sigma[i]
                + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * c_inv_sqrt_diff[i];
        }
        let ps_norm = self.p_sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
        let h_sigma = if ps_norm / (1.0 - (1.0 - self.c_sigma).powi(2 * self.generation as i32)).sqrt()
            < (1.4 + 2.0 / (d as f64 + 1.0)) * self.chi_n
        {
            1.0
        } else {
            0.0
        };
        for i in 0..d {
            self.p_c[i] = (1.0 - self.c_c) * self.p_c[i]
                + h_sigma * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt() * diff[i];
        }
        // covariance update: rank-1 plus rank-mu
        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        for i in 0..d {
            for j in 0..d {
                let mut rank_mu = 0f64;
                for (wi, &ix) in self.weights.iter().zip(order.iter()) {
                    let yi = (solutions[ix][i] - old_mean[i]) / self.sigma;
                    let yj = (solutions[ix][j] - old_mean[j]) / self.sigma;
                    rank_mu += wi * yi * yj;
                }
                let c_old = self.cov[i * d + j];
                self.cov[i * d + j] = (1.0 - self.c_1 - self.c_mu) * c_old
                    + self.c_1 * (self.p_c[i] * self.p_c[j] + delta_h * c_old)
                    + self.c_mu * rank_mu;
            }
        }
        self.mean = new_mean;
        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        // refresh the eigendecomposition
        let (vals, vecs) = symmetric_eigen(&self.cov, d);
        self.eig_vals = vals;
        self.eig_vecs = vecs;
    }
}

/// Jacobi eigendecomposition of a symmetric matrix (row-major `d x d`).
/// Returns (eigenvalues, eigenvectors as columns of a row-major matrix).
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0f64; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                off += m[i * d + j] * m[i * d + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals: Vec<f64> = (0..d).map(|i| m[i * d + i]).collect();
    (vals, v)
}
