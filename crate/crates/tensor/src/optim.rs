use std::collections::HashMap;

use indexmap::IndexMap;

use crate::store::ParamStore;

/// Decoupled weight-decay Adam (AdamW).
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Default, Clone)]
pub struct StepStats {
    /// Parameters skipped this step because their gradient was non-finite.
    pub skipped: Vec<String>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        AdamW { beta1, beta2, eps: 1e-8, weight_decay, step: 0, moments: HashMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Frozen parameters are simply absent from `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &IndexMap<String, Vec<f32>>, lr: f64) -> StepStats {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut stats = StepStats::default();
        for (name, grad) in grads {
            if grad.iter().any(|g| !g.is_finite()) {
                stats.skipped.push(name.clone());
                continue;
            }
            let param = match store.get_mut(name) {
                Some(p) => p,
                None => continue,
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0f64; grad.len()], vec![0f64; grad.len()]));
            for i in 0..grad.len() {
                let g = grad[i] as f64;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let p = param.data[i] as f64;
                param.data[i] = (p - lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p)) as f32;
            }
        }
        stats
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at the final step.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> Self {
        CosineSchedule { lr_max, lr_min, total_steps }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step == 0 || self.total_steps <= 1 {
            return self.lr_max;
        }
        if step >= self.total_steps - 1 {
            return self.lr_min;
        }
        let frac = step as f64 / (self.total_steps - 1) as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}
