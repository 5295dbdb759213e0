//! Bounded candidate pool with complexity-diversity buckets and elitism.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Candidate;

/// Complexity buckets [0,5), [5,10), [10,20), [20,inf).
pub fn bucket_of(complexity: usize) -> usize {
    match complexity {
        0..=4 => 0,
        5..=9 => 1,
        10..=19 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone)]
pub struct Pool {
    members: Vec<Candidate>,
    capacity: usize,
    bucket_cap: usize,
    best_score_seen: f64,
}

impl Pool {
    pub fn new(capacity: usize) -> Self {
        Pool {
            members: Vec::new(),
            capacity,
            bucket_cap: capacity.div_ceil(4),
            best_score_seen: f64::NEG_INFINITY,
        }
    }

    pub fn members(&self) -> &[Candidate] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn bucket_cap(&self) -> usize {
        self.bucket_cap
    }

    /// Best-scored member (rank 1).
    pub fn best(&self) -> Option<&Candidate> {
        self.members.first()
    }

    pub fn best_score_seen(&self) -> f64 {
        self.best_score_seen
    }

    /// Deterministic pool order: score desc, complexity asc, token text asc.
    fn sort_key(c: &Candidate) -> (ordered::NotNanDesc, usize, String) {
        (ordered::NotNanDesc(c.score), c.complexity, c.text.clone())
    }

    /// Merge new candidates under the bucket caps. Dedup is by exact token
    /// text keeping the higher score; the global best-by-score is always
    /// retained; the best score never decreases across merges.
    pub fn merge(&mut self, incoming: Vec<Candidate>) {
        let mut all: Vec<Candidate> = std::mem::take(&mut self.members);
        all.extend(incoming);
        // dedup by token text, keeping the better-scored copy
        let mut by_text: indexmap::IndexMap<String, Candidate> = indexmap::IndexMap::new();
        for c in all {
            match by_text.get(&c.text) {
                Some(prev) if prev.score >= c.score => {}
                _ => {
                    by_text.insert(c.text.clone(), c);
                }
            }
        }
        let mut all: Vec<Candidate> = by_text.into_values().collect();
        all.sort_by(|a, b| Self::sort_key(a).partial_cmp(&Self::sort_key(b)).unwrap());
        let mut kept = Vec::with_capacity(self.capacity);
        let mut bucket_counts = [0usize; 4];
        for c in all {
            if kept.len() >= self.capacity {
                break;
            }
            let b = bucket_of(c.complexity);
            // greedy fill by score keeps the global elite first, so the
            // bucket cap never evicts it
            if bucket_counts[b] < self.bucket_cap {
                bucket_counts[b] += 1;
                kept.push(c);
            }
        }
        if let Some(best) = kept.first() {
            if best.score > self.best_score_seen {
                self.best_score_seen = best.score;
            }
        }
        self.members = kept;
    }

    /// Rank-weighted parent sampling with replacement: 1-indexed ranks with
    /// weight 1/(rank+1), so rank 1 is twice as likely as rank 3.
    pub fn select_parents(&self, k: usize, rng: &mut ChaCha8Rng) -> Vec<&Candidate> {
        assert!(!self.members.is_empty(), "cannot select parents from an empty pool");
        let weights: Vec<f64> = (1..=self.members.len()).map(|r| 1.0 / (r as f64 + 1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = self.members.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            out.push(&self.members[pick]);
        }
        out
    }

    /// Verify the structural invariants; returns a violation description.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.members.len() > self.capacity {
            return Err(format!("size {} > capacity {}", self.members.len(), self.capacity));
        }
        let mut counts = [0usize; 4];
        for c in &self.members {
            counts[bucket_of(c.complexity)] += 1;
        }
        for (b, &n) in counts.iter().enumerate() {
            if n > self.bucket_cap {
                return Err(format!("bucket {b} holds {n} > cap {}", self.bucket_cap));
            }
        }
        for w in self.members.windows(2) {
            let ka = Self::sort_key(&w[0]);
            let kb = Self::sort_key(&w[1]);
            if ka > kb {
                return Err("pool order violated".to_string());
            }
        }
        if let Some(best) = self.members.first() {
            if best.score < self.best_score_seen - 1e-12 {
                return Err(format!(
                    "best score regressed: {} < {}",
                    best.score, self.best_score_seen
                ));
            }
        }
        Ok(())
    }
}

/// Descending-order wrapper used in sort keys.
mod ordered {
    #[derive(PartialEq)]
    pub struct NotNanDesc(pub f64);

    impl PartialOrd for NotNanDesc {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            other.0.partial_cmp(&self.0)
        }
    }
}
