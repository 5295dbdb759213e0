//! Accuracy metrics and Pareto analysis.

use super::BenchError;

/// Sentinel R^2 for a constant-target dataset that is not matched exactly.
pub const DEGENERATE_R2: f64 = -10.0;

/// Coefficient of determination 1 - SS_res / SS_tot. For constant targets:
/// 1 on an exact match, otherwise a -10 sentinel (which downstream clipping
/// treats as worst-case).
pub fn r2(y: &[f64], y_hat: &[f64]) -> Result<f64, BenchError> {
    if y.len() != y_hat.len() {
        return Err(BenchError::LengthMismatch { a: y.len(), b: y_hat.len() });
    }
    if y.len() < 2 {
        return Err(BenchError::TooFewRows(y.len()));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = y.iter().zip(y_hat.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { DEGENERATE_R2 });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Non-dominated subset of (r2, complexity) points: a point survives iff no
/// other point is at least as accurate and at most as complex, with one
/// strict. Duplicates collapse.
pub fn pareto_front(points: &[(f64, usize)]) -> Vec<(f64, usize)> {
    let mut uniq: Vec<(f64, usize)> = Vec::new();
    for &p in points {
        if !uniq.contains(&p) {
            uniq.push(p);
        }
    }
    let dominated = |p: (f64, usize), q: (f64, usize)| {
        // q dominates p
        q.0 >= p.0 && q.1 <= p.1 && (q.0 > p.0 || q.1 < p.1)
    };
    let mut out: Vec<(f64, usize)> = uniq
        .iter()
        .filter(|&&p| !uniq.iter().any(|&q| dominated(p, q)))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.1.cmp(&b.1).then(b.0.partial_cmp(&a.0).unwrap()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_hand_cases() {
        assert_eq!(r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        // mean predictor scores 0
        let y = [0.0, 1.0, 2.0];
        let mean = [1.0, 1.0, 1.0];
        assert_eq!(r2(&y, &mean).unwrap(), 0.0);
        // y=(0,1,2), yhat=(0,1,4) -> 1 - 4/2 = -1
        assert_eq!(r2(&[0.0, 1.0, 2.0], &[0.0, 1.0, 4.0]).unwrap(), -1.0);
    }

    #[test]
    fn r2_rejects_bad_inputs() {
        assert!(r2(&[1.0, 2.0], &[1.0]).is_err());
        assert!(r2(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn r2_constant_targets() {
        assert_eq!(r2(&[5.0, 5.0, 5.0], &[5.0, 5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(r2(&[5.0, 5.0, 5.0], &[5.0, 5.1, 5.0]).unwrap(), DEGENERATE_R2);
    }

    #[test]
    fn r2_invariant_under_row_permutation() {
        let y = [0.3, -1.2, 4.5, 2.2, 0.0];
        let yh = [0.1, -1.0, 4.0, 2.0, 0.4];
        let a = r2(&y, &yh).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let yhp: Vec<f64> = perm.iter().map(|&i| yh[i]).collect();
        assert!((a - r2(&yp, &yhp).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn pareto_domination() {
        let front = pareto_front(&[(0.9, 10), (0.8, 20)]);
        assert_eq!(front, vec![(0.9, 10)]);
        let front = pareto_front(&[(0.9, 10), (0.95, 50)]);
        assert_eq!(front.len(), 2);
        let front = pareto_front(&[(0.9, 10), (0.9, 10), (0.9, 10)]);
        assert_eq!(front, vec![(0.9, 10)]);
    }

    #[test]
    fn pareto_idempotent_and_order_independent() {
        let pts = vec![(0.5, 3), (0.7, 8), (0.7, 3), (0.2, 1), (0.9, 30), (0.1, 1)];
        let a = pareto_front(&pts);
        let again = pareto_front(&a);
        assert_eq!(a, again);
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(pareto_front(&rev), a);
    }
}
