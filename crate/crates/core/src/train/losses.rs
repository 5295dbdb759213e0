//! The five training losses, built on the graph so every term is
//! differentiable end to end.

use lee_tensor::{Graph, TensorId};

use super::TrainError;

/// Mean next-token cross-entropy over non-padding positions.
pub fn loss_expr(
    g: &mut Graph,
    logits: TensorId,
    targets: &[u32],
    pad_mask: &[f32],
) -> Result<TensorId, TrainError> {
    if pad_mask.iter().all(|&m| m == 0.0) {
        return Err(TrainError::AllPadTarget);
    }
    Ok(g.tape.masked_cross_entropy(logits, targets, pad_mask)?)
}

/// Scale-invariant MAE over the finite index set:
/// mean over finite rows of |yhat - y| / max(|y|, 1).
/// Returns `None` when the finite set is empty (the term contributes 0).
pub fn loss_eval(
    g: &mut Graph,
    yhat: TensorId,
    y: &[f32],
    finite: &[f32],
) -> Result<Option<TensorId>, TrainError> {
    if finite.iter().all(|&m| m == 0.0) {
        return Ok(None);
    }
    let shape = g.tape.shape(yhat).to_vec();
    let yt = g.tape.leaf(&shape, y.to_vec())?;
    let denom: Vec<f32> = y.iter().map(|&v| v.abs().max(1.0)).collect();
    let dt = g.tape.leaf(&shape, denom)?;
    let mask = g.tape.leaf(&shape, finite.to_vec())?;
    let diff = g.tape.sub(yhat, yt)?;
    let a = g.tape.abs(diff);
    let scaled = g.tape.div(a, dt)?;
    Ok(Some(g.tape.masked_mean(scaled, mask)?))
}

/// Standard VAE KL to N(0, I), summed over latent dims, mean over the batch:
/// 1/2 sum_d (mu_d^2 + sigma_d^2 - log sigma_d^2 - 1).
pub fn loss_kl(g: &mut Graph, mu: TensorId, logvar: TensorId) -> Result<TensorId, TrainError> {
    let b = g.tape.shape(mu)[0] as f64;
    let mu2 = g.tape.square(mu)?;
    let var = g.tape.exp(logvar);
    let s = g.tape.add(mu2, var)?;
    let s = g.tape.sub(s, logvar)?;
    let s = g.tape.affine(s, 1.0, -1.0);
    let total = g.tape.sum_all(s);
    Ok(g.tape.scale(total, 0.5 / b))
}

/// Conditional KL between the joint posterior q and the scatter-only branch
/// p, with stop-gradient on p: D_KL(q || sg[p]) for diagonal Gaussians,
/// summed over dims, mean over the batch. Gradient flows only into q.
pub fn loss_align(
    g: &mut Graph,
    mu_q: TensorId,
    logvar_q: TensorId,
    mu_p: TensorId,
    logvar_p: TensorId,
) -> Result<TensorId, TrainError> {
    let b = g.tape.shape(mu_q)[0] as f64;
    let mu_p = g.tape.detach(mu_p);
    let logvar_p = g.tape.detach(logvar_p);
    let var_q = g.tape.exp(logvar_q);
    let var_p = g.tape.exp(logvar_p);
    let dmu = g.tape.sub(mu_q, mu_p)?;
    let dmu2 = g.tape.square(dmu)?;
    let num = g.tape.add(var_q, dmu2)?;
    let ratio = g.tape.div(num, var_p)?;
    let logterm = g.tape.sub(logvar_p, logvar_q)?;
    let s = g.tape.add(logterm, ratio)?;
    let s = g.tape.affine(s, 1.0, -1.0);
    let total = g.tape.sum_all(s);
    Ok(g.tape.scale(total, 0.5 / b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lee_tensor::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph(store: &ParamStore) -> Graph<'_> {
        Graph::new(store, true)
    }

    #[test]
    fn expr_loss_hand_cases() {
        let store = ParamStore::new();
        let mut g = graph(&store);
        // one-hot-correct logits: post-softmax probability ~1 on the target
        let v = 5usize;
        let mut row = vec![-30f32; v];
        row[2] = 30.0;
        let logits = g.tape.leaf(&[1, v], row).unwrap();
        let l = loss_expr(&mut g, logits, &[2], &[1.0]).unwrap();
        assert!(g.tape.value(l)[0].abs() < 1e-6);

        // uniform logits over V=40 -> ln 40
        let mut g = graph(&store);
        let logits = g.tape.leaf(&[1, 40], vec![0.0; 40]).unwrap();
        let l = loss_expr(&mut g, logits, &[7], &[1.0]).unwrap();
        assert!((g.tape.value(l)[0] as f64 - 40f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn expr_loss_ignores_pad_positions() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f32> = (0..3 * 7).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mut perturbed = base.clone();
        for v in perturbed[14..21].iter_mut() {
            *v += 3.0;
        }
        let mask = [1.0f32, 1.0, 0.0];
        let mut g1 = graph(&store);
        let l1 = g1.tape.leaf(&[3, 7], base).unwrap();
        let l1 = loss_expr(&mut g1, l1, &[1, 2, 3], &mask).unwrap();
        let mut g2 = graph(&store);
        let l2 = g2.tape.leaf(&[3, 7], perturbed).unwrap();
        let l2 = loss_expr(&mut g2, l2, &[1, 2, 3], &mask).unwrap();
        assert_eq!(g1.tape.value(l1), g2.tape.value(l2));
    }

    #[test]
    fn expr_loss_rejects_all_pad() {
        let store = ParamStore::new();
        let mut g = graph(&store);
        let logits = g.tape.leaf(&[2, 4], vec![0.0; 8]).unwrap();
        assert!(matches!(
            loss_expr(&mut g, logits, &[0, 0], &[0.0, 0.0]),
            Err(TrainError::AllPadTarget)
        ));
    }

    #[test]
    fn eval_loss_hand_cases() {
        let store = ParamStore::new();
        // yhat=3, y=2 -> |1| / max(2,1) = 0.5
        let mut g = graph(&store);
        let yh = g.tape.leaf(&[1, 1], vec![3.0]).unwrap();
        let l = loss_eval(&mut g, yh, &[2.0], &[1.0]).unwrap().unwrap();
        assert_eq!(g.tape.value(l)[0], 0.5);
        // yhat=0.2, y=0.1 -> 0.1 / max(0.1,1) = 0.1
        let mut g = graph(&store);
        let yh = g.tape.leaf(&[1, 1], vec![0.2]).unwrap();
        let l = loss_eval(&mut g, yh, &[0.1], &[1.0]).unwrap().unwrap();
        assert!((g.tape.value(l)[0] - 0.1).abs() < 1e-7);
        // exact prediction -> 0
        let mut g = graph(&store);
        let yh = g.tape.leaf(&[1, 2], vec![5.0, -1.0]).unwrap();
        let l = loss_eval(&mut g, yh, &[5.0, -1.0], &[1.0, 1.0]).unwrap().unwrap();
        assert_eq!(g.tape.value(l)[0], 0.0);
    }

    #[test]
    fn eval_loss_empty_finite_set_contributes_zero() {
        let store = ParamStore::new();
        let mut g = graph(&store);
        let yh = g.tape.leaf(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(loss_eval(&mut g, yh, &[0.0, 0.0], &[0.0, 0.0]).unwrap().is_none());
    }

    #[test]
    fn kl_hand_cases_and_nonnegativity() {
        let store = ParamStore::new();
        // mu=0 sigma=1 -> 0
        let mut g = graph(&store);
        let mu = g.tape.leaf(&[1, 3], vec![0.0; 3]).unwrap();
        let lv = g.tape.leaf(&[1, 3], vec![0.0; 3]).unwrap();
        let l = loss_kl(&mut g, mu, lv).unwrap();
        assert_eq!(g.tape.value(l)[0], 0.0);
        // mu=1 sigma=1, 1-dim -> 0.5
        let mut g = graph(&store);
        let mu = g.tape.leaf(&[1, 1], vec![1.0]).unwrap();
        let lv = g.tape.leaf(&[1, 1], vec![0.0]).unwrap();
        let l = loss_kl(&mut g, mu, lv).unwrap();
        assert_eq!(g.tape.value(l)[0], 0.5);
        // always >= 0 on random inputs
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let mut g = graph(&store);
            let mu: Vec<f32> = (0..4).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
            let lv: Vec<f32> = (0..4).map(|_| rng.gen_range(-3.0f32..3.0)).collect();
            let m = g.tape.leaf(&[1, 4], mu).unwrap();
            let v = g.tape.leaf(&[1, 4], lv).unwrap();
            let l = loss_kl(&mut g, m, v).unwrap();
            assert!(g.tape.value(l)[0] >= -1e-6);
        }
    }

    /// Diagonal-Gaussian KL matches an independent closed-form evaluation,
    /// q == p gives 0, and the stop-gradient branch receives zero gradient.
    #[test]
    fn align_closed_form_and_stop_gradient() {
        let store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let d = 5usize;
            let mu_q: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            let lv_q: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            let mu_p: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            let lv_p: Vec<f32> = (0..d).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
            let mut g = graph(&store);
            let tq = g.tape.leaf(&[1, d], mu_q.clone()).unwrap();
            let tlq = g.tape.leaf(&[1, d], lv_q.clone()).unwrap();
            let tp = g.tape.leaf(&[1, d], mu_p.clone()).unwrap();
            let tlp = g.tape.leaf(&[1, d], lv_p.clone()).unwrap();
            let l = loss_align(&mut g, tq, tlq, tp, tlp).unwrap();
            // independent closed form in f64
            let mut want = 0f64;
            for i in 0..d {
                let (mq, lq) = (mu_q[i] as f64, lv_q[i] as f64);
                let (mp, lp) = (mu_p[i] as f64, lv_p[i] as f64);
                want += 0.5 * (lp - lq + (lq.exp() + (mq - mp) * (mq - mp)) / lp.exp() - 1.0);
            }
            let got = g.tape.value(l)[0] as f64;
            assert!((got - want).abs() / want.abs().max(1e-3) < 1e-4, "{got} vs {want}");
            g.backward(l).unwrap();
            assert!(g.tape.grad(tp).is_none(), "stop-gradient branch got a gradient");
            assert!(g.tape.grad(tlp).is_none());
            assert!(g.tape.grad(tq).is_some());
        }
        // q == p -> 0
        let mut g = graph(&store);
        let mu = g.tape.leaf(&[1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let lv = g.tape.leaf(&[1, 3], vec![0.1, 0.2, -0.5]).unwrap();
        let l = loss_align(&mut g, mu, lv, mu, lv).unwrap();
        assert_eq!(g.tape.value(l)[0], 0.0);
    }
}
