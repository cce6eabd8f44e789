//! Quality heads, the disentangling, regression and ranking losses, and a
//! differentiable Spearman correlation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::evalkit::average_ranks;
use crate::params::{fan_in_uniform, Bound, ParamSet};
use crate::tensor::Tensor;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambda_dis: f64,
    pub lambda_rank: f64,
    pub softrank_epsilon: f64,
    /// Block the rank-loss gradient into the coarse head.
    pub rank_stop_coarse: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_dis: 1.0,
            lambda_rank: 1.0,
            softrank_epsilon: 0.1,
            rank_stop_coarse: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dis >= 0.0) || !(self.lambda_rank >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.softrank_epsilon > 0.0) {
            return Err(Error::Config("softrank_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Fan-in uniform weights; biases start at `bias` (usually the mean training MOS).
pub fn init_params<R: Rng + ?Sized>(d_out: usize, bias: f64, rng: &mut R, p: &mut ParamSet) {
    p.insert("head.coarse.w", fan_in_uniform(&[d_out, 1], d_out, rng));
    p.insert("head.coarse.b", Tensor::full(&[1], bias));
    p.insert("head.fine.w", fan_in_uniform(&[2 * d_out, 1], 2 * d_out, rng));
    p.insert("head.fine.b", Tensor::full(&[1], bias));
}

/// `q_c = FC(f_g)`, `q_f = FC(f_g ⊕ f_l)`; both 1×1.
pub fn predict_heads(g: &mut Graph, b: &Bound, fg: Var, fl: Var) -> Result<(Var, Var)> {
    let qc = g.matmul(fg, b.var("head.coarse.w"))?;
    let qc = g.add_row_bias(qc, b.var("head.coarse.b"))?;
    let cat = g.concat_cols(&[fg, fl])?;
    let qf = g.matmul(cat, b.var("head.fine.w"))?;
    let qf = g.add_row_bias(qf, b.var("head.fine.b"))?;
    Ok((qc, qf))
}

/// `max(0, cos(a, b))`; zero (with a warning) when either norm vanishes.
pub fn cosine_hinge(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.value(a).numel() != g.value(b).numel() {
        return Err(Error::shape("cosine of vectors with different lengths"));
    }
    let (av, bv) = (g.value(a).data(), g.value(b).data());
    let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        log::warn!("disentangling loss on a near-zero feature vector; using 0");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let out = Tensor::scalar(cos.max(0.0));
    Ok(g.custom(
        &[a, b],
        out,
        Box::new(move |ctx: &BackwardCtx| {
            if cos <= 0.0 {
                return vec![None, None];
            }
            let gr = ctx.grad.item();
            let (x, y) = (ctx.inputs[0], ctx.inputs[1]);
            // ∂cos/∂x = y/(|x||y|) − cos·x/|x|²
            let gx = ctx.needs[0].then(|| {
                Tensor::from_fn(x.shape(), |i| gr * (y.data()[i] / (na * nb) - cos * x.data()[i] / (na * na)))
            });
            let gy = ctx.needs[1].then(|| {
                Tensor::from_fn(y.shape(), |i| gr * (x.data()[i] / (na * nb) - cos * y.data()[i] / (nb * nb)))
            });
            vec![gx, gy]
        }),
    ))
}

/// Batch mean of the per-sample hinged cosine between global and local features.
pub fn loss_dis(g: &mut Graph, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::invalid("disentangling loss over an empty batch"));
    }
    let terms = pairs
        .iter()
        .map(|&(fg, fl)| cosine_hinge(g, fg, fl))
        .collect::<Result<Vec<_>>>()?;
    let w = vec![1.0 / terms.len() as f64; terms.len()];
    g.weighted_sum(&terms, &w)
}

/// MSE of the coarse head plus MSE of the fine head.
pub fn loss_reg(g: &mut Graph, qc: Var, qf: Var, q: &[f64]) -> Result<Var> {
    let a = g.mse(qc, q)?;
    let b = g.mse(qf, q)?;
    g.add(a, b)
}

/// Pool-adjacent-violators for the non-increasing isotonic fit of `y`.
/// Returns the fitted values and the block boundaries.
fn isotonic_decreasing(y: &[f64]) -> (Vec<f64>, Vec<(usize, usize)>) {
    // each block: (start, end, sum)
    let mut blocks: Vec<(usize, usize, f64)> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        blocks.push((i, i + 1, v));
        while blocks.len() > 1 {
            let (s1, e1, t1) = blocks[blocks.len() - 1];
            let (s0, e0, t0) = blocks[blocks.len() - 2];
            if t0 / (e0 - s0) as f64 >= t1 / (e1 - s1) as f64 {
                break;
            }
            blocks.pop();
            *blocks.last_mut().unwrap() = (s0, e1, t0 + t1);
        }
    }
    let mut fit = vec![0.0; y.len()];
    for &(s, e, t) in &blocks {
        fit[s..e].iter_mut().for_each(|v| *v = t / (e - s) as f64);
    }
    (fit, blocks.into_iter().map(|(s, e, _)| (s, e)).collect())
}

/// Soft ranks and what the backward pass needs.
struct SoftRank {
    ranks: Vec<f64>,
    /// Descending sort order of the input.
    order: Vec<usize>,
    blocks: Vec<(usize, usize)>,
}

fn soft_rank_full(theta: &[f64], eps: f64) -> SoftRank {
    let n = theta.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| theta[b].total_cmp(&theta[a]));
    let s: Vec<f64> = order.iter().map(|&i| theta[i] / eps).collect();
    let diff: Vec<f64> = s.iter().enumerate().map(|(i, v)| v - (n - i) as f64).collect();
    let (dual, blocks) = isotonic_decreasing(&diff);
    let mut ranks = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = s[pos] - dual[pos];
    }
    SoftRank { ranks, order, blocks }
}

/// Regularized soft ranks: the Euclidean projection of `θ/ε` onto the
/// permutahedron of `(1, …, n)`. Ascending; tends to hard ranks as ε → 0.
pub fn soft_rank(theta: &[f64], eps: f64) -> Vec<f64> {
    soft_rank_full(theta, eps).ranks
}

/// Vector-Jacobian product of [`soft_rank`] with cotangent `g`.
fn soft_rank_vjp(sr: &SoftRank, g: &[f64], eps: f64) -> Vec<f64> {
    let gs: Vec<f64> = sr.order.iter().map(|&i| g[i]).collect();
    let mut out = vec![0.0; g.len()];
    for &(s, e) in &sr.blocks {
        let mean = gs[s..e].iter().sum::<f64>() / (e - s) as f64;
        for pos in s..e {
            out[sr.order[pos]] = (gs[pos] - mean) / eps;
        }
    }
    out
}

fn centered(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pearson correlation between soft ranks of `pred` and average ranks of `q`.
pub fn soft_spearman_value(pred: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    let rq = centered(&average_ranks(q));
    check_spearman_inputs(pred, q, &rq)?;
    let rp = centered(&soft_rank(pred, eps));
    let np = norm(&rp);
    if np < NORM_FLOOR {
        return Ok(0.0);
    }
    Ok(rp.iter().zip(&rq).map(|(a, b)| a * b).sum::<f64>() / (np * norm(&rq)))
}

fn check_spearman_inputs(pred: &[f64], q: &[f64], rq: &[f64]) -> Result<()> {
    if pred.len() != q.len() {
        return Err(Error::shape(format!("{} predictions for {} scores", pred.len(), q.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Undefined("Spearman correlation needs at least two samples".into()));
    }
    if norm(rq) == 0.0 {
        return Err(Error::Undefined("Spearman correlation against constant scores".into()));
    }
    Ok(())
}

/// Differentiable Spearman correlation of a B-element prediction var.
pub fn soft_spearman(g: &mut Graph, pred: Var, q: &[f64], eps: f64) -> Result<Var> {
    if !(eps > 0.0) {
        return Err(Error::invalid("soft rank regularization must be positive"));
    }
    let p = g.value(pred).data().to_vec();
    let rq = centered(&average_ranks(q));
    check_spearman_inputs(&p, q, &rq)?;
    let sr = soft_rank_full(&p, eps);
    let rp = centered(&sr.ranks);
    let (np, nq) = (norm(&rp), norm(&rq));
    if np < NORM_FLOOR {
        log::warn!("soft ranks are all equal; Spearman term set to 0");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let rho = rp.iter().zip(&rq).map(|(a, b)| a * b).sum::<f64>() / (np * nq);
    let shape = g.shape(pred).to_vec();
    Ok(g.custom(
        &[pred],
        Tensor::scalar(rho),
        Box::new(move |ctx: &BackwardCtx| {
            let gr = ctx.grad.item();
            // ∂ρ/∂r for centered r; the centering projection is absorbed because
            // both terms are already zero-mean
            let dr: Vec<f64> = rp
                .iter()
                .zip(&rq)
                .map(|(a, b)| gr * (b / (np * nq) - rho * a / (np * np)))
                .collect();
            let dp = soft_rank_vjp(&sr, &dr, eps);
            vec![Some(Tensor::new(&shape, dp).unwrap())]
        }),
    ))
}

/// `max(0, ρ̃(q_c, q) − ρ̃(q_f, q))`; zero with a warning when B < 2 or the
/// batch MOS values are all equal.
pub fn loss_rank(g: &mut Graph, qc: Var, qf: Var, q: &[f64], cfg: &ObjectiveConfig) -> Result<Var> {
    if q.len() < 2 {
        log::warn!("ranking loss skipped for a batch of {}", q.len());
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    if q.iter().all(|&v| v == q[0]) {
        log::warn!("ranking loss skipped for a batch with equal MOS");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let qc = if cfg.rank_stop_coarse { g.detach(qc) } else { qc };
    let sc = soft_spearman(g, qc, q, cfg.softrank_epsilon)?;
    let sf = soft_spearman(g, qf, q, cfg.softrank_epsilon)?;
    let d = g.sub(sc, sf)?;
    Ok(g.relu(d))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub reg: f64,
    pub dis: f64,
    pub rank: f64,
    pub total: f64,
    pub lambda_dis: f64,
    pub lambda_rank: f64,
}

impl LossReport {
    pub fn from_parts(reg: f64, dis: f64, rank: f64, lambda_dis: f64, lambda_rank: f64) -> Self {
        Self {
            reg,
            dis,
            rank,
            total: reg + lambda_dis * dis + lambda_rank * rank,
            lambda_dis,
            lambda_rank,
        }
    }
}

/// `L = L_reg + λ1 L_dis + λ2 L_rank`.
pub fn total_loss(g: &mut Graph, reg: Var, dis: Var, rank: Var, cfg: &ObjectiveConfig) -> Result<(Var, LossReport)> {
    let total = g.weighted_sum(&[reg, dis, rank], &[1.0, cfg.lambda_dis, cfg.lambda_rank])?;
    let report = LossReport {
        reg: g.value(reg).item(),
        dis: g.value(dis).item(),
        rank: g.value(rank).item(),
        total: g.value(total).item(),
        lambda_dis: cfg.lambda_dis,
        lambda_rank: cfg.lambda_rank,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;
    use crate::evalkit::srocc;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::new(&[v.len(), 1], v.to_vec()).unwrap())
    }

    #[test]
    fn heads_are_affine() {
        let mut p = ParamSet::new();
        init_params(4, 2.5, &mut ChaCha8Rng::seed_from_u64(1), &mut p);
        assert_eq!(p.get("head.fine.w").unwrap().shape(), &[8, 1]);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let fg = g.constant(Tensor::zeros(&[1, 4]));
        let fl = g.constant(Tensor::zeros(&[1, 4]));
        let (qc, qf) = predict_heads(&mut g, &b, fg, fl).unwrap();
        assert_eq!((g.value(qc).item(), g.value(qf).item()), (2.5, 2.5));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in ["head.coarse.w", "head.fine.w"] {
            let s = p.get(name).unwrap().shape().to_vec();
            p.assign(name, Tensor::from_fn(&s, |_| rng.gen_range(-1.0..1.0))).unwrap();
        }
        let feat = Tensor::from_fn(&[1, 4], |_| rng.gen_range(-1.0..1.0));
        let run = |scale: f64| {
            let mut g = Graph::new();
            let b = p.bind_frozen(&mut g);
            let fg = g.constant(feat.clone());
            let fl = g.constant(feat.scale(scale));
            let (qc, qf) = predict_heads(&mut g, &b, fg, fl).unwrap();
            (g.value(qc).item(), g.value(qf).item())
        };
        let (c1, f1) = run(1.0);
        let (c2, f2) = run(3.0);
        assert_eq!(c1, c2);
        assert_ne!(f1, f2);
    }

    fn dis(a: &[f64], b: &[f64]) -> f64 {
        let mut g = Graph::new();
        let (x, y) = (g.constant(Tensor::new(&[1, a.len()], a.to_vec()).unwrap()), g.constant(Tensor::new(&[1, b.len()], b.to_vec()).unwrap()));
        let l = cosine_hinge(&mut g, x, y).unwrap();
        g.value(l).item()
    }

    #[test]
    fn disentangling_examples() {
        assert!((dis(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(dis(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(dis(&[1.0, 2.0], &[-1.0, -2.0]), 0.0);
        assert_eq!(dis(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((dis(&[1.0, 2.0], &[3.0, 1.0]) - dis(&[7.0, 14.0], &[0.3, 0.1])).abs() < 1e-15);
    }

    #[test]
    fn disentangling_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let other = Tensor::from_fn(&[1, 5], |_| rng.gen_range(0.0..1.0));
        let x0 = Tensor::from_fn(&[1, 5], |_| rng.gen_range(0.0..1.0));
        let err = max_rel_error(&x0, 1e-6, 1e-9, |g, x| {
            let o = g.constant(other.clone());
            cosine_hinge(g, x, o).unwrap()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn regression_examples() {
        let mut g = Graph::new();
        let (qc, qf) = (col(&mut g, &[4.0]), col(&mut g, &[6.0]));
        let l = loss_reg(&mut g, qc, qf, &[5.0]).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        let q = [1.0, 2.0, 3.0];
        let (a, b) = (col(&mut g, &[1.5, 2.0, 2.0]), col(&mut g, &[1.0, 2.5, 3.5]));
        let base = loss_reg(&mut g, a, b, &q).unwrap();
        let (a2, b2) = (col(&mut g, &[2.0, 2.0, 1.0]), col(&mut g, &[1.0, 3.0, 4.0]));
        let doubled = loss_reg(&mut g, a2, b2, &q).unwrap();
        assert!((g.value(doubled).item() - 4.0 * g.value(base).item()).abs() < 1e-12);
        let (a3, b3) = (col(&mut g, &q), col(&mut g, &q));
        let zero = loss_reg(&mut g, a3, b3, &q).unwrap();
        assert_eq!(g.value(zero).item(), 0.0);
    }

    #[test]
    fn soft_rank_limits() {
        assert_eq!(soft_rank(&[0.3, 0.1, 0.2], 1e-3), vec![3.0, 1.0, 2.0]);
        let flat = soft_rank(&[0.5; 4], 1.0);
        assert!(flat.iter().all(|&r| (r - 2.5).abs() < 1e-12));
        let r = soft_rank(&[0.0, 0.1, 5.0], 1.0);
        assert!((r.iter().sum::<f64>() - 6.0).abs() < 1e-12);
        assert!(r[0] < r[1] && r[1] < r[2]);
    }

    #[test]
    fn spearman_extremes() {
        let q = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((soft_spearman_value(&q, &q, 1e-3).unwrap() - 1.0).abs() < 1e-3);
        let rev: Vec<f64> = q.iter().rev().cloned().collect();
        assert!((soft_spearman_value(&rev, &q, 1e-3).unwrap() + 1.0).abs() < 1e-3);
        assert!(soft_spearman_value(&q, &[2.0; 5], 0.1).is_err());
    }

    #[test]
    fn spearman_matches_hard_on_random_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: Vec<f64> = (0..8).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let q: Vec<f64> = (0..8).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let soft = soft_spearman_value(&p, &q, 1e-3).unwrap();
        assert!((soft - srocc(&p, &q).unwrap()).abs() < 5e-3);
    }

    /// Once neighbouring predictions are further apart than ε the soft ranks
    /// are exactly the hard ones.
    #[test]
    fn spearman_is_hard_when_gaps_exceed_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 200 {
            let p: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut s = p.clone();
            s.sort_by(f64::total_cmp);
            if s.windows(2).any(|w| w[1] - w[0] < 1e-3) {
                continue;
            }
            checked += 1;
            let soft = soft_spearman_value(&p, &q, 1e-3).unwrap();
            assert!((soft - srocc(&p, &q).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            for eps in [1e-3, 0.1, 1.0] {
                let x0 = Tensor::new(&[8, 1], p.clone()).unwrap();
                let err = max_rel_error(&x0, 1e-7, 1e-6, |g, x| soft_spearman(g, x, &q, eps).unwrap());
                assert!(err < 1e-3, "eps {eps}: {err}");
            }
        }
    }

    fn rank_loss(qc: &[f64], qf: &[f64], q: &[f64]) -> f64 {
        let mut g = Graph::new();
        let (a, b) = (col(&mut g, qc), col(&mut g, qf));
        let cfg = ObjectiveConfig {
            softrank_epsilon: 1e-3,
            ..Default::default()
        };
        let l = loss_rank(&mut g, a, b, q, &cfg).unwrap();
        g.value(l).item()
    }

    #[test]
    fn rank_loss_examples() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(rank_loss(&q, &q, &q), 0.0);
        assert!((rank_loss(&q, &rev, &q) - 2.0).abs() < 1e-3);
        assert_eq!(rank_loss(&rev, &q, &q), 0.0);
        assert_eq!(rank_loss(&[1.0], &[2.0], &[3.0]), 0.0);
        assert_eq!(rank_loss(&[1.0, 2.0], &[2.0, 1.0], &[3.0, 3.0]), 0.0);
    }

    #[test]
    fn inactive_hinge_passes_no_gradient() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let mut g = Graph::new();
        let a = col(&mut g, &[4.0, 3.0, 2.0, 1.0]);
        let b = g.param(Tensor::new(&[4, 1], vec![1.0, 2.2, 2.9, 4.1]).unwrap());
        let l = loss_rank(&mut g, a, b, &q, &ObjectiveConfig::default()).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(b).map_or(true, |t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stop_gradient_flag() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let run = |stop: bool| {
            let mut g = Graph::new();
            let a = g.param(Tensor::new(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
            let b = col(&mut g, &[1.0, 3.0, 2.0, 4.0]);
            let cfg = ObjectiveConfig {
                rank_stop_coarse: stop,
                softrank_epsilon: 10.0,
                ..Default::default()
            };
            let l = loss_rank(&mut g, a, b, &q, &cfg).unwrap();
            let grads = g.backward(l).unwrap();
            grads.get(a).map_or(0.0, |t| t.data().iter().map(|v| v.abs()).sum())
        };
        assert!(run(false) > 0.0);
        assert_eq!(run(true), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let mut g = Graph::new();
        let parts: Vec<Var> = [2.0, 0.5, 0.1].iter().map(|&v| g.constant(Tensor::scalar(v))).collect();
        let (_, r) = total_loss(&mut g, parts[0], parts[1], parts[2], &ObjectiveConfig::default()).unwrap();
        assert!((r.total - 2.6).abs() < 1e-15);
        let zero = ObjectiveConfig {
            lambda_dis: 0.0,
            lambda_rank: 0.0,
            ..Default::default()
        };
        let (_, r) = total_loss(&mut g, parts[0], parts[1], parts[2], &zero).unwrap();
        assert_eq!(r.total, 2.0);
    }

    proptest! {
        #[test]
        fn spearman_invariant_to_increasing_affine_q(
            p in prop::collection::vec(-5.0f64..5.0, 3..12),
            seed in any::<u64>(),
            a in 0.1f64..10.0,
            c in -10.0f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = p.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
            let q2: Vec<f64> = q.iter().map(|v| a * v + c).collect();
            let x = soft_spearman_value(&p, &q, 0.1).unwrap();
            let y = soft_spearman_value(&p, &q2, 0.1).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn loss_bounds(p in prop::collection::vec(-5.0f64..5.0, 4), f in prop::collection::vec(-5.0f64..5.0, 4)) {
            let q = [0.1, 0.7, 0.3, 0.9];
            let r = rank_loss(&p, &f, &q);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&r));
            let d = dis(&p, &f);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        }

        #[test]
        fn soft_ranks_sum_to_triangle(p in prop::collection::vec(-5.0f64..5.0, 1..15), eps in 0.01f64..10.0) {
            let n = p.len() as f64;
            let r = soft_rank(&p, eps);
            prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        }
    }
}
