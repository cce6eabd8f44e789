//! Correlation metrics, logistic-4 mapping and the multi-crop test protocol.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapack::{crop_nonblank, Sample};
use crate::error::{Error, Result};
use crate::projector::ViewSet;

/// 1-based ascending ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} predictions for {} scores", a.len(), b.len())));
    }
    if a.len() < min {
        return Err(Error::Undefined(format!("needs at least {min} values, got {}", a.len())));
    }
    Ok(())
}

pub fn plcc(pred: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(pred, q, 2)?;
    let n = pred.len() as f64;
    let (ma, mb) = (pred.iter().sum::<f64>() / n, q.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in pred.iter().zip(q) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("correlation with a constant vector".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn srocc(pred: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(pred, q, 2)?;
    plcc(&average_ranks(pred), &average_ranks(q))
}

pub fn rmse(pred: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(pred, q, 1)?;
    Ok((pred.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// `ψ(x) = β4 + (β1 − β4) / (1 + (x/β3)^β2)` applied after the affine shift
/// that maps the fitted prediction range onto `[1, 2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logistic4Params {
    pub beta: [f64; 4],
    /// Shift `x ↦ 1 + (x − lo) / (hi − lo)`.
    pub lo: f64,
    pub hi: f64,
}

impl Logistic4Params {
    pub fn shift(&self, x: f64) -> f64 {
        1.0 + (x - self.lo) / (self.hi - self.lo)
    }

    pub fn apply(&self, x: f64) -> f64 {
        logistic4(&self.beta, self.shift(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mapping {
    Logistic(Logistic4Params),
    Identity,
}

impl Mapping {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Mapping::Logistic(p) => p.apply(x),
            Mapping::Identity => x,
        }
    }

    pub fn apply_all(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

pub fn logistic4(b: &[f64; 4], x: f64) -> f64 {
    b[3] + (b[0] - b[3]) / (1.0 + (x / b[2]).powf(b[1]))
}

fn sse(b: &[f64; 4], x: &[f64], q: &[f64]) -> f64 {
    x.iter().zip(q).map(|(&xi, &qi)| (logistic4(b, xi) - qi).powi(2)).sum()
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut rhs: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for c in col..4 {
                a[row][c] -= f * a[col][c];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut out = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|c| a[row][c] * out[c]).sum();
        out[row] = (rhs[row] - s) / a[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

const LM_MAX_ITER: usize = 2000;

/// Levenberg–Marquardt on shifted predictions; `None` if it fails to converge.
fn levenberg_marquardt(x: &[f64], q: &[f64], init: [f64; 4]) -> Option<([f64; 4], f64)> {
    let mut b = init;
    let mut cost = sse(&b, x, q);
    let mut lambda = 1e-3;
    let scale = q.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    for _ in 0..LM_MAX_ITER {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for (&xi, &qi) in x.iter().zip(q) {
            let u = (xi / b[2]).powf(b[1]);
            let d = 1.0 + u;
            let r = b[3] + (b[0] - b[3]) / d - qi;
            let amp = b[0] - b[3];
            let j = [
                1.0 / d,
                -amp * u * (xi / b[2]).ln() / (d * d),
                amp * u * b[1] / (b[2] * d * d),
                1.0 - 1.0 / d,
            ];
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for c in 0..4 {
                    jtj[a][c] += j[a] * j[c];
                }
            }
        }
        let grad_norm = jtr.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if grad_norm < 1e-14 * scale.sqrt() || cost < 1e-28 * scale {
            return Some((b, cost));
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for d in 0..4 {
                a[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            let Some(step) = solve4(a, jtr.map(|v| -v)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [b[0] + step[0], b[1] + step[1], b[2] + step[2], b[3] + step[3]];
            let c = if cand[2] > 0.0 { sse(&cand, x, q) } else { f64::INFINITY };
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(1e-300);
                let small_step = step.iter().zip(&cand).all(|(s, v)| s.abs() <= 1e-12 * (1.0 + v.abs()));
                b = cand;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-14 || small_step {
                    return Some((b, cost));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left at machine precision: a stationary point
            return Some((b, cost));
        }
    }
    None
}

/// Least-squares logistic-4 fit of `q` against `pred`.
///
/// The fit starts from `β = (max q, 1, median x, min q)` and from its mirror
/// `(min q, 1, median x, max q)`; the better result is kept. Falls back to the
/// identity when there are fewer than five points, the predictions are
/// constant, neither start converges, or the fitted curve is worse than the
/// identity.
pub fn logistic4_fit(pred: &[f64], q: &[f64]) -> Result<Mapping> {
    check_pair(pred, q, 2)?;
    if pred.len() < 5 {
        log::warn!("logistic-4 fit on {} points; using the identity mapping", pred.len());
        return Ok(Mapping::Identity);
    }
    let lo = pred.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        log::warn!("logistic-4 fit on constant predictions; using the identity mapping");
        return Ok(Mapping::Identity);
    }
    let shifted: Vec<f64> = pred.iter().map(|&p| 1.0 + (p - lo) / (hi - lo)).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let qmax = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let qmin = q.iter().cloned().fold(f64::INFINITY, f64::min);

    let best = [[qmax, 1.0, median, qmin], [qmin, 1.0, median, qmax]]
        .into_iter()
        .filter_map(|init| levenberg_marquardt(&shifted, q, init))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((beta, cost)) = best else {
        log::warn!("logistic-4 fit did not converge; using the identity mapping");
        return Ok(Mapping::Identity);
    };
    let identity: f64 = pred.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
    if cost > identity {
        return Ok(Mapping::Identity);
    }
    Ok(Mapping::Logistic(Logistic4Params { beta, lo, hi }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fold: String,
    pub plcc: f64,
    pub srocc: f64,
    pub rmse: f64,
}

/// PLCC and RMSE on logistic-mapped scores; SROCC on the raw predictions
/// (the mapping is monotone, so only saturation could change it).
pub fn report(fold: impl Into<String>, pred: &[f64], q: &[f64]) -> Result<MetricReport> {
    let mapping = logistic4_fit(pred, q)?;
    let mapped = mapping.apply_all(pred);
    Ok(MetricReport {
        fold: fold.into(),
        plcc: plcc(&mapped, q)?,
        srocc: srocc(pred, q)?,
        rmse: rmse(&mapped, q)?,
    })
}

/// Column-wise mean row labelled `mean`.
pub fn mean_report(reports: &[MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some(MetricReport {
        fold: "mean".into(),
        plcc: reports.iter().map(|r| r.plcc).sum::<f64>() / n,
        srocc: reports.iter().map(|r| r.srocc).sum::<f64>() / n,
        rmse: reports.iter().map(|r| r.rmse).sum::<f64>() / n,
    })
}

pub fn reports_to_csv(reports: &[MetricReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::write(path, reports_to_csv(reports)?).map_err(|e| Error::io(path, e))
}

/// Anything that scores one cropped view set.
pub trait QualityModel {
    /// Side of the square crops the model consumes.
    fn crop_size(&self) -> usize;

    /// Fine-head score of one crop.
    fn score(&self, views: &ViewSet) -> Result<f64>;
}

/// Average score over `crops` seeded random crops of one sample.
pub fn predict_sample(model: &dyn QualityModel, views: &ViewSet, crops: usize, seed: u64, stream: u64) -> Result<f64> {
    if crops == 0 {
        return Err(Error::invalid("at least one crop is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut total = 0.0;
    for _ in 0..crops {
        let c = crop_nonblank(views, model.crop_size(), &mut rng)?;
        total += model.score(&c)?;
    }
    Ok(total / crops as f64)
}

/// Multi-crop predictions for a test set, in input order.
pub fn predict_all(model: &dyn QualityModel, samples: &[Sample], crops: usize, seed: u64) -> Result<Vec<f64>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| predict_sample(model, &s.views, crops, seed, i as u64))
        .collect()
}

pub fn evaluate(
    model: &dyn QualityModel,
    samples: &[Sample],
    crops: usize,
    seed: u64,
    fold: impl Into<String>,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty test set"));
    }
    let pred = predict_all(model, samples, crops, seed)?;
    let q: Vec<f64> = samples.iter().map(|s| s.mos).collect();
    report(fold, &pred, &q)
}
