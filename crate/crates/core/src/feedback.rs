//! Attention feedback: occupancy-enhanced stitched attention drives a guided
//! region mask and region-wise filters for a dynamic region-aware convolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{col2im_accumulate, im2col_rows, BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, Bound, ParamSet};
use crate::tensor::{gemm, Tensor};

/// Input channels of the region-aware convolution (RGB + depth).
pub const DR_IN: usize = 4;
/// Output channels of the region-aware convolution.
pub const DR_OUT: usize = 16;
/// Weights per kernel tap and region, `DR_IN · DR_OUT`.
pub const DR_TAP: usize = DR_IN * DR_OUT;

const COL_BUDGET: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// Number of regions `n`.
    pub regions: usize,
    /// Side `k` of the generated kernels.
    pub kernel_size: usize,
    /// Softmax temperature of the backward path through the mask logits.
    pub st_temperature: f64,
    pub interpolation: Interpolation,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            regions: 8,
            kernel_size: 3,
            st_temperature: 1.0,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.regions == 0 || self.kernel_size == 0 {
            return Err(Error::Config("regions and kernel_size must be positive".into()));
        }
        if !(self.st_temperature > 0.0) || !self.st_temperature.is_finite() {
            return Err(Error::Config("st_temperature must be positive".into()));
        }
        Ok(())
    }
}

pub fn init_params<R: Rng + ?Sized>(cfg: &FeedbackConfig, heads: usize, rng: &mut R, p: &mut ParamSet) -> Result<()> {
    cfg.validate()?;
    let n = cfg.regions;
    p.insert("feedback.mask.w", fan_in_uniform(&[9 * heads, n], 9 * heads, rng));
    p.insert("feedback.mask.b", fan_in_uniform(&[n], 9 * heads, rng));
    p.insert("feedback.gen1.w", fan_in_uniform(&[heads, n * n], heads, rng));
    p.insert("feedback.gen1.b", fan_in_uniform(&[n * n], heads, rng));
    p.insert("feedback.gen2.w", fan_in_uniform(&[n * n, DR_TAP * n], n * n, rng));
    p.insert("feedback.gen2.b", fan_in_uniform(&[DR_TAP * n], n * n, rng));
    Ok(())
}

/// Area-average an `h × w` occupancy image onto a `gh × gw` grid; each cell
/// holds the fraction of occupied pixels it covers.
pub fn resize_occupancy(occ: &[u8], (h, w): (usize, usize), (gh, gw): (usize, usize)) -> Result<Tensor> {
    if occ.len() != h * w {
        return Err(Error::shape(format!("occupancy has {} pixels, expected {h}×{w}", occ.len())));
    }
    if gh == 0 || gw == 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::shape(format!("cannot area-resize {h}×{w} to {gh}×{gw}")));
    }
    let (sy, sx) = (h / gh, w / gw);
    let area = (sy * sx) as f64;
    let mut out = Tensor::zeros(&[gh, gw]);
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            if occ[y * w + x] != 0 {
                d[(y / sy) * gw + x / sx] += 1.0;
            }
        }
    }
    d.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// Multiply every attention channel by the resized occupancy.
pub fn enhance_attention(g: &mut Graph, stitched: Var, occ_grid: &Tensor) -> Result<Var> {
    g.mul_spatial(stitched, occ_grid)
}

/// Per-pixel argmax over the last axis; ties go to the lowest index.
pub fn argmax_mask(logits: &Tensor) -> Vec<usize> {
    let n = *logits.shape().last().expect("logits have channels");
    logits
        .data()
        .chunks(n)
        .map(|row| {
            let mut best = 0;
            for (t, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = t;
                }
            }
            best
        })
        .collect()
}

fn upsample_nearest(g: &mut Graph, x: Var, oh: usize, ow: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let [h, w, c] = s[..] else {
        return Err(Error::shape(format!("nearest resize expects H×W×C, got {s:?}")));
    };
    let src: Vec<usize> = (0..oh * ow)
        .map(|i| {
            let (y, xo) = (i / ow, i % ow);
            ((y * h) / oh) * w + (xo * w) / ow
        })
        .collect();
    let xv = g.value(x).data();
    let out = Tensor::from_fn(&[oh, ow, c], |i| xv[src[i / c] * c + i % c]);
    Ok(g.custom(
        &[x],
        out,
        Box::new(move |ctx: &BackwardCtx| {
            let mut gx = Tensor::zeros(&[h, w, c]);
            let d = gx.data_mut();
            for (i, gv) in ctx.grad.data().iter().enumerate() {
                d[src[i / c] * c + i % c] += gv;
            }
            vec![Some(gx)]
        }),
    ))
}

/// 3×3 conv to `n` logits, upsampled to `out_h × out_w`; returns the hard
/// mask, the coarse logits and the upsampled logits.
pub fn predict_mask_stages(
    g: &mut Graph,
    b: &Bound,
    cfg: &FeedbackConfig,
    enhanced: Var,
    (out_h, out_w): (usize, usize),
) -> Result<(Vec<usize>, Var, Var)> {
    let coarse = g.conv2d(enhanced, b.var("feedback.mask.w"), Some(b.var("feedback.mask.b")), 3)?;
    let logits = match cfg.interpolation {
        Interpolation::Bilinear => g.upsample_bilinear(coarse, out_h, out_w)?,
        Interpolation::Nearest => upsample_nearest(g, coarse, out_h, out_w)?,
    };
    Ok((argmax_mask(g.value(logits)), coarse, logits))
}

pub fn predict_mask(
    g: &mut Graph,
    b: &Bound,
    cfg: &FeedbackConfig,
    enhanced: Var,
    out: (usize, usize),
) -> Result<(Vec<usize>, Var)> {
    let (mask, _, logits) = predict_mask_stages(g, b, cfg, enhanced, out)?;
    Ok((mask, logits))
}

/// Pooled k×k×N_h map, k×k×n² hidden map and k×k×64n filters.
pub fn generate_filters_stages(g: &mut Graph, b: &Bound, cfg: &FeedbackConfig, enhanced: Var) -> Result<[Var; 3]> {
    let k = cfg.kernel_size;
    let pooled = g.adaptive_avg_pool(enhanced, k, k)?;
    let mid = g.conv2d(pooled, b.var("feedback.gen1.w"), Some(b.var("feedback.gen1.b")), 1)?;
    let out = g.conv2d(mid, b.var("feedback.gen2.w"), Some(b.var("feedback.gen2.b")), 1)?;
    Ok([pooled, mid, out])
}

/// Pool to k×k, then two 1×1 convs to n² and 64n channels; k×k×64n.
pub fn generate_filters(g: &mut Graph, b: &Bound, cfg: &FeedbackConfig, enhanced: Var) -> Result<Var> {
    Ok(generate_filters_stages(g, b, cfg, enhanced)?[2])
}

/// Index into the flat k×k×64n filter tensor of tap `(a, b)`, region `t`,
/// output channel `o` and input channel `i`.
#[inline]
pub fn filter_index(k: usize, n: usize, (a, b): (usize, usize), t: usize, o: usize, i: usize) -> usize {
    (a * k + b) * DR_TAP * n + t * DR_TAP + o * DR_IN + i
}

/// Kernel of region `t` as a `(k·k·4) × 16` conv weight (rows `[dy][dx][c]`).
pub fn region_weight(filters: &Tensor, k: usize, n: usize, t: usize) -> Tensor {
    let f = filters.data();
    Tensor::from_fn(&[k * k * DR_IN, DR_OUT], |idx| {
        let (row, o) = (idx / DR_OUT, idx % DR_OUT);
        let (tap, i) = (row / DR_IN, row % DR_IN);
        f[filter_index(k, n, (tap / k, tap % k), t, o, i)]
    })
}

/// All regions side by side: `(k·k·4) × (16n)`, column `t·16 + o`.
fn all_region_weights(filters: &[f64], k: usize, n: usize) -> Vec<f64> {
    let cols = DR_OUT * n;
    let mut w = vec![0.0; k * k * DR_IN * cols];
    for tap in 0..k * k {
        for i in 0..DR_IN {
            let row = tap * DR_IN + i;
            for t in 0..n {
                for o in 0..DR_OUT {
                    w[row * cols + t * DR_OUT + o] = filters[tap * DR_TAP * n + t * DR_TAP + o * DR_IN + i];
                }
            }
        }
    }
    w
}

fn check_drconv_shapes(image: &Tensor, filters: &Tensor, k: usize, n: usize) -> Result<(usize, usize)> {
    let [h, w, c] = image.shape()[..] else {
        return Err(Error::shape(format!("drconv image must be H×W×4, got {:?}", image.shape())));
    };
    if c != DR_IN {
        return Err(Error::shape(format!("drconv image has {c} channels, expected {DR_IN}")));
    }
    if filters.shape() != [k, k, DR_TAP * n] {
        return Err(Error::shape(format!(
            "drconv filters {:?}, expected [{k}, {k}, {}]",
            filters.shape(),
            DR_TAP * n
        )));
    }
    Ok((h, w))
}

fn chunk_rows(w: usize, patch: usize) -> usize {
    (COL_BUDGET / (w * patch).max(1)).max(1)
}

/// Region-aware convolution with a fixed mask: pixel `p` is convolved with
/// the kernel of region `mask[p]` (zero same-padding).
pub fn drconv_with_mask(image: &Tensor, filters: &Tensor, mask: &[usize], k: usize, n: usize) -> Result<Tensor> {
    let (h, w) = check_drconv_shapes(image, filters, k, n)?;
    if mask.len() != h * w {
        return Err(Error::shape(format!("mask has {} entries for a {h}×{w} image", mask.len())));
    }
    if let Some(&bad) = mask.iter().find(|&&t| t >= n) {
        return Err(Error::invalid(format!("mask value {bad} out of range for {n} regions")));
    }
    let patch = k * k * DR_IN;
    let wall = all_region_weights(filters.data(), k, n);
    let cols = DR_OUT * n;
    let mut out = vec![0.0; h * w * DR_OUT];
    let step = chunk_rows(w, patch);
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + step).min(h);
        let col = im2col_rows(image.data(), (h, w, DR_IN), k, r0, r1);
        for (local, crow) in col.chunks(patch).enumerate() {
            let p = r0 * w + local;
            let t = mask[p];
            let dst = &mut out[p * DR_OUT..(p + 1) * DR_OUT];
            for (r, &cv) in crow.iter().enumerate() {
                if cv == 0.0 {
                    continue;
                }
                let wrow = &wall[r * cols + t * DR_OUT..r * cols + (t + 1) * DR_OUT];
                for (d, &wv) in dst.iter_mut().zip(wrow) {
                    *d += cv * wv;
                }
            }
        }
        r0 = r1;
    }
    Tensor::new(&[h, w, DR_OUT], out)
}

/// Region-aware convolution driven by mask logits.
///
/// The forward pass uses the hard argmax mask. Backward: filters receive the
/// gradient of their own region's pixels only; the logits receive the
/// straight-through surrogate `∂/∂l_t = (1/τ) s_t (⟨g, Y_t⟩ − Σ_j s_j ⟨g, Y_j⟩)`
/// with `s = softmax(l/τ)` and `Y_t` the output under region `t`'s kernel.
pub fn drconv(g: &mut Graph, image: Var, filters: Var, logits: Var, cfg: &FeedbackConfig) -> Result<Var> {
    let (k, n, tau) = (cfg.kernel_size, cfg.regions, cfg.st_temperature);
    let (h, w) = check_drconv_shapes(g.value(image), g.value(filters), k, n)?;
    if g.shape(logits) != [h, w, n] {
        return Err(Error::shape(format!(
            "mask logits {:?} for a {h}×{w} image with {n} regions",
            g.shape(logits)
        )));
    }
    let mask = argmax_mask(g.value(logits));
    let out = drconv_with_mask(g.value(image), g.value(filters), &mask, k, n)?;
    Ok(g.custom(
        &[image, filters, logits],
        out,
        Box::new(move |ctx: &BackwardCtx| drconv_backward(ctx, &mask, (h, w), k, n, tau)),
    ))
}

fn drconv_backward(
    ctx: &BackwardCtx,
    mask: &[usize],
    (h, w): (usize, usize),
    k: usize,
    n: usize,
    tau: f64,
) -> Vec<Option<Tensor>> {
    let (image, filters, logits) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
    let grad = ctx.grad.data();
    let patch = k * k * DR_IN;
    let cols = DR_OUT * n;
    let wall = all_region_weights(filters.data(), k, n);

    let mut dimage = ctx.needs[0].then(|| vec![0.0; h * w * DR_IN]);
    let mut dwall = ctx.needs[1].then(|| vec![0.0; patch * cols]);
    let mut dlogits = ctx.needs[2].then(|| vec![0.0; h * w * n]);

    let step = chunk_rows(w, patch.max(cols));
    let mut r0 = 0;
    while r0 < h {
        let r1 = (r0 + step).min(h);
        let rows = (r1 - r0) * w;
        let col = im2col_rows(image.data(), (h, w, DR_IN), k, r0, r1);
        let g_chunk = &grad[r0 * w * DR_OUT..r1 * w * DR_OUT];

        if let Some(dw) = dwall.as_mut() {
            for (local, crow) in col.chunks(patch).enumerate() {
                let t = mask[r0 * w + local];
                let gp = &g_chunk[local * DR_OUT..(local + 1) * DR_OUT];
                for (r, &cv) in crow.iter().enumerate() {
                    if cv == 0.0 {
                        continue;
                    }
                    let drow = &mut dw[r * cols + t * DR_OUT..r * cols + (t + 1) * DR_OUT];
                    for (d, &gv) in drow.iter_mut().zip(gp) {
                        *d += cv * gv;
                    }
                }
            }
        }

        if let Some(dimg) = dimage.as_mut() {
            let mut dcol = vec![0.0; rows * patch];
            for local in 0..rows {
                let t = mask[r0 * w + local];
                let gp = &g_chunk[local * DR_OUT..(local + 1) * DR_OUT];
                let drow = &mut dcol[local * patch..(local + 1) * patch];
                for (r, d) in drow.iter_mut().enumerate() {
                    let wrow = &wall[r * cols + t * DR_OUT..r * cols + (t + 1) * DR_OUT];
                    *d = wrow.iter().zip(gp).map(|(a, b)| a * b).sum();
                }
            }
            col2im_accumulate(&dcol, (h, w, DR_IN), k, r0, r1, dimg);
        }

        if let Some(dl) = dlogits.as_mut() {
            // Y for every region at once: rows × 16n
            let mut y = vec![0.0; rows * cols];
            gemm(
                rows, patch, cols, 1.0, &col, patch as isize, 1, &wall, cols as isize, 1, 0.0, &mut y,
            );
            let lv = logits.data();
            let mut s = vec![0.0; n];
            let mut score = vec![0.0; n];
            for local in 0..rows {
                let p = r0 * w + local;
                let gp = &g_chunk[local * DR_OUT..(local + 1) * DR_OUT];
                let lrow = &lv[p * n..(p + 1) * n];
                let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for t in 0..n {
                    s[t] = ((lrow[t] - m) / tau).exp();
                    z += s[t];
                }
                let mut mean = 0.0;
                for t in 0..n {
                    s[t] /= z;
                    let yt = &y[local * cols + t * DR_OUT..local * cols + (t + 1) * DR_OUT];
                    score[t] = yt.iter().zip(gp).map(|(a, b)| a * b).sum();
                    mean += s[t] * score[t];
                }
                for t in 0..n {
                    dl[p * n + t] = s[t] * (score[t] - mean) / tau;
                }
            }
        }
        r0 = r1;
    }

    let dfilters = dwall.map(|dw| {
        let mut f = vec![0.0; k * k * DR_TAP * n];
        for tap in 0..k * k {
            for i in 0..DR_IN {
                let row = tap * DR_IN + i;
                for t in 0..n {
                    for o in 0..DR_OUT {
                        f[tap * DR_TAP * n + t * DR_TAP + o * DR_IN + i] = dw[row * cols + t * DR_OUT + o];
                    }
                }
            }
        }
        Tensor::new(&[k, k, DR_TAP * n], f).unwrap()
    });
    vec![
        dimage.map(|d| Tensor::new(&[h, w, DR_IN], d).unwrap()),
        dfilters,
        dlogits.map(|d| Tensor::new(&[h, w, n], d).unwrap()),
    ]
}

/// Everything the feedback path produced for one sample.
#[derive(Clone, Debug)]
pub struct RegionPlan {
    pub mask: Vec<usize>,
    pub enhanced: Var,
    pub coarse_logits: Var,
    pub logits: Var,
    pub pooled: Var,
    pub hidden: Var,
    pub filters: Var,
}

/// Stitch per-view attention maps, enhance with occupancy, predict the mask
/// and filters for an `out_h × out_w` stitched image.
pub fn plan_regions(
    g: &mut Graph,
    b: &Bound,
    cfg: &FeedbackConfig,
    maps: &[Var],
    occupancy: &[u8],
    (out_h, out_w): (usize, usize),
) -> Result<RegionPlan> {
    let stitched = g.mosaic(maps, 2, 3)?;
    let s = g.shape(stitched).to_vec();
    let grid = resize_occupancy(occupancy, (out_h, out_w), (s[0], s[1]))?;
    let enhanced = enhance_attention(g, stitched, &grid)?;
    let (mask, coarse_logits, logits) = predict_mask_stages(g, b, cfg, enhanced, (out_h, out_w))?;
    let [pooled, hidden, filters] = generate_filters_stages(g, b, cfg, enhanced)?;
    Ok(RegionPlan {
        mask,
        enhanced,
        coarse_logits,
        logits,
        pooled,
        hidden,
        filters,
    })
}
