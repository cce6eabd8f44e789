//! Operations on channels-last feature maps (`[height, width, channels]`).

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, matmul_nt, Tensor};

/// Upper bound on the number of `f64`s in one im2col buffer.
const IM2COL_BUDGET: usize = 1 << 22;

fn as_map(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape(format!("expected an H×W×C map, got {:?}", t.shape()))),
    }
}

/// Zero padding `(before, after)` that keeps the output size for a k×k kernel.
pub(crate) fn same_padding(k: usize) -> (usize, usize) {
    let before = (k - 1) / 2;
    (before, k - 1 - before)
}

/// Rows `[row_start, row_end)` of the im2col matrix of `x`. Each output pixel
/// becomes one row holding its k×k×C neighbourhood in `[dy][dx][c]` order.
pub(crate) fn im2col_rows(
    x: &[f64],
    (h, w, c): (usize, usize, usize),
    k: usize,
    row_start: usize,
    row_end: usize,
) -> Vec<f64> {
    let (pad, _) = same_padding(k);
    let patch = k * k * c;
    let mut col = vec![0.0; (row_end - row_start) * w * patch];
    for y in row_start..row_end {
        for xo in 0..w {
            let base = ((y - row_start) * w + xo) * patch;
            for dy in 0..k {
                let sy = y as isize + dy as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in 0..k {
                    let sx = xo as isize + dx as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * c;
                    let dst = base + (dy * k + dx) * c;
                    col[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col_rows`]: scatter-add a column gradient into `dx`.
pub(crate) fn col2im_accumulate(
    dcol: &[f64],
    (h, w, c): (usize, usize, usize),
    k: usize,
    row_start: usize,
    row_end: usize,
    dx: &mut [f64],
) {
    let (pad, _) = same_padding(k);
    let patch = k * k * c;
    for y in row_start..row_end {
        for xo in 0..w {
            let base = ((y - row_start) * w + xo) * patch;
            for dy in 0..k {
                let sy = y as isize + dy as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for ddx in 0..k {
                    let sx = xo as isize + ddx as isize - pad as isize;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * c;
                    let src = base + (dy * k + ddx) * c;
                    for ch in 0..c {
                        dx[dst + ch] += dcol[src + ch];
                    }
                }
            }
        }
    }
}

fn chunk_rows(w: usize, patch: usize) -> usize {
    (IM2COL_BUDGET / (w * patch).max(1)).max(1)
}

impl Graph {
    /// Split an H×W×C image into non-overlapping p×p patches, one row per
    /// patch in row-major grid order; within a patch values are `[y][x][c]`.
    pub fn patchify(&mut self, x: Var, p: usize) -> Result<Var> {
        let (h, w, c) = as_map(self.value(x))?;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::shape(format!("patch size {p} does not divide {h}×{w}")));
        }
        let (gh, gw) = (h / p, w / p);
        let dim = p * p * c;
        let xv = self.value(x).data();
        let mut out = vec![0.0; gh * gw * dim];
        for gy in 0..gh {
            for gx in 0..gw {
                let base = (gy * gw + gx) * dim;
                for a in 0..p {
                    let src = ((gy * p + a) * w + gx * p) * c;
                    out[base + a * p * c..base + (a + 1) * p * c].copy_from_slice(&xv[src..src + p * c]);
                }
            }
        }
        let out = Tensor::new(&[gh * gw, dim], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let mut gx_ = vec![0.0; h * w * c];
                for gy in 0..gh {
                    for gx in 0..gw {
                        let base = (gy * gw + gx) * dim;
                        for a in 0..p {
                            let dst = ((gy * p + a) * w + gx * p) * c;
                            gx_[dst..dst + p * c].copy_from_slice(&g[base + a * p * c..base + (a + 1) * p * c]);
                        }
                    }
                }
                vec![Some(Tensor::new(&[h, w, c], gx_).unwrap())]
            }),
        ))
    }

    /// Stride-1 convolution with zero "same" padding.
    ///
    /// `weight` is `(k·k·C_in) × C_out` with rows in `[dy][dx][c_in]` order;
    /// the operation is a cross-correlation, as in common deep learning
    /// frameworks.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, k: usize) -> Result<Var> {
        let (h, w, cin) = as_map(self.value(x))?;
        let ws = self.shape(weight).to_vec();
        if k == 0 || ws.len() != 2 || ws[0] != k * k * cin {
            return Err(Error::shape(format!(
                "conv2d weight {:?} for k={k}, C_in={cin}",
                ws
            )));
        }
        let cout = ws[1];
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(Error::shape(format!("conv2d bias needs {cout} entries")));
            }
        }
        let patch = k * k * cin;
        let xv = self.value(x).data();
        let wv = self.value(weight).data();
        let mut out = vec![0.0; h * w * cout];
        if k == 1 {
            gemm(h * w, cin, cout, 1.0, xv, cin as isize, 1, wv, cout as isize, 1, 0.0, &mut out);
        } else {
            let step = chunk_rows(w, patch);
            let mut y0 = 0;
            while y0 < h {
                let y1 = (y0 + step).min(h);
                let col = im2col_rows(xv, (h, w, cin), k, y0, y1);
                let rows = (y1 - y0) * w;
                gemm(
                    rows,
                    patch,
                    cout,
                    1.0,
                    &col,
                    patch as isize,
                    1,
                    wv,
                    cout as isize,
                    1,
                    0.0,
                    &mut out[y0 * w * cout..y1 * w * cout],
                );
                y0 = y1;
            }
        }
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for px in out.chunks_mut(cout) {
                for (o, bb) in px.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let out = Tensor::new(&[h, w, cout], out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.custom(
            &inputs,
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let xv = ctx.inputs[0].data();
                let wv = ctx.inputs[1].data();
                let mut dw = ctx.needs[1].then(|| vec![0.0; patch * cout]);
                let mut dx = ctx.needs[0].then(|| vec![0.0; h * w * cin]);
                if k == 1 {
                    if let Some(dw) = dw.as_mut() {
                        gemm(cin, h * w, cout, 1.0, xv, 1, cin as isize, g, cout as isize, 1, 0.0, dw);
                    }
                    if let Some(dx) = dx.as_mut() {
                        *dx = matmul_nt(g, wv, h * w, cout, cin);
                    }
                } else {
                    let step = chunk_rows(w, patch);
                    let mut y0 = 0;
                    while y0 < h {
                        let y1 = (y0 + step).min(h);
                        let rows = (y1 - y0) * w;
                        let gchunk = &g[y0 * w * cout..y1 * w * cout];
                        if let Some(dw) = dw.as_mut() {
                            let col = im2col_rows(xv, (h, w, cin), k, y0, y1);
                            gemm(
                                patch,
                                rows,
                                cout,
                                1.0,
                                &col,
                                1,
                                patch as isize,
                                gchunk,
                                cout as isize,
                                1,
                                1.0,
                                dw,
                            );
                        }
                        if let Some(dx) = dx.as_mut() {
                            let dcol = matmul_nt(gchunk, wv, rows, cout, patch);
                            col2im_accumulate(&dcol, (h, w, cin), k, y0, y1, dx);
                        }
                        y0 = y1;
                    }
                }
                let mut result = vec![
                    dx.map(|d| Tensor::new(&[h, w, cin], d).unwrap()),
                    dw.map(|d| Tensor::new(&[patch, cout], d).unwrap()),
                ];
                if has_bias {
                    let bshape = ctx.inputs[2].shape().to_vec();
                    let mut db = vec![0.0; cout];
                    for px in g.chunks(cout) {
                        for (a, v) in db.iter_mut().zip(px) {
                            *a += v;
                        }
                    }
                    result.push(Some(Tensor::new(&bshape, db).unwrap()));
                }
                result
            }),
        ))
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = as_map(self.value(x))?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(format!("max_pool2 on {h}×{w}")));
        }
        let xv = self.value(x).data();
        let mut out = vec![0.0; oh * ow * c];
        let mut arg = vec![0usize; oh * ow * c];
        for y in 0..oh {
            for xo in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((2 * y + dy) * w + 2 * xo + dx) * c + ch;
                            if xv[i] > best {
                                best = xv[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (y * ow + xo) * c + ch;
                    out[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        let out = Tensor::new(&[oh, ow, c], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let mut gx = vec![0.0; h * w * c];
                for (o, &g) in ctx.grad.data().iter().enumerate() {
                    gx[arg[o]] += g;
                }
                vec![Some(Tensor::new(&[h, w, c], gx).unwrap())]
            }),
        ))
    }

    /// Per-channel maximum over all spatial positions, as a 1×C row.
    /// Ties resolve to the first position in row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (h, w, c) = as_map(self.value(x))?;
        if h * w == 0 {
            return Err(Error::shape("global_max_pool on an empty map"));
        }
        let xv = self.value(x).data();
        let mut best = vec![f64::NEG_INFINITY; c];
        let mut arg = vec![0usize; c];
        for (p, px) in xv.chunks(c).enumerate() {
            for ch in 0..c {
                if px[ch] > best[ch] {
                    best[ch] = px[ch];
                    arg[ch] = p * c + ch;
                }
            }
        }
        let out = Tensor::new(&[1, c], best)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let mut gx = vec![0.0; h * w * c];
                for (ch, &g) in ctx.grad.data().iter().enumerate() {
                    gx[arg[ch]] += g;
                }
                vec![Some(Tensor::new(&[h, w, c], gx).unwrap())]
            }),
        ))
    }

    /// Adaptive average pooling to `oh × ow`; bin `i` covers input rows
    /// `[⌊i·H/oh⌋, ⌈(i+1)·H/oh⌉)` and likewise for columns.
    pub fn adaptive_avg_pool(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (h, w, c) = as_map(self.value(x))?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("adaptive_avg_pool {h}×{w} → {oh}×{ow}")));
        }
        let bins = |i: usize, inp: usize, outp: usize| {
            let start = i * inp / outp;
            let end = ((i + 1) * inp).div_ceil(outp);
            (start, end)
        };
        let xv = self.value(x).data();
        let mut out = vec![0.0; oh * ow * c];
        for i in 0..oh {
            let (y0, y1) = bins(i, h, oh);
            for j in 0..ow {
                let (x0, x1) = bins(j, w, ow);
                let count = ((y1 - y0) * (x1 - x0)) as f64;
                let o = (i * ow + j) * c;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let s = (y * w + xx) * c;
                        for ch in 0..c {
                            out[o + ch] += xv[s + ch];
                        }
                    }
                }
                for ch in 0..c {
                    out[o + ch] /= count;
                }
            }
        }
        let out = Tensor::new(&[oh, ow, c], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; h * w * c];
                for i in 0..oh {
                    let (y0, y1) = bins(i, h, oh);
                    for j in 0..ow {
                        let (x0, x1) = bins(j, w, ow);
                        let count = ((y1 - y0) * (x1 - x0)) as f64;
                        let o = (i * ow + j) * c;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                let s = (y * w + xx) * c;
                                for ch in 0..c {
                                    gx[s + ch] += g[o + ch] / count;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[h, w, c], gx).unwrap())]
            }),
        ))
    }

    /// Bilinear resize to `oh × ow` with half-pixel centers
    /// (`align_corners = false` semantics).
    pub fn upsample_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (h, w, c) = as_map(self.value(x))?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("bilinear resize {h}×{w} → {oh}×{ow}")));
        }
        let ys = bilinear_taps(h, oh);
        let xs = bilinear_taps(w, ow);
        let xv = self.value(x).data();
        let mut out = vec![0.0; oh * ow * c];
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let o = (oy * ow + ox) * c;
                let taps = [
                    ((y0 * w + x0) * c, (1.0 - ly) * (1.0 - lx)),
                    ((y0 * w + x1) * c, (1.0 - ly) * lx),
                    ((y1 * w + x0) * c, ly * (1.0 - lx)),
                    ((y1 * w + x1) * c, ly * lx),
                ];
                for (s, wt) in taps {
                    for ch in 0..c {
                        out[o + ch] += wt * xv[s + ch];
                    }
                }
            }
        }
        let out = Tensor::new(&[oh, ow, c], out)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let mut gx = vec![0.0; h * w * c];
                for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                        let o = (oy * ow + ox) * c;
                        let taps = [
                            ((y0 * w + x0) * c, (1.0 - ly) * (1.0 - lx)),
                            ((y0 * w + x1) * c, (1.0 - ly) * lx),
                            ((y1 * w + x0) * c, ly * (1.0 - lx)),
                            ((y1 * w + x1) * c, ly * lx),
                        ];
                        for (s, wt) in taps {
                            for ch in 0..c {
                                gx[s + ch] += wt * g[o + ch];
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[h, w, c], gx).unwrap())]
            }),
        ))
    }

    /// Tile equally-shaped maps into a `rows × cols` mosaic; tile `t` lands at
    /// grid cell `(t / cols, t % cols)`.
    pub fn mosaic(&mut self, tiles: &[Var], rows: usize, cols: usize) -> Result<Var> {
        if tiles.len() != rows * cols || tiles.is_empty() {
            return Err(Error::shape(format!(
                "mosaic of {} tiles into {rows}×{cols}",
                tiles.len()
            )));
        }
        let (h, w, c) = as_map(self.value(tiles[0]))?;
        for &t in tiles {
            if as_map(self.value(t))? != (h, w, c) {
                return Err(Error::shape("mosaic tiles differ in shape"));
            }
        }
        let (mh, mw) = (rows * h, cols * w);
        let mut out = vec![0.0; mh * mw * c];
        for (t, &tile) in tiles.iter().enumerate() {
            let (ty, tx) = (t / cols, t % cols);
            let tv = self.value(tile).data();
            for y in 0..h {
                let dst = ((ty * h + y) * mw + tx * w) * c;
                out[dst..dst + w * c].copy_from_slice(&tv[y * w * c..(y + 1) * w * c]);
            }
        }
        let out = Tensor::new(&[mh, mw, c], out)?;
        Ok(self.custom(
            tiles,
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                (0..rows * cols)
                    .map(|t| {
                        ctx.needs[t].then(|| {
                            let (ty, tx) = (t / cols, t % cols);
                            let mut d = Vec::with_capacity(h * w * c);
                            for y in 0..h {
                                let src = ((ty * h + y) * mw + tx * w) * c;
                                d.extend_from_slice(&g[src..src + w * c]);
                            }
                            Tensor::new(&[h, w, c], d).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Multiply every channel of an H×W×C map by a constant H×W mask.
    pub fn mul_spatial(&mut self, x: Var, mask: &Tensor) -> Result<Var> {
        let (h, w, c) = as_map(self.value(x))?;
        if mask.shape() != [h, w] {
            return Err(Error::shape(format!(
                "spatial mask {:?} for a {h}×{w} map",
                mask.shape()
            )));
        }
        let m = mask.data().to_vec();
        let mut out = self.value(x).clone();
        for (px, &mv) in out.data_mut().chunks_mut(c).zip(&m) {
            for v in px.iter_mut() {
                *v *= mv;
            }
        }
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let mut gx = ctx.grad.clone();
                for (px, &mv) in gx.data_mut().chunks_mut(c).zip(&m) {
                    for v in px.iter_mut() {
                        *v *= mv;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// Per output index: (lower source index, upper source index, upper weight).
fn bilinear_taps(inp: usize, outp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / outp as f64;
    (0..outp)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            let lambda = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, lambda)
        })
        .collect()
}
