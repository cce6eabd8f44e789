use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

fn as_matrix(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(format!("expected a matrix, got {:?}", t.shape()))),
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Graph {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|ctx: &BackwardCtx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data = va.iter().zip(vb).map(|(x, y)| x - y).collect();
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|ctx: &BackwardCtx| vec![Some(ctx.grad.clone()), Some(ctx.grad.scale(-1.0))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let data = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        let out = Tensor::new(self.shape(a), data)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let (xa, xb) = (ctx.inputs[0], ctx.inputs[1]);
                let ga = ctx.needs[0].then(|| {
                    Tensor::from_fn(xa.shape(), |i| g[i] * xb.data()[i])
                });
                let gb = ctx.needs[1].then(|| {
                    Tensor::from_fn(xb.shape(), |i| g[i] * xa.data()[i])
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| vec![Some(ctx.grad.scale(s))]),
        )
    }

    /// Linear combination `Σ wᵢ xᵢ` of same-shaped tensors.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: &[f64]) -> Result<Var> {
        if xs.is_empty() || xs.len() != weights.len() {
            return Err(Error::invalid("weighted_sum needs matching non-empty inputs"));
        }
        for &x in &xs[1..] {
            self.same_shape(xs[0], x, "weighted_sum")?;
        }
        let mut out = Tensor::zeros(self.shape(xs[0]));
        for (&x, &w) in xs.iter().zip(weights) {
            for (o, v) in out.data_mut().iter_mut().zip(self.value(x).data()) {
                *o += w * v;
            }
        }
        let weights = weights.to_vec();
        Ok(self.custom(
            xs,
            out,
            Box::new(move |ctx: &BackwardCtx| {
                weights
                    .iter()
                    .zip(&ctx.needs)
                    .map(|(&w, &need)| need.then(|| ctx.grad.scale(w)))
                    .collect()
            }),
        ))
    }

    /// Add a bias vector of length C to every row of an R×C matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = as_matrix(self.value(x))?;
        if self.value(bias).numel() != c {
            return Err(Error::shape(format!(
                "bias of {} elements for {} columns",
                self.value(bias).numel(),
                c
            )));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let bias_shape = self.shape(bias).to_vec();
        Ok(self.custom(
            &[x, bias],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let gb = ctx.needs[1].then(|| {
                    let mut acc = vec![0.0; c];
                    for row in ctx.grad.data().chunks(c) {
                        for (a, g) in acc.iter_mut().zip(row) {
                            *a += g;
                        }
                    }
                    Tensor::new(&bias_shape, acc).expect("bias shape")
                });
                vec![Some(ctx.grad.clone()), gb]
            }),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a))?;
        let (k2, n) = as_matrix(self.value(b))?;
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}×{k} by {k2}×{n}")));
        }
        let out = Tensor::new(&[m, n], matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n))?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let ga = ctx.needs[0].then(|| {
                    // dA = dC · Bᵀ
                    Tensor::new(&[m, k], matmul_nt(g, ctx.inputs[1].data(), m, n, k)).unwrap()
                });
                let gb = ctx.needs[1].then(|| {
                    // dB = Aᵀ · dC
                    Tensor::new(&[k, n], matmul_tn(ctx.inputs[0].data(), g, k, m, n)).unwrap()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `a · bᵀ` for a: m×k, b: n×k.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a))?;
        let (n, k2) = as_matrix(self.value(b))?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_nt {m}×{k} by ({n}×{k2})ᵀ")));
        }
        let out = Tensor::new(&[m, n], matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n))?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                // C = A Bᵀ ⇒ dA = dC · B, dB = dCᵀ · A
                let ga = ctx.needs[0]
                    .then(|| Tensor::new(&[m, k], matmul_nn(g, ctx.inputs[1].data(), m, n, k)).unwrap());
                let gb = ctx.needs[1]
                    .then(|| Tensor::new(&[n, k], matmul_tn(g, ctx.inputs[0].data(), n, m, k)).unwrap());
                vec![ga, gb]
            }),
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.custom(
            &[x],
            out,
            Box::new(|ctx: &BackwardCtx| {
                let xv = ctx.inputs[0].data();
                let g = ctx.grad.data();
                vec![Some(Tensor::from_fn(ctx.grad.shape(), |i| {
                    if xv[i] > 0.0 {
                        g[i]
                    } else {
                        0.0
                    }
                }))]
            }),
        )
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        self.custom(
            &[x],
            out,
            Box::new(|ctx: &BackwardCtx| {
                let xv = ctx.inputs[0].data();
                let g = ctx.grad.data();
                vec![Some(Tensor::from_fn(ctx.grad.shape(), |i| g[i] * gelu_grad(xv[i])))]
            }),
        )
    }

    /// Layer normalization over the last axis of an R×C matrix, with an
    /// optional per-column affine transform.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: f64) -> Result<Var> {
        let (r, c) = as_matrix(self.value(x))?;
        if let Some((gamma, beta)) = affine {
            if self.value(gamma).numel() != c || self.value(beta).numel() != c {
                return Err(Error::shape(format!("layer_norm affine params must have {c} entries")));
            }
        }
        let xv = self.value(x).data();
        let mut normed = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                normed[i * c + j] = (row[j] - mean) * is;
            }
        }
        let normed = Tensor::new(&[r, c], normed)?;
        let mut out = normed.clone();
        let mut inputs = vec![x];
        if let Some((gamma, beta)) = affine {
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            for row in out.data_mut().chunks_mut(c) {
                for j in 0..c {
                    row[j] = row[j] * gv[j] + bv[j];
                }
            }
            inputs.push(gamma);
            inputs.push(beta);
        }
        let has_affine = affine.is_some();
        Ok(self.custom(
            &inputs,
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let nd = normed.data();
                // gradient with respect to the normalized values
                let gn: Vec<f64> = if has_affine {
                    let gamma = ctx.inputs[1].data();
                    (0..r * c).map(|i| g[i] * gamma[i % c]).collect()
                } else {
                    g.to_vec()
                };
                let mut gx = vec![0.0; r * c];
                if ctx.needs[0] {
                    for i in 0..r {
                        let gr = &gn[i * c..(i + 1) * c];
                        let nr = &nd[i * c..(i + 1) * c];
                        let mean_g = gr.iter().sum::<f64>() / c as f64;
                        let mean_gn = gr.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] = inv_std[i] * (gr[j] - mean_g - nr[j] * mean_gn);
                        }
                    }
                }
                let mut result = vec![ctx.needs[0].then(|| Tensor::new(&[r, c], gx).unwrap())];
                if has_affine {
                    let gshape = ctx.inputs[1].shape().to_vec();
                    let bshape = ctx.inputs[2].shape().to_vec();
                    let mut ggamma = vec![0.0; c];
                    let mut gbeta = vec![0.0; c];
                    for i in 0..r * c {
                        ggamma[i % c] += g[i] * nd[i];
                        gbeta[i % c] += g[i];
                    }
                    result.push(Some(Tensor::new(&gshape, ggamma).unwrap()));
                    result.push(Some(Tensor::new(&bshape, gbeta).unwrap()));
                }
                result
            }),
        ))
    }

    /// Row-wise softmax of an R×C matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, c) = as_matrix(self.value(x))?;
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let y = ctx.output.data();
                let g = ctx.grad.data();
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Some(Tensor::new(ctx.output.shape(), gx).unwrap())]
            }),
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = as_matrix(self.value(x))?;
        if start + len > c {
            return Err(Error::shape(format!("column slice {start}+{len} of {c}")));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(&[r, len], data)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let mut gx = Tensor::zeros(&[r, c]);
                let g = ctx.grad.data();
                let d = gx.data_mut();
                for i in 0..r {
                    d[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = as_matrix(self.value(x))?;
        if start + len > r {
            return Err(Error::shape(format!("row slice {start}+{len} of {r}")));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(&[len, c], data)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let mut gx = Tensor::zeros(&[r, c]);
                gx.data_mut()[start * c..(start + len) * c].copy_from_slice(ctx.grad.data());
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenate matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat_cols of nothing"));
        }
        let mut widths = Vec::with_capacity(xs.len());
        let (r, _) = as_matrix(self.value(xs[0]))?;
        for &x in xs {
            let (ri, ci) = as_matrix(self.value(x))?;
            if ri != r {
                return Err(Error::shape(format!("concat_cols rows {ri} vs {r}")));
            }
            widths.push(ci);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let xv = self.value(x).data();
            for i in 0..r {
                data[i * total + offset..i * total + offset + w].copy_from_slice(&xv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor::new(&[r, total], data)?;
        Ok(self.custom(
            xs,
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let mut offset = 0;
                let mut result = Vec::with_capacity(widths.len());
                for (&w, &need) in widths.iter().zip(&ctx.needs) {
                    if need {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        result.push(Some(Tensor::new(&[r, w], d).unwrap()));
                    } else {
                        result.push(None);
                    }
                    offset += w;
                }
                result
            }),
        ))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::invalid("concat_rows of nothing"));
        }
        let (_, c) = as_matrix(self.value(xs[0]))?;
        let mut heights = Vec::with_capacity(xs.len());
        let mut data = Vec::new();
        for &x in xs {
            let (ri, ci) = as_matrix(self.value(x))?;
            if ci != c {
                return Err(Error::shape(format!("concat_rows cols {ci} vs {c}")));
            }
            heights.push(ri);
            data.extend_from_slice(self.value(x).data());
        }
        let total: usize = heights.iter().sum();
        let out = Tensor::new(&[total, c], data)?;
        Ok(self.custom(
            xs,
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                let mut offset = 0;
                let mut result = Vec::with_capacity(heights.len());
                for (&h, &need) in heights.iter().zip(&ctx.needs) {
                    result.push(need.then(|| {
                        Tensor::new(&[h, c], g[offset * c..(offset + h) * c].to_vec()).unwrap()
                    }));
                    offset += h;
                }
                result
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let orig = self.shape(x).to_vec();
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| vec![Some(ctx.grad.clone().reshape(&orig).unwrap())]),
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.value(x))?;
        let xv = self.value(x).data();
        let out = Tensor::from_fn(&[c, r], |i| xv[(i % r) * c + i / r]);
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                vec![Some(Tensor::from_fn(&[r, c], |i| g[(i % c) * r + i / c]))]
            }),
        ))
    }

    /// Column means of an R×C matrix, as a 1×C row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.value(x))?;
        if r == 0 {
            return Err(Error::shape("mean over zero rows"));
        }
        let mut acc = vec![0.0; c];
        for row in self.value(x).data().chunks(c) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= r as f64;
        }
        let out = Tensor::new(&[1, c], acc)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.data();
                vec![Some(Tensor::from_fn(&[r, c], |i| g[i % c] / r as f64))]
            }),
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let shape = self.shape(x).to_vec();
        self.custom(
            &[x],
            out,
            Box::new(move |ctx: &BackwardCtx| vec![Some(Tensor::full(&shape, ctx.grad.item()))]),
        )
    }

    /// Mean squared error against a constant target of the same length.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(Error::shape(format!(
                "mse over {} predictions and {} targets",
                p.len(),
                target.len()
            )));
        }
        let n = p.len() as f64;
        let value = p.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let target = target.to_vec();
        Ok(self.custom(
            &[pred],
            Tensor::scalar(value),
            Box::new(move |ctx: &BackwardCtx| {
                let g = ctx.grad.item();
                let p = ctx.inputs[0];
                vec![Some(Tensor::from_fn(p.shape(), |i| {
                    2.0 * (p.data()[i] - target[i]) / n * g
                }))]
            }),
        ))
    }
}
