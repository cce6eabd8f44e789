//! Vision transformer over fused texture and depth patches, class-token
//! attention maps and the occupancy-weighted global feature.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, trunc_normal, Bound, ParamSet};
use crate::projector::VIEW_COUNT;
use crate::tensor::Tensor;

/// Prefix of every transformer parameter name.
pub const VIT_PREFIX: &str = "vit.";

const VIT_LN_EPS: f64 = 1e-6;
const ATTN_LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Number of transformer blocks `L`.
    pub depth: usize,
    pub heads: usize,
    pub d_out: usize,
    pub mlp_ratio: usize,
    /// Side of the (cropped) square view fed to the encoder.
    pub image_size: usize,
    /// Learnable scale and shift on the attention-map layer norm.
    pub attn_norm_affine: bool,
}

impl Default for EncoderConfig {
    /// ViT-B/16 at 224×224.
    fn default() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            d_out: 256,
            mlp_ratio: 4,
            image_size: 224,
            attn_norm_affine: true,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "patch size {} must divide image size {}",
                self.patch_size, self.image_size
            ));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.depth == 0 || self.d_out == 0 || self.mlp_ratio == 0 {
            return bad("depth, d_out and mlp_ratio must be positive".into());
        }
        Ok(())
    }
}

fn block(i: usize, part: &str) -> String {
    format!("{VIT_PREFIX}blocks.{i}.{part}")
}

/// Register and initialize every encoder parameter.
pub fn init_params<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R, p: &mut ParamSet) -> Result<()> {
    cfg.validate()?;
    let (d, pp, n) = (cfg.embed_dim, cfg.patch_size * cfg.patch_size, cfg.tokens());
    let hidden = d * cfg.mlp_ratio;
    let v = |s: &str| format!("{VIT_PREFIX}{s}");
    p.insert(v("cls_token"), trunc_normal(&[1, d], 0.02, rng));
    p.insert(v("pos_embed"), trunc_normal(&[n + 1, d], 0.02, rng));
    p.insert(v("patch_t.w"), fan_in_uniform(&[pp * 3, d], pp * 3, rng));
    p.insert(v("patch_t.b"), Tensor::zeros(&[d]));
    p.insert(v("patch_d.w"), fan_in_uniform(&[pp, d], pp, rng));
    p.insert(v("patch_d.b"), Tensor::zeros(&[d]));
    for i in 0..cfg.depth {
        for ln in ["norm1", "norm2"] {
            p.insert(block(i, &format!("{ln}.g")), Tensor::full(&[d], 1.0));
            p.insert(block(i, &format!("{ln}.b")), Tensor::zeros(&[d]));
        }
        for (name, fi, fo) in [("qkv", d, 3 * d), ("proj", d, d), ("fc1", d, hidden), ("fc2", hidden, d)] {
            p.insert(block(i, &format!("{name}.w")), trunc_normal(&[fi, fo], 0.02, rng));
            p.insert(block(i, &format!("{name}.b")), Tensor::zeros(&[fo]));
        }
    }
    p.insert("global.attn_norm.g", Tensor::full(&[cfg.heads], 1.0));
    p.insert("global.attn_norm.b", Tensor::zeros(&[cfg.heads]));
    p.insert("global.fuse.w", fan_in_uniform(&[cfg.heads, cfg.d_out], cfg.heads, rng));
    p.insert("global.fuse.b", Tensor::zeros(&[cfg.d_out]));
    Ok(())
}

fn linear(g: &mut Graph, b: &Bound, x: Var, name: &str) -> Result<Var> {
    let y = g.matmul(x, b.var(&format!("{name}.w")))?;
    g.add_row_bias(y, b.var(&format!("{name}.b")))
}

/// Token sequence `[x_c; PatchEmbed_t(p_t) + PatchEmbed_d(p_d)] + PE` of one view.
///
/// `texture` is n×n×3, `depth` is n×n×1; the result is (N+1)×D.
pub fn embed(g: &mut Graph, b: &Bound, cfg: &EncoderConfig, texture: Var, depth: Var) -> Result<Var> {
    let (ts, ds) = (g.shape(texture).to_vec(), g.shape(depth).to_vec());
    let n = cfg.image_size;
    if ts != [n, n, 3] || ds != [n, n, 1] {
        return Err(Error::shape(format!(
            "encoder expects {n}×{n}×3 texture and {n}×{n}×1 depth, got {ts:?} and {ds:?}"
        )));
    }
    let pt = g.patchify(texture, cfg.patch_size)?;
    let pd = g.patchify(depth, cfg.patch_size)?;
    let et = linear(g, b, pt, "vit.patch_t")?;
    let ed = linear(g, b, pd, "vit.patch_d")?;
    let tokens = g.add(et, ed)?;
    let z = g.concat_rows(&[b.var("vit.cls_token"), tokens])?;
    g.add(z, b.var("vit.pos_embed"))
}

/// Pre-norm transformer blocks. Returns the final tokens and the last
/// block's per-head attention matrices, each (N+1)×(N+1).
pub fn encode(g: &mut Graph, b: &Bound, cfg: &EncoderConfig, z0: Var) -> Result<(Var, Vec<Var>)> {
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut z = z0;
    let mut last = Vec::new();
    for i in 0..cfg.depth {
        let h = g.layer_norm(z, Some((b.var(&block(i, "norm1.g")), b.var(&block(i, "norm1.b")))), VIT_LN_EPS)?;
        let qkv = linear(g, b, h, &block(i, "qkv"))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        let mut attn = Vec::with_capacity(cfg.heads);
        for j in 0..cfg.heads {
            let q = g.slice_cols(qkv, j * dh, dh)?;
            let k = g.slice_cols(qkv, d + j * dh, dh)?;
            let v = g.slice_cols(qkv, 2 * d + j * dh, dh)?;
            let s = g.matmul_nt(q, k)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s)?;
            heads.push(g.matmul(a, v)?);
            attn.push(a);
        }
        let o = g.concat_cols(&heads)?;
        let o = linear(g, b, o, &block(i, "proj"))?;
        z = g.add(z, o)?;
        let h = g.layer_norm(z, Some((b.var(&block(i, "norm2.g")), b.var(&block(i, "norm2.b")))), VIT_LN_EPS)?;
        let h = linear(g, b, h, &block(i, "fc1"))?;
        let h = g.gelu(h);
        let h = linear(g, b, h, &block(i, "fc2"))?;
        z = g.add(z, h)?;
        if !g.value(z).all_finite() || attn.iter().any(|&a| !g.value(a).all_finite()) {
            return Err(Error::NonFiniteActivation { block: i });
        }
        last = attn;
    }
    Ok((z, last))
}

/// Class-token attention of each head without the self entry, laid out as a
/// grid × grid × N_h map and layer-normalized across heads per location.
pub fn extract_class_attention(g: &mut Graph, b: &Bound, cfg: &EncoderConfig, attn: &[Var]) -> Result<Var> {
    if attn.len() != cfg.heads {
        return Err(Error::shape(format!("{} attention heads, config has {}", attn.len(), cfg.heads)));
    }
    let rows = g.shape(attn[0])[0];
    let n = rows - 1;
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::shape(format!("{n} patch tokens do not form a square grid")));
    }
    let mut cls = Vec::with_capacity(attn.len());
    for &a in attn {
        let r = g.slice_rows(a, 0, 1)?;
        cls.push(g.slice_cols(r, 1, n)?);
    }
    let stacked = g.concat_rows(&cls)?;
    let per_cell = g.transpose(stacked)?;
    let affine = cfg
        .attn_norm_affine
        .then(|| (b.var("global.attn_norm.g"), b.var("global.attn_norm.b")));
    let normed = g.layer_norm(per_cell, affine, ATTN_LN_EPS)?;
    g.reshape(normed, &[side, side, cfg.heads])
}

/// Per-view feature: 1×1 conv to D_o channels, then average pooling; 1×D_o.
pub fn view_feature(g: &mut Graph, b: &Bound, map: Var) -> Result<Var> {
    let y = g.conv2d(map, b.var("global.fuse.w"), Some(b.var("global.fuse.b")), 1)?;
    let s = g.shape(y).to_vec();
    let flat = g.reshape(y, &[s[0] * s[1], s[2]])?;
    g.mean_rows(flat)
}

/// Occupancy-weighted mean `Σ wᵢ fᵢ / Σ wᵢ` of per-view features.
pub fn fuse_views(g: &mut Graph, features: &[Var], ratios: &[f64]) -> Result<Var> {
    if features.len() != ratios.len() || features.is_empty() {
        return Err(Error::shape("one occupancy ratio per view feature is required"));
    }
    if ratios.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid("occupancy ratios must be finite and non-negative"));
    }
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all occupancy ratios are zero (blank sample)"));
    }
    let w: Vec<f64> = ratios.iter().map(|r| r / total).collect();
    g.weighted_sum(features, &w)
}

pub fn global_feature(g: &mut Graph, b: &Bound, maps: &[Var], ratios: &[f64; VIEW_COUNT]) -> Result<Var> {
    if maps.len() != VIEW_COUNT {
        return Err(Error::shape(format!("expected {VIEW_COUNT} view maps, got {}", maps.len())));
    }
    let feats = maps
        .iter()
        .map(|&m| view_feature(g, b, m))
        .collect::<Result<Vec<_>>>()?;
    fuse_views(g, &feats, ratios)
}

/// Load timm-style ViT weights from a safetensors file into `p`.
///
/// Texture patch embedding takes `patch_embed.proj.*` directly; the depth
/// patch embedding is set to the mean of its RGB input channels.
pub fn load_pretrained(path: &Path, cfg: &EncoderConfig, p: &mut ParamSet) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let st = safetensors::SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let fetch = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let t = st
            .tensor(name)
            .map_err(|e| Error::invalid(format!("pretrained tensor `{name}`: {e}")))?;
        let data = match t.dtype() {
            safetensors::Dtype::F32 => t
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            safetensors::Dtype::F64 => t
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            other => return Err(Error::invalid(format!("`{name}` has unsupported dtype {other:?}"))),
        };
        Ok((t.shape().to_vec(), data))
    };
    let (d, ps) = (cfg.embed_dim, cfg.patch_size);
    let expect = |name: &str, shape: &[usize], want: &[usize]| -> Result<()> {
        if shape != want {
            return Err(Error::shape(format!("pretrained `{name}` is {shape:?}, expected {want:?}")));
        }
        Ok(())
    };
    // torch linear weights are out × in; ours are in × out
    let linear_t = |name: &str, fi: usize, fo: usize| -> Result<Tensor> {
        let (s, w) = fetch(name)?;
        expect(name, &s, &[fo, fi])?;
        Ok(Tensor::from_fn(&[fi, fo], |i| w[(i % fo) * fi + i / fo]))
    };
    let vector = |name: &str, len: usize| -> Result<Tensor> {
        let (s, w) = fetch(name)?;
        expect(name, &s, &[len])?;
        Tensor::new(&[len], w)
    };

    let (s, w) = fetch("cls_token")?;
    expect("cls_token", &s, &[1, 1, d])?;
    p.assign("vit.cls_token", Tensor::new(&[1, d], w)?)?;
    let (s, w) = fetch("pos_embed")?;
    expect("pos_embed", &s, &[1, cfg.tokens() + 1, d])?;
    p.assign("vit.pos_embed", Tensor::new(&[cfg.tokens() + 1, d], w)?)?;

    let (s, w) = fetch("patch_embed.proj.weight")?;
    expect("patch_embed.proj.weight", &s, &[d, 3, ps, ps])?;
    let at = |o: usize, c: usize, y: usize, x: usize| w[((o * 3 + c) * ps + y) * ps + x];
    let wt = Tensor::from_fn(&[ps * ps * 3, d], |i| {
        let (row, o) = (i / d, i % d);
        let (y, x, c) = (row / (ps * 3), (row / 3) % ps, row % 3);
        at(o, c, y, x)
    });
    let wd = Tensor::from_fn(&[ps * ps, d], |i| {
        let (row, o) = (i / d, i % d);
        let (y, x) = (row / ps, row % ps);
        (0..3).map(|c| at(o, c, y, x)).sum::<f64>() / 3.0
    });
    p.assign("vit.patch_t.w", wt)?;
    p.assign("vit.patch_d.w", wd)?;
    p.assign("vit.patch_t.b", vector("patch_embed.proj.bias", d)?)?;

    let hidden = d * cfg.mlp_ratio;
    for i in 0..cfg.depth {
        let src = |s: &str| format!("blocks.{i}.{s}");
        for (ours, theirs) in [("norm1", "norm1"), ("norm2", "norm2")] {
            p.assign(&block(i, &format!("{ours}.g")), vector(&src(&format!("{theirs}.weight")), d)?)?;
            p.assign(&block(i, &format!("{ours}.b")), vector(&src(&format!("{theirs}.bias")), d)?)?;
        }
        for (ours, theirs, fi, fo) in [
            ("qkv", "attn.qkv", d, 3 * d),
            ("proj", "attn.proj", d, d),
            ("fc1", "mlp.fc1", d, hidden),
            ("fc2", "mlp.fc2", hidden, d),
        ] {
            p.assign(&block(i, &format!("{ours}.w")), linear_t(&src(&format!("{theirs}.weight")), fi, fo)?)?;
            p.assign(&block(i, &format!("{ours}.b")), vector(&src(&format!("{theirs}.bias")), fo)?)?;
        }
    }
    log::info!("loaded pretrained transformer weights from {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            patch_size: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            d_out: 3,
            mlp_ratio: 2,
            image_size: 8,
            attn_norm_affine: true,
        }
    }

    fn params(cfg: &EncoderConfig, seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        init_params(cfg, &mut ChaCha8Rng::seed_from_u64(seed), &mut p).unwrap();
        p
    }

    fn image(n: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[n, n, c], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn token_counts() {
        let cfg = EncoderConfig {
            embed_dim: 16,
            depth: 1,
            heads: 4,
            d_out: 8,
            ..EncoderConfig::default()
        };
        assert_eq!(cfg.tokens(), 196);
        let p = params(&cfg, 0);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let t = g.constant(image(224, 3, 1));
        let d = g.constant(image(224, 1, 2));
        let z = embed(&mut g, &b, &cfg, t, d).unwrap();
        assert_eq!(g.shape(z), &[197, 16]);
        let (_, attn) = encode(&mut g, &b, &cfg, z).unwrap();
        assert_eq!(attn.len(), 4);
        assert_eq!(g.shape(attn[0]), &[197, 197]);
        let ac = extract_class_attention(&mut g, &b, &cfg, &attn).unwrap();
        assert_eq!(g.shape(ac), &[14, 14, 4]);
    }

    #[test]
    fn zero_patches_give_bias_plus_position() {
        let cfg = tiny();
        let mut p = params(&cfg, 3);
        p.assign("vit.patch_t.b", Tensor::full(&[8], 0.25)).unwrap();
        p.assign("vit.patch_d.w", Tensor::zeros(&[16, 8])).unwrap();
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let t = g.constant(Tensor::zeros(&[8, 8, 3]));
        let d = g.constant(Tensor::zeros(&[8, 8, 1]));
        let z = embed(&mut g, &b, &cfg, t, d).unwrap();
        let pe = p.get("vit.pos_embed").unwrap();
        for tok in 1..5 {
            for c in 0..8 {
                assert!((g.value(z).get(&[tok, c]) - (0.25 + pe.get(&[tok, c]))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions_and_deterministic() {
        let cfg = EncoderConfig { depth: 2, ..tiny() };
        let p = params(&cfg, 5);
        let run = || {
            let mut g = Graph::new();
            let b = p.bind_frozen(&mut g);
            let t = g.constant(image(8, 3, 6));
            let d = g.constant(image(8, 1, 7));
            let z = embed(&mut g, &b, &cfg, t, d).unwrap();
            let (zl, attn) = encode(&mut g, &b, &cfg, z).unwrap();
            let a: Vec<Tensor> = attn.iter().map(|&a| g.value(a).clone()).collect();
            (g.value(zl).clone(), a)
        };
        let (z1, a1) = run();
        let (z2, a2) = run();
        assert_eq!(z1, z2);
        assert_eq!(a1, a2);
        for a in &a1 {
            for row in a.data().chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    /// Independent evaluation of one pre-norm attention block on two tokens.
    #[test]
    fn single_head_matches_closed_form() {
        let cfg = EncoderConfig {
            patch_size: 1,
            embed_dim: 8,
            depth: 1,
            heads: 1,
            d_out: 1,
            mlp_ratio: 1,
            image_size: 1,
            attn_norm_affine: false,
        };
        let p = params(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z0 = Tensor::from_fn(&[2, 8], |_| rng.gen_range(-1.0..1.0));

        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let zv = g.constant(z0.clone());
        let (_, attn) = encode(&mut g, &b, &cfg, zv).unwrap();
        let got = g.value(attn[0]).clone();

        let w = p.get("vit.blocks.0.qkv.w").unwrap();
        let bias = p.get("vit.blocks.0.qkv.b").unwrap();
        let norm = |row: &[f64]| -> Vec<f64> {
            let m = row.iter().sum::<f64>() / 8.0;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 8.0;
            row.iter().map(|x| (x - m) / (v + 1e-6).sqrt()).collect()
        };
        let proj = |h: &[f64], off: usize| -> Vec<f64> {
            (0..8)
                .map(|o| bias.data()[off + o] + (0..8).map(|i| h[i] * w.get(&[i, off + o])).sum::<f64>())
                .collect()
        };
        let h: Vec<Vec<f64>> = (0..2).map(|t| norm(&z0.data()[t * 8..t * 8 + 8])).collect();
        let q: Vec<_> = h.iter().map(|x| proj(x, 0)).collect();
        let k: Vec<_> = h.iter().map(|x| proj(x, 8)).collect();
        for i in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / 8f64.sqrt())
                .collect();
            let e0 = 1.0 / (1.0 + (s[1] - s[0]).exp());
            assert!((got.get(&[i, 0]) - e0).abs() < 1e-12);
            assert!((got.get(&[i, 1]) - (1.0 - e0)).abs() < 1e-12);
        }
    }

    fn attn_from_rows(g: &mut Graph, rows: &[Vec<f64>]) -> Vec<Var> {
        rows.iter()
            .map(|r| {
                let n = r.len();
                let t = Tensor::from_fn(&[n, n], |i| r[i % n]);
                g.constant(t)
            })
            .collect()
    }

    #[test]
    fn uniform_attention_normalizes_to_zero() {
        let cfg = EncoderConfig { heads: 2, ..tiny() };
        let p = params(&cfg, 0);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let attn = attn_from_rows(&mut g, &[vec![0.2; 5], vec![0.2; 5]]);
        let ac = extract_class_attention(&mut g, &b, &cfg, &attn).unwrap();
        assert_eq!(g.shape(ac), &[2, 2, 2]);
        assert!(g.value(ac).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_hot_head_lands_on_its_cell() {
        let cfg = EncoderConfig {
            heads: 2,
            attn_norm_affine: false,
            ..tiny()
        };
        let p = params(&cfg, 0);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        // patch index 2 is grid cell (1, 0)
        let mut hot = vec![0.0; 5];
        hot[3] = 1.0;
        let attn = attn_from_rows(&mut g, &[hot, vec![0.2; 5]]);
        let ac = extract_class_attention(&mut g, &b, &cfg, &attn).unwrap();
        let v = g.value(ac);
        for cell in 0..4 {
            let (y, x) = (cell / 2, cell % 2);
            let h0 = v.get(&[y, x, 0]);
            assert_eq!(h0 > 0.0, cell == 2, "cell {cell}");
        }
    }

    #[test]
    fn non_square_grid_rejected() {
        let cfg = tiny();
        let p = params(&cfg, 0);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let attn = attn_from_rows(&mut g, &[vec![1.0 / 6.0; 6], vec![1.0 / 6.0; 6]]);
        assert!(extract_class_attention(&mut g, &b, &cfg, &attn).is_err());
    }

    #[test]
    fn fusion_examples() {
        let mut g = Graph::new();
        let f: Vec<Var> = [3.0, 6.0, 100.0, 100.0, 100.0, 100.0]
            .iter()
            .map(|&v| g.constant(Tensor::full(&[1, 1], v)))
            .collect();
        let out = fuse_views(&mut g, &f, &[2.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((g.value(out).item() - 4.0).abs() < 1e-15);
        let out = fuse_views(&mut g, &f, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.value(out).item(), 3.0);
        assert!(fuse_views(&mut g, &f, &[0.0; 6]).is_err());
        let same: Vec<Var> = (0..6).map(|_| g.constant(Tensor::full(&[1, 2], 1.5))).collect();
        let out = fuse_views(&mut g, &same, &[0.1, 0.3, 0.2, 0.9, 0.0, 0.4]).unwrap();
        assert!(g.value(out).data().iter().all(|v| (v - 1.5).abs() < 1e-14));
    }

    #[test]
    fn attention_mass_excludes_self_entry() {
        let cfg = tiny();
        let p = params(&cfg, 2);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let t = g.constant(image(8, 3, 1));
        let d = g.constant(image(8, 1, 2));
        let z = embed(&mut g, &b, &cfg, t, d).unwrap();
        let (_, attn) = encode(&mut g, &b, &cfg, z).unwrap();
        for &a in &attn {
            let row = &g.value(a).data()[..5];
            let grid: f64 = row[1..].iter().sum();
            assert!((grid - (1.0 - row[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_through_patch_pixels() {
        let cfg = tiny();
        let p = params(&cfg, 9);
        let depth = image(8, 1, 4);
        let err = max_rel_error(&image(8, 3, 3), 1e-5, 1e-7, |g, x| {
            let b = p.bind_frozen(g);
            let d = g.constant(depth.clone());
            let z = embed(g, &b, &cfg, x, d).unwrap();
            let (_, attn) = encode(g, &b, &cfg, z).unwrap();
            let ac = extract_class_attention(g, &b, &cfg, &attn).unwrap();
            let f = view_feature(g, &b, ac).unwrap();
            let w = g.constant(Tensor::new(&[1, 3], vec![0.7, -1.3, 0.4]).unwrap());
            let y = g.mul(f, w).unwrap();
            g.sum_all(y)
        });
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn non_finite_input_reports_block() {
        let cfg = tiny();
        let p = params(&cfg, 0);
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let mut t = image(8, 3, 0);
        t.data_mut()[0] = f64::NAN;
        let t = g.constant(t);
        let d = g.constant(image(8, 1, 0));
        let z = embed(&mut g, &b, &cfg, t, d).unwrap();
        match encode(&mut g, &b, &cfg, z) {
            Err(Error::NonFiniteActivation { block }) => assert_eq!(block, 0),
            other => panic!("expected non-finite error, got {:?}", other.map(|_| ())),
        }
    }
}
