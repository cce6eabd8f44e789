//! Synthetic point clouds with graded distortions and a pseudo-MOS.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloudio::{write_ply, ColorEncoding, PlyFormat, PointCloud};
use crate::datapack::{Manifest, ManifestEntry};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Primitive {
    Sphere,
    Cube,
    Cylinder,
    Torus,
}

impl Primitive {
    pub const ALL: [Primitive; 4] = [Primitive::Sphere, Primitive::Cube, Primitive::Cylinder, Primitive::Torus];

    /// Uniform-ish surface point of the unit-scale shape.
    fn point<R: Rng + ?Sized>(self, rng: &mut R) -> [f64; 3] {
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        match self {
            Primitive::Sphere => {
                let z = 2.0 * u - 1.0;
                let r = (1.0 - z * z).sqrt();
                [r * (TAU * v).cos(), r * (TAU * v).sin(), z]
            }
            Primitive::Cube => {
                let face = rng.gen_range(0..6);
                let (a, b) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Primitive::Cylinder => [(TAU * u).cos(), (TAU * u).sin(), 2.0 * v - 1.0],
            Primitive::Torus => {
                let (a, b) = (TAU * u, TAU * v);
                let r = 1.0 + 0.4 * b.cos();
                [r * a.cos(), r * a.sin(), 0.4 * b.sin()]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub contents: usize,
    /// Distortion levels per content, evenly spaced over `[0, 1]`.
    pub levels: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            contents: 4,
            levels: 4,
            points: 4000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthItem {
    pub id: String,
    pub content: String,
    pub level: f64,
    pub mos: f64,
    pub cloud: PointCloud,
}

/// Strictly decreasing in the distortion level, spanning the ACR range `[1, 5]`.
pub fn pseudo_mos(level: f64) -> f64 {
    5.0 - 4.0 * level
}

/// Geometry jitter, color noise and point dropping, all scaled by `level`.
pub fn distort<R: Rng + ?Sized>(pc: &PointCloud, level: f64, rng: &mut R) -> Result<PointCloud> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::invalid(format!("distortion level {level} outside [0, 1]")));
    }
    let keep = ((pc.len() as f64) * (1.0 - 0.6 * level)).round().max(1.0) as usize;
    let mut idx = sample(rng, pc.len(), keep).into_vec();
    idx.sort_unstable();
    let geo = Normal::new(0.0, 0.03 * level + 1e-12).expect("valid sigma");
    let col = Normal::new(0.0, 0.25 * level + 1e-12).expect("valid sigma");
    let mut positions = Vec::with_capacity(keep);
    let mut colors = Vec::with_capacity(keep);
    for i in idx {
        let p = pc.positions[i];
        let c = pc.colors[i];
        positions.push([p[0] + geo.sample(rng), p[1] + geo.sample(rng), p[2] + geo.sample(rng)]);
        colors.push([
            (c[0] + col.sample(rng)).clamp(0.0, 1.0),
            (c[1] + col.sample(rng)).clamp(0.0, 1.0),
            (c[2] + col.sample(rng)).clamp(0.0, 1.0),
        ]);
    }
    PointCloud::new(positions, colors, pc.name.clone())
}

/// A striped, randomly tinted primitive with random anisotropic scale.
pub fn reference_cloud<R: Rng + ?Sized>(shape: Primitive, points: usize, name: &str, rng: &mut R) -> Result<PointCloud> {
    let scale = [rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)];
    let base = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let freq = rng.gen_range(2.0..6.0);
    let mut positions = Vec::with_capacity(points);
    let mut colors = Vec::with_capacity(points);
    for _ in 0..points {
        let p = shape.point(rng);
        let stripe = 0.2 * (freq * (p[0] + p[2])).sin();
        positions.push([p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]]);
        colors.push([
            (base[0] + stripe).clamp(0.0, 1.0),
            (base[1] - stripe).clamp(0.0, 1.0),
            (base[2] + 0.5 * stripe).clamp(0.0, 1.0),
        ]);
    }
    PointCloud::new(positions, colors, name)
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    if cfg.contents == 0 || cfg.levels == 0 || cfg.points == 0 {
        return Err(Error::invalid("synthetic dataset sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.contents * cfg.levels);
    for c in 0..cfg.contents {
        let content = format!("c{c:02}");
        let shape = Primitive::ALL[c % Primitive::ALL.len()];
        let reference = reference_cloud(shape, cfg.points, &content, &mut rng)?;
        for l in 0..cfg.levels {
            let level = if cfg.levels == 1 { 0.0 } else { l as f64 / (cfg.levels - 1) as f64 };
            let id = format!("{content}_l{l}");
            let mut cloud = distort(&reference, level, &mut rng)?;
            cloud.name = id.clone();
            out.push(SynthItem {
                id,
                content: content.clone(),
                level,
                mos: pseudo_mos(level),
                cloud,
            });
        }
    }
    Ok(out)
}

/// Write `ply/<id>.ply` files and `manifest.csv` under `dir`; returns the loaded manifest.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Manifest> {
    let ply_dir = dir.join("ply");
    std::fs::create_dir_all(&ply_dir).map_err(|e| Error::io(&ply_dir, e))?;
    let mut entries = Vec::new();
    for item in generate(cfg)? {
        let rel = Path::new("ply").join(format!("{}.ply", item.id));
        write_ply(&item.cloud, dir.join(&rel), PlyFormat::BinaryLittleEndian, ColorEncoding::Uchar)?;
        entries.push(ManifestEntry {
            id: item.id,
            path: rel,
            content: item.content,
            mos: item.mos,
        });
    }
    let path = dir.join("manifest.csv");
    Manifest::new(entries)?.save(&path)?;
    Manifest::load(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_graded() {
        let cfg = SynthConfig {
            contents: 2,
            levels: 3,
            points: 500,
            seed: 4,
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.cloud, y.cloud);
        }
        assert_eq!(a[0].cloud.len(), 500);
        assert!(a[2].cloud.len() < a[1].cloud.len());
        assert_eq!((a[0].mos, a[2].mos), (5.0, 1.0));
    }

    #[test]
    fn pseudo_mos_is_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let m = pseudo_mos(i as f64 / 100.0);
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            contents: 2,
            levels: 2,
            points: 200,
            seed: 1,
        };
        let m = write_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.contents(), vec!["c00".to_string(), "c01".to_string()]);
        for e in m.entries() {
            let pc = crate::cloudio::load_ply(&e.path).unwrap();
            assert!(!pc.is_empty());
        }
    }
}
