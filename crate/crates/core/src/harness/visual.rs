//! PNG dumps of the guided mask and the per-head class attention.

use std::path::{Path, PathBuf};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::projector::{stitch, tile_of, ViewSet, VIEW_COUNT};
use crate::tensor::Tensor;

const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

pub fn region_color(r: usize) -> [u8; 3] {
    PALETTE[r % PALETTE.len()]
}

/// Mask, attention and stitched texture of one forward pass.
#[derive(Clone, Debug)]
pub struct Visuals {
    pub height: usize,
    pub width: usize,
    /// Region id per stitched pixel, row-major.
    pub mask: Vec<usize>,
    /// Per view, grid × grid × N_h.
    pub maps: Vec<Tensor>,
    pub texture: Vec<f32>,
    pub occupancy: Vec<u8>,
    pub coarse: f64,
    pub fine: f64,
}

pub fn explain(model: &Model, views: &ViewSet) -> Result<Visuals> {
    let mut g = Graph::new();
    let b = model.params.bind_frozen(&mut g);
    let f = model.forward(&mut g, &b, views)?;
    let s = stitch(views)?;
    Ok(Visuals {
        height: s.height,
        width: s.width,
        mask: f.plan.mask.clone(),
        maps: f.maps.iter().map(|&m| g.value(m).clone()).collect(),
        texture: s.image.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        occupancy: s.occupancy,
        coarse: g.value(f.coarse).item(),
        fine: g.value(f.fine).item(),
    })
}

/// Region `r` of each pixel painted with a fixed palette; background pixels dimmed.
pub fn mask_rgb(v: &Visuals) -> Vec<u8> {
    v.mask
        .iter()
        .zip(&v.occupancy)
        .flat_map(|(&r, &o)| {
            let c = region_color(r);
            if o == 0 {
                c.map(|x| x / 3)
            } else {
                c
            }
        })
        .collect()
}

/// 2g × 3g mosaic of head `h`, min-max scaled to 8-bit gray.
pub fn attention_gray(v: &Visuals, h: usize) -> Result<(usize, usize, Vec<u8>)> {
    let shape = v.maps[0].shape();
    let (grid, heads) = (shape[0], shape[2]);
    if h >= heads {
        return Err(Error::invalid(format!("head {h} out of range for {heads} heads")));
    }
    let (rows, cols) = (2 * grid, 3 * grid);
    let mut vals = vec![0.0; rows * cols];
    for i in 0..VIEW_COUNT {
        let (ty, tx) = tile_of(i);
        for y in 0..grid {
            for x in 0..grid {
                vals[(ty * grid + y) * cols + tx * grid + x] = v.maps[i].get(&[y, x, h]);
            }
        }
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = vals.iter().map(|&x| ((x - lo) / span * 255.0).round() as u8).collect();
    Ok((rows, cols, px))
}

/// Writes `<stem>_texture.png`, `<stem>_mask.png` and one `<stem>_head<h>.png` per head.
pub fn write_visuals(v: &Visuals, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let save = |img: image::DynamicImage, p: PathBuf| -> Result<PathBuf> {
        img.save(&p).map_err(|e| Error::Image(format!("{}: {e}", p.display())))?;
        Ok(p)
    };
    let (w, h) = (v.width as u32, v.height as u32);
    let tex = v.texture.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let mut out = vec![
        save(
            image::RgbImage::from_raw(w, h, tex).expect("texture buffer").into(),
            dir.join(format!("{stem}_texture.png")),
        )?,
        save(
            image::RgbImage::from_raw(w, h, mask_rgb(v)).expect("mask buffer").into(),
            dir.join(format!("{stem}_mask.png")),
        )?,
    ];
    for head in 0..v.maps[0].shape()[2] {
        let (rows, cols, px) = attention_gray(v, head)?;
        let img = image::GrayImage::from_raw(cols as u32, rows as u32, px).expect("attention buffer");
        let img = image::imageops::resize(&img, w, h, image::imageops::FilterType::Nearest);
        out.push(save(img.into(), dir.join(format!("{stem}_head{head}.png")))?);
    }
    Ok(out)
}
