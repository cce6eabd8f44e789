//! Six-view orthographic rendering of point clouds into texture, depth and
//! occupancy images, and the 2×3 stitched mosaic consumed by the local branch.
//!
//! Coordinates are normalized device coordinates: a canonical cloud spans
//! `[-1, 1]` on its longest axis and fills the image along that axis.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloudio::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const VIEW_COUNT: usize = 6;
pub const MIN_RESOLUTION: usize = 64;
/// Normalized depth assigned to the farthest occupied pixel of a view.
pub const FAR_DEPTH: f32 = 1.0 / 255.0;

/// Viewing directions in stitch order: top row `+x +y +z`, bottom row `-x -y -z`.
/// A `Pos*` camera sits on the positive side of its axis looking toward the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewDir {
    PosX,
    PosY,
    PosZ,
    NegX,
    NegY,
    NegZ,
}

impl ViewDir {
    pub const ALL: [ViewDir; VIEW_COUNT] = [
        ViewDir::PosX,
        ViewDir::PosY,
        ViewDir::PosZ,
        ViewDir::NegX,
        ViewDir::NegY,
        ViewDir::NegZ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ViewDir::PosX => "px",
            ViewDir::PosY => "py",
            ViewDir::PosZ => "pz",
            ViewDir::NegX => "nx",
            ViewDir::NegY => "ny",
            ViewDir::NegZ => "nz",
        }
    }

    /// `(axis, sign)` for image right, image up, and the direction toward the
    /// camera. Right = forward × up, with up = +z for the x/y views and +y for
    /// the z views.
    fn frame(self) -> [(usize, f64); 3] {
        match self {
            ViewDir::PosX => [(1, 1.0), (2, 1.0), (0, 1.0)],
            ViewDir::NegX => [(1, -1.0), (2, 1.0), (0, -1.0)],
            ViewDir::PosY => [(0, -1.0), (2, 1.0), (1, 1.0)],
            ViewDir::NegY => [(0, 1.0), (2, 1.0), (1, -1.0)],
            ViewDir::PosZ => [(0, 1.0), (1, 1.0), (2, 1.0)],
            ViewDir::NegZ => [(0, -1.0), (1, 1.0), (2, -1.0)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    /// Output height and width in pixels.
    pub resolution: usize,
    /// Splat radius in NDC units.
    pub radius: f64,
    /// Number of front-most splats composited per pixel.
    pub max_splats: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            resolution: 512,
            radius: 0.01,
            max_splats: 8,
        }
    }
}

/// Texture, depth and occupancy images of the six views of one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    size: usize,
    /// Per view, `size × size × 3` RGB in `[0, 1]`.
    pub texture: Vec<Vec<f32>>,
    /// Per view, `size × size`; 0 is background, occupied pixels in `[1/255, 1]`.
    pub depth: Vec<Vec<f32>>,
    /// Per view, `size × size` of 0/1.
    pub occupancy: Vec<Vec<u8>>,
    pub ratios: [f64; VIEW_COUNT],
}

impl ViewSet {
    /// Assemble from raw images, recomputing the occupancy ratios.
    pub fn from_parts(
        size: usize,
        texture: Vec<Vec<f32>>,
        depth: Vec<Vec<f32>>,
        occupancy: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let mut ratios = [0.0; VIEW_COUNT];
        if texture.len() != VIEW_COUNT || depth.len() != VIEW_COUNT || occupancy.len() != VIEW_COUNT {
            return Err(Error::shape("a view set needs exactly six views"));
        }
        for i in 0..VIEW_COUNT {
            if texture[i].len() != size * size * 3
                || depth[i].len() != size * size
                || occupancy[i].len() != size * size
            {
                return Err(Error::shape(format!("view {i} does not match resolution {size}")));
            }
            ratios[i] = occupancy_ratio(&occupancy[i]);
        }
        Ok(Self {
            size,
            texture,
            depth,
            occupancy,
            ratios,
        })
    }

    /// A view set with every pixel set to background.
    pub fn blank(size: usize) -> Self {
        Self {
            size,
            texture: vec![vec![0.0; size * size * 3]; VIEW_COUNT],
            depth: vec![vec![0.0; size * size]; VIEW_COUNT],
            occupancy: vec![vec![0; size * size]; VIEW_COUNT],
            ratios: [0.0; VIEW_COUNT],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Cut the `size × size` window at `(top, left)` out of every view.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if size == 0 || top + size > self.size || left + size > self.size {
            return Err(Error::invalid(format!(
                "crop {size}×{size} at ({top},{left}) exceeds {}×{}",
                self.size, self.size
            )));
        }
        let n = self.size;
        let cut = |src: &[f32], ch: usize| -> Vec<f32> {
            let mut out = Vec::with_capacity(size * size * ch);
            for y in top..top + size {
                out.extend_from_slice(&src[(y * n + left) * ch..(y * n + left + size) * ch]);
            }
            out
        };
        let cut_u8 = |src: &[u8]| -> Vec<u8> {
            let mut out = Vec::with_capacity(size * size);
            for y in top..top + size {
                out.extend_from_slice(&src[y * n + left..y * n + left + size]);
            }
            out
        };
        Self::from_parts(
            size,
            self.texture.iter().map(|t| cut(t, 3)).collect(),
            self.depth.iter().map(|d| cut(d, 1)).collect(),
            self.occupancy.iter().map(|o| cut_u8(o)).collect(),
        )
    }

    /// Texture of view `i` as an H×W×3 tensor.
    pub fn texture_tensor(&self, i: usize) -> Tensor {
        let d = self.texture[i].iter().map(|&v| v as f64).collect();
        Tensor::new(&[self.size, self.size, 3], d).expect("texture shape")
    }

    /// Depth of view `i` as an H×W×1 tensor.
    pub fn depth_tensor(&self, i: usize) -> Tensor {
        let d = self.depth[i].iter().map(|&v| v as f64).collect();
        Tensor::new(&[self.size, self.size, 1], d).expect("depth shape")
    }

    const MAGIC: &'static [u8; 8] = b"AFQVIEW1";

    /// Little-endian binary encoding used by the render cache.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.size;
        let mut out = Vec::with_capacity(16 + VIEW_COUNT * n * n * 17);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for i in 0..VIEW_COUNT {
            for v in &self.texture[i] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &self.depth[i] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.occupancy[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::invalid("not a view-set file");
        if bytes.len() < 16 || &bytes[..8] != Self::MAGIC {
            return Err(bad());
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let per_view = n * n * (3 * 4 + 4 + 1);
        if bytes.len() != 16 + VIEW_COUNT * per_view {
            return Err(bad());
        }
        let mut pos = 16;
        let mut texture = Vec::with_capacity(VIEW_COUNT);
        let mut depth = Vec::with_capacity(VIEW_COUNT);
        let mut occupancy = Vec::with_capacity(VIEW_COUNT);
        let read_f32s = |pos: &mut usize, count: usize| -> Vec<f32> {
            let v = bytes[*pos..*pos + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *pos += 4 * count;
            v
        };
        for _ in 0..VIEW_COUNT {
            texture.push(read_f32s(&mut pos, n * n * 3));
            depth.push(read_f32s(&mut pos, n * n));
            let occ = bytes[pos..pos + n * n].to_vec();
            pos += n * n;
            if occ.iter().any(|&b| b > 1) {
                return Err(bad());
            }
            occupancy.push(occ);
        }
        Self::from_parts(n, texture, depth, occupancy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Proportion of nonzero pixels.
pub fn occupancy_ratio(occ: &[u8]) -> f64 {
    if occ.is_empty() {
        return 0.0;
    }
    occ.iter().filter(|&&o| o != 0).count() as f64 / occ.len() as f64
}

/// Fixed-capacity, depth-sorted list of the front-most splats at one pixel.
#[derive(Clone)]
struct SplatStack {
    len: usize,
    depth: [f64; MAX_STACK],
    alpha: [f64; MAX_STACK],
    point: [u32; MAX_STACK],
}

const MAX_STACK: usize = 16;

impl SplatStack {
    const EMPTY: SplatStack = SplatStack {
        len: 0,
        depth: [0.0; MAX_STACK],
        alpha: [0.0; MAX_STACK],
        point: [0; MAX_STACK],
    };

    /// Insert keeping ascending depth; equal depths keep arrival order.
    fn insert(&mut self, cap: usize, depth: f64, alpha: f64, point: u32) {
        if self.len == cap && depth >= self.depth[cap - 1] {
            return;
        }
        let mut i = self.len.min(cap - 1);
        while i > 0 && self.depth[i - 1] > depth {
            self.depth[i] = self.depth[i - 1];
            self.alpha[i] = self.alpha[i - 1];
            self.point[i] = self.point[i - 1];
            i -= 1;
        }
        self.depth[i] = depth;
        self.alpha[i] = alpha;
        self.point[i] = point;
        self.len = (self.len + 1).min(cap);
    }
}

/// Render the six orthographic views of a canonical cloud.
///
/// Each point is a disc of radius `r`; a pixel whose center lies at distance
/// `d < r` from the point receives alpha `1 - (d/r)²`. The front-most
/// `max_splats` discs are composited front to back,
/// `color = Σ_k α_k Π_{j<k}(1 - α_j) c_k`, over a black background.
pub fn project_views(pc: &PointCloud, settings: &RenderSettings) -> Result<ViewSet> {
    if pc.is_empty() {
        return Err(Error::Degenerate("cannot render an empty cloud".into()));
    }
    let n = settings.resolution;
    if n < MIN_RESOLUTION {
        return Err(Error::invalid(format!("resolution {n} below minimum {MIN_RESOLUTION}")));
    }
    if !(settings.radius > 0.0) {
        return Err(Error::invalid("splat radius must be positive"));
    }
    if settings.max_splats == 0 || settings.max_splats > MAX_STACK {
        return Err(Error::invalid(format!("max_splats must be in 1..={MAX_STACK}")));
    }
    let mut texture = Vec::with_capacity(VIEW_COUNT);
    let mut depth = Vec::with_capacity(VIEW_COUNT);
    let mut occupancy = Vec::with_capacity(VIEW_COUNT);
    for view in ViewDir::ALL {
        let (t, d, o) = render_view(pc, view, settings);
        texture.push(t);
        depth.push(d);
        occupancy.push(o);
    }
    ViewSet::from_parts(n, texture, depth, occupancy)
}

fn render_view(pc: &PointCloud, view: ViewDir, s: &RenderSettings) -> (Vec<f32>, Vec<f32>, Vec<u8>) {
    let n = s.resolution;
    let r = s.radius;
    let r2 = r * r;
    let [(ra, rs), (ua, us), (da, ds)] = view.frame();
    let mut stacks = vec![SplatStack::EMPTY; n * n];
    let half = n as f64 / 2.0;
    for (idx, p) in pc.positions.iter().enumerate() {
        let u = rs * p[ra];
        let v = us * p[ua];
        // distance from a camera plane at +1 along the view axis
        let z = 1.0 - ds * p[da];
        // pixel c has center u_c = (c + 0.5) / half - 1
        let c_lo = (((u - r + 1.0) * half - 0.5).ceil()).max(0.0);
        let c_hi = (((u + r + 1.0) * half - 0.5).floor()).min(n as f64 - 1.0);
        // row 0 is the top: v_r = 1 - (row + 0.5) / half
        let r_lo = (((1.0 - v - r) * half - 0.5).ceil()).max(0.0);
        let r_hi = (((1.0 - v + r) * half - 0.5).floor()).min(n as f64 - 1.0);
        if c_lo > c_hi || r_lo > r_hi {
            continue;
        }
        for row in r_lo as usize..=r_hi as usize {
            let vc = 1.0 - (row as f64 + 0.5) / half;
            let dv = v - vc;
            for col in c_lo as usize..=c_hi as usize {
                let uc = (col as f64 + 0.5) / half - 1.0;
                let du = u - uc;
                let d2 = du * du + dv * dv;
                if d2 < r2 {
                    stacks[row * n + col].insert(s.max_splats, z, 1.0 - d2 / r2, idx as u32);
                }
            }
        }
    }

    let mut texture = vec![0.0f32; n * n * 3];
    let mut raw_depth = vec![f64::NAN; n * n];
    let mut occupancy = vec![0u8; n * n];
    let (mut near, mut far) = (f64::INFINITY, f64::NEG_INFINITY);
    for (px, st) in stacks.iter().enumerate() {
        if st.len == 0 {
            continue;
        }
        occupancy[px] = 1;
        let mut transmittance = 1.0;
        let mut rgb = [0.0; 3];
        for k in 0..st.len {
            let a = st.alpha[k];
            let c = pc.colors[st.point[k] as usize];
            for ch in 0..3 {
                rgb[ch] += a * transmittance * c[ch];
            }
            transmittance *= 1.0 - a;
        }
        for ch in 0..3 {
            texture[px * 3 + ch] = rgb[ch].clamp(0.0, 1.0) as f32;
        }
        raw_depth[px] = st.depth[0];
        near = near.min(st.depth[0]);
        far = far.max(st.depth[0]);
    }
    let mut depth = vec![0.0f32; n * n];
    let span = far - near;
    for px in 0..n * n {
        if occupancy[px] == 0 {
            continue;
        }
        depth[px] = if span > 0.0 {
            let t = (raw_depth[px] - near) / span;
            (1.0 - t * (1.0 - FAR_DEPTH as f64)) as f32
        } else {
            1.0
        };
    }
    (texture, depth, occupancy)
}

/// The 2H×3W mosaic of all views: texture in channels 0–2, depth in channel 3.
#[derive(Clone, Debug, PartialEq)]
pub struct StitchedInput {
    pub height: usize,
    pub width: usize,
    /// `height × width × 4`.
    pub image: Vec<f32>,
    /// `height × width` of 0/1.
    pub occupancy: Vec<u8>,
}

impl StitchedInput {
    pub fn image_tensor(&self) -> Tensor {
        let d = self.image.iter().map(|&v| v as f64).collect();
        Tensor::new(&[self.height, self.width, 4], d).expect("stitched shape")
    }

    pub fn occupancy_tensor(&self) -> Tensor {
        let d = self.occupancy.iter().map(|&v| v as f64).collect();
        Tensor::new(&[self.height, self.width], d).expect("stitched occupancy shape")
    }
}

/// Grid cell `(row, col)` of view `i` in the 2×3 mosaic.
pub fn tile_of(view: usize) -> (usize, usize) {
    (view / 3, view % 3)
}

pub fn stitch(vs: &ViewSet) -> Result<StitchedInput> {
    let n = vs.size;
    for i in 0..VIEW_COUNT {
        if vs.texture[i].len() != n * n * 3 || vs.depth[i].len() != n * n || vs.occupancy[i].len() != n * n {
            return Err(Error::shape(format!("view {i} does not match resolution {n}")));
        }
    }
    let (h, w) = (2 * n, 3 * n);
    let mut image = vec![0.0f32; h * w * 4];
    let mut occupancy = vec![0u8; h * w];
    for i in 0..VIEW_COUNT {
        let (ty, tx) = tile_of(i);
        for y in 0..n {
            for x in 0..n {
                let dst = (ty * n + y) * w + tx * n + x;
                let src = y * n + x;
                image[dst * 4..dst * 4 + 3].copy_from_slice(&vs.texture[i][src * 3..src * 3 + 3]);
                image[dst * 4 + 3] = vs.depth[i][src];
                occupancy[dst] = vs.occupancy[i][src];
            }
        }
    }
    Ok(StitchedInput {
        height: h,
        width: w,
        image,
        occupancy,
    })
}

/// Inverse of [`stitch`].
pub fn unstitch(s: &StitchedInput) -> Result<ViewSet> {
    if s.height % 2 != 0 || s.width % 3 != 0 || s.height / 2 != s.width / 3 {
        return Err(Error::shape(format!("{}×{} is not a 2H×3W mosaic", s.height, s.width)));
    }
    let n = s.height / 2;
    let w = s.width;
    let mut vs = ViewSet::blank(n);
    for i in 0..VIEW_COUNT {
        let (ty, tx) = tile_of(i);
        for y in 0..n {
            for x in 0..n {
                let src = (ty * n + y) * w + tx * n + x;
                let dst = y * n + x;
                vs.texture[i][dst * 3..dst * 3 + 3].copy_from_slice(&s.image[src * 4..src * 4 + 3]);
                vs.depth[i][dst] = s.image[src * 4 + 3];
                vs.occupancy[i][dst] = s.occupancy[src];
            }
        }
        vs.ratios[i] = occupancy_ratio(&vs.occupancy[i]);
    }
    Ok(vs)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    name: String,
    resolution: usize,
    views: Vec<String>,
    occupancy_ratios: Vec<f64>,
    settings: RenderSettings,
}

/// Write one PNG triplet per view (8-bit RGB texture, 16-bit gray depth,
/// 8-bit occupancy at 0/255) plus a JSON sidecar with the occupancy ratios.
/// Returns the written paths.
pub fn export_pngs(vs: &ViewSet, settings: &RenderSettings, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = vs.size as u32;
    let mut written = Vec::new();
    let save = |img: image::DynamicImage, path: &PathBuf| {
        img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    };
    for (i, view) in ViewDir::ALL.iter().enumerate() {
        let tex: Vec<u8> = vs.texture[i].iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let p = dir.join(format!("{stem}_{}_texture.png", view.name()));
        save(image::RgbImage::from_raw(n, n, tex).expect("texture buffer").into(), &p)?;
        written.push(p);

        let dep: Vec<u16> = vs.depth[i].iter().map(|&v| (v * 65535.0).round().clamp(0.0, 65535.0) as u16).collect();
        let p = dir.join(format!("{stem}_{}_depth.png", view.name()));
        save(
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(n, n, dep).expect("depth buffer").into(),
            &p,
        )?;
        written.push(p);

        let occ: Vec<u8> = vs.occupancy[i].iter().map(|&v| v * 255).collect();
        let p = dir.join(format!("{stem}_{}_occupancy.png", view.name()));
        save(image::GrayImage::from_raw(n, n, occ).expect("occupancy buffer").into(), &p)?;
        written.push(p);
    }
    let sidecar = Sidecar {
        name: stem.to_string(),
        resolution: vs.size,
        views: ViewDir::ALL.iter().map(|v| v.name().to_string()).collect(),
        occupancy_ratios: vs.ratios.to_vec(),
        settings: settings.clone(),
    };
    let p = dir.join(format!("{stem}_views.json"));
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}
