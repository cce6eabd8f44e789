//! Manifests, content-disjoint folds, crops and batches.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloudio::{canonicalize, load_ply};
use crate::error::{Error, Result};
use crate::projector::{project_views, stitch, RenderSettings, StitchedInput, ViewSet};

pub const MANIFEST_HEADER: [&str; 4] = ["id", "path", "content", "mos"];

/// File extension of pre-rendered view sets.
pub const VIEWSET_EXT: &str = "afqv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub content: String,
    pub mos: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample id `{}`", e.id)));
            }
            if !e.mos.is_finite() {
                return Err(Error::Manifest(format!("sample `{}` has non-finite MOS", e.id)));
            }
            if e.content.is_empty() {
                return Err(Error::Manifest(format!("sample `{}` has an empty content id", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct content ids in sorted order.
    pub fn contents(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.content.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Entries whose content id is in `contents`, in manifest order.
    pub fn select(&self, contents: &[String]) -> Manifest {
        let keep: HashSet<&str> = contents.iter().map(String::as_str).collect();
        Manifest {
            entries: self
                .entries
                .iter()
                .filter(|e| keep.contains(e.content.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Relative paths are resolved against `base`.
    pub fn from_reader(reader: impl Read, base: Option<&Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Manifest(e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Manifest(format!(
                "expected header `{}`, found `{}`",
                MANIFEST_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (row, rec) in rdr.deserialize::<ManifestEntry>().enumerate() {
            let mut e = rec.map_err(|err| Error::Manifest(format!("row {}: {err}", row + 2)))?;
            if let Some(b) = base {
                if e.path.is_relative() {
                    e.path = b.join(&e.path);
                }
            }
            entries.push(e);
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f, path.parent())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).map_err(|err| Error::Manifest(err.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|err| Error::Manifest(err.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn mean_mos(&self) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        Some(self.entries.iter().map(|e| e.mos).sum::<f64>() / self.entries.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Test contents of each fold.
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn test_contents(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn train_contents(&self, fold: usize) -> Vec<String> {
        let mut out: Vec<String> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        out.sort();
        out
    }

    /// `(train, test)` sample lists of one fold.
    pub fn split(&self, m: &Manifest, fold: usize) -> (Manifest, Manifest) {
        (m.select(&self.train_contents(fold)), m.select(self.test_contents(fold)))
    }

    pub fn check(&self) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::invalid(format!("plan lists {} folds, k = {}", self.folds.len(), self.k)));
        }
        let mut seen = HashSet::new();
        for f in &self.folds {
            for c in f {
                if !seen.insert(c) {
                    return Err(Error::invalid(format!("content `{c}` appears in more than one fold")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fold plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s).map_err(|e| Error::invalid(format!("fold plan: {e}")))?;
        plan.check()?;
        Ok(plan)
    }
}

/// Partition the manifest's contents into `k` folds whose sizes differ by at most one.
pub fn kfold_split(m: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let mut contents = m.contents();
    if k < 2 {
        return Err(Error::invalid("k-fold split needs k ≥ 2"));
    }
    if k > contents.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} distinct contents",
            contents.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    contents.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, c) in contents.into_iter().enumerate() {
        folds[i % k].push(c);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Random `size × size` crop at one offset shared by every image of every view.
pub fn crop_sample<R: Rng + ?Sized>(vs: &ViewSet, size: usize, rng: &mut R) -> Result<ViewSet> {
    let n = vs.size();
    if size == 0 || size > n {
        return Err(Error::invalid(format!("crop size {size} does not fit resolution {n}")));
    }
    let top = rng.gen_range(0..=n - size);
    let left = rng.gen_range(0..=n - size);
    vs.crop(top, left, size)
}

/// Draws allowed by [`crop_nonblank`] before it gives up.
pub const CROP_ATTEMPTS: usize = 64;

/// Like [`crop_sample`], redrawing while every view of the crop is background.
/// After [`CROP_ATTEMPTS`] blank draws the last one is returned.
pub fn crop_nonblank<R: Rng + ?Sized>(vs: &ViewSet, size: usize, rng: &mut R) -> Result<ViewSet> {
    let mut c = crop_sample(vs, size, rng)?;
    for _ in 1..CROP_ATTEMPTS {
        if c.ratios.iter().any(|&r| r > 0.0) {
            break;
        }
        c = crop_sample(vs, size, rng)?;
    }
    Ok(c)
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub views: ViewSet,
    pub mos: f64,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub inputs: Vec<StitchedInput>,
    pub ratios: Vec<[f64; 6]>,
    pub mos: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.mos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mos.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.inputs[0].height / 2
    }
}

pub fn make_batch(samples: Vec<Sample>) -> Result<Batch> {
    let first = samples.first().ok_or_else(|| Error::invalid("cannot batch zero samples"))?;
    let n = first.views.size();
    let mut batch = Batch {
        ids: Vec::with_capacity(samples.len()),
        inputs: Vec::with_capacity(samples.len()),
        ratios: Vec::with_capacity(samples.len()),
        mos: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        if s.views.size() != n {
            return Err(Error::shape(format!(
                "sample `{}` has resolution {}, batch has {n}",
                s.id,
                s.views.size()
            )));
        }
        batch.inputs.push(stitch(&s.views)?);
        batch.ratios.push(s.views.ratios);
        batch.ids.push(s.id);
        batch.mos.push(s.mos);
    }
    Ok(batch)
}

/// On-disk cache of rendered view sets keyed by source path and render settings.
#[derive(Clone, Debug)]
pub struct RenderCache {
    dir: Option<PathBuf>,
}

impl RenderCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    /// Uses `AFQ_CACHE_DIR` when set.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os("AFQ_CACHE_DIR").map(PathBuf::from))
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn key(path: &Path, settings: &RenderSettings) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(settings).expect("settings serialize"));
        h.update([0u8]);
        h.update(path.to_string_lossy().as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    /// Load a pre-rendered set directly, or render the PLY (through the cache when enabled).
    pub fn views(&self, path: &Path, settings: &RenderSettings) -> Result<ViewSet> {
        if path.extension().is_some_and(|e| e == VIEWSET_EXT) {
            let vs = ViewSet::load(path)?;
            if vs.size() != settings.resolution {
                return Err(Error::shape(format!(
                    "{} holds {}-pixel views, settings ask for {}",
                    path.display(),
                    vs.size(),
                    settings.resolution
                )));
            }
            return Ok(vs);
        }
        let cached = self
            .dir
            .as_ref()
            .map(|d| d.join(format!("{}.{VIEWSET_EXT}", Self::key(path, settings))));
        if let Some(c) = &cached {
            if c.exists() {
                match ViewSet::load(c) {
                    Ok(vs) => return Ok(vs),
                    Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", c.display()),
                }
            }
        }
        let vs = project_views(&canonicalize(&load_ply(path)?)?, settings)?;
        if let Some(c) = &cached {
            if let Some(parent) = c.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            vs.save(c)?;
        }
        Ok(vs)
    }

    /// Render every entry of the manifest, keyed by sample id.
    pub fn views_for(&self, m: &Manifest, settings: &RenderSettings) -> Result<BTreeMap<String, ViewSet>> {
        m.entries()
            .iter()
            .map(|e| Ok((e.id.clone(), self.views(&e.path, settings)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(contents: usize, per: usize) -> Manifest {
        let mut entries = Vec::new();
        for c in 0..contents {
            for d in 0..per {
                entries.push(ManifestEntry {
                    id: format!("c{c}_d{d}"),
                    path: PathBuf::from(format!("c{c}_d{d}.ply")),
                    content: format!("c{c}"),
                    mos: (c * per + d) as f64 * 0.1,
                });
            }
        }
        Manifest::new(entries).unwrap()
    }

    fn assert_disjoint(plan: &FoldPlan, m: &Manifest) {
        let all: BTreeSet<String> = m.contents().into_iter().collect();
        let mut union = BTreeSet::new();
        for i in 0..plan.k {
            let test: BTreeSet<_> = plan.test_contents(i).iter().cloned().collect();
            let train: BTreeSet<_> = plan.train_contents(i).into_iter().collect();
            assert!(test.is_disjoint(&train));
            assert_eq!(test.len() + train.len(), all.len());
            let (tr, te) = plan.split(m, i);
            assert_eq!(tr.len() + te.len(), m.len());
            for e in te.entries() {
                assert!(!train.contains(&e.content));
            }
            union.extend(test);
        }
        assert_eq!(union, all);
    }

    #[test]
    fn nine_contents_nine_folds() {
        let m = manifest(9, 3);
        let plan = kfold_split(&m, 9, 7).unwrap();
        for i in 0..9 {
            assert_eq!(plan.train_contents(i).len(), 8);
            assert_eq!(plan.test_contents(i).len(), 1);
        }
        assert_disjoint(&plan, &m);
    }

    #[test]
    fn twenty_contents_five_folds() {
        let m = manifest(20, 2);
        let plan = kfold_split(&m, 5, 1).unwrap();
        for i in 0..5 {
            assert_eq!(plan.train_contents(i).len(), 16);
            assert_eq!(plan.test_contents(i).len(), 4);
        }
        assert_disjoint(&plan, &m);
    }

    #[test]
    fn split_is_deterministic_and_round_trips() {
        let m = manifest(12, 2);
        let a = kfold_split(&m, 4, 99).unwrap();
        assert_eq!(a, kfold_split(&m, 4, 99).unwrap());
        assert_eq!(FoldPlan::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn too_many_folds() {
        let m = manifest(3, 1);
        assert!(kfold_split(&m, 4, 0).is_err());
        assert!(kfold_split(&m, 1, 0).is_err());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let m = manifest(2, 2);
        let text = m.to_csv().unwrap();
        assert!(text.starts_with("id,path,content,mos\n"));
        assert_eq!(Manifest::from_reader(text.as_bytes(), None).unwrap(), m);
        assert!(Manifest::from_reader("id,file,content,mos\na,b,c,1\n".as_bytes(), None).is_err());
        assert!(Manifest::from_reader("id,path,content,mos\na,b,c,1\na,d,c,2\n".as_bytes(), None).is_err());
        assert!(Manifest::from_reader("id,path,content,mos\na,b,c,NaN\n".as_bytes(), None).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let m = Manifest::from_reader("id,path,content,mos\na,x.ply,c,1\n".as_bytes(), Some(Path::new("/data"))).unwrap();
        assert_eq!(m.entries()[0].path, PathBuf::from("/data/x.ply"));
    }

    #[test]
    fn crop_sizes_and_identity() {
        let mut vs = ViewSet::blank(64);
        for v in 0..6 {
            for (i, p) in vs.depth[v].iter_mut().enumerate() {
                *p = i as f32;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(crop_sample(&vs, 64, &mut rng).unwrap(), vs);
        let c = crop_sample(&vs, 32, &mut rng).unwrap();
        assert_eq!(c.size(), 32);
        assert_eq!(stitch(&c).unwrap().image.len(), 64 * 96 * 4);
        assert_eq!(c.ratios, [0.0; 6]);
        assert!(crop_sample(&vs, 65, &mut rng).is_err());
    }

    #[test]
    fn batch_contract() {
        assert!(make_batch(vec![]).is_err());
        let s = |n, id: &str| Sample {
            id: id.into(),
            views: ViewSet::blank(n),
            mos: 1.0,
        };
        let b = make_batch(vec![s(64, "a"), s(64, "b")]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.resolution(), 64);
        assert!(make_batch(vec![s(64, "a"), s(96, "b")]).is_err());
    }

    #[test]
    fn cache_keys_depend_on_settings_and_path() {
        let s = RenderSettings::default();
        let mut t = s.clone();
        t.radius = 0.02;
        let p = Path::new("a.ply");
        assert_eq!(RenderCache::key(p, &s), RenderCache::key(p, &s));
        assert_ne!(RenderCache::key(p, &s), RenderCache::key(p, &t));
        assert_ne!(RenderCache::key(p, &s), RenderCache::key(Path::new("b.ply"), &s));
    }

    proptest! {
        #[test]
        fn folds_never_share_content(contents in 2usize..30, per in 1usize..4, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let m = manifest(contents, per);
            let k = 2 + ((contents - 2) as f64 * k_frac) as usize;
            let plan = kfold_split(&m, k, seed).unwrap();
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            assert_disjoint(&plan, &m);
        }

        #[test]
        fn crops_are_colocated(seed in any::<u64>(), size in 1usize..64) {
            let mut vs = ViewSet::blank(64);
            for v in 0..6 {
                for i in 0..64 * 64 {
                    let tag = (v * 4096 + i) as f32;
                    vs.depth[v][i] = tag;
                    vs.texture[v][i * 3] = tag;
                    vs.occupancy[v][i] = ((i * 7 + v) % 3 == 0) as u8;
                }
            }
            let a = crop_sample(&vs, size, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = crop_sample(&vs, size, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            let origin = a.depth[0][0] as usize;
            for v in 0..6 {
                prop_assert_eq!(a.depth[v][0] as usize, v * 4096 + origin);
                for i in 0..size * size {
                    prop_assert_eq!(a.texture[v][i * 3], a.depth[v][i]);
                    let src = a.depth[v][i] as usize - v * 4096;
                    prop_assert_eq!(a.occupancy[v][i], ((src * 7 + v) % 3 == 0) as u8);
                }
            }
        }
    }
}
