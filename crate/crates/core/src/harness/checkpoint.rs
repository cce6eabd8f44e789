//! Binary checkpoint: magic, version, a JSON header, then raw f64 blobs.
//!
//! Layout: `AFQCKPT\0` | u32 version | u64 header length | header JSON |
//! weights | Adam m | Adam v | best weights (when present). Every blob lists
//! the parameters in header order as little-endian f64.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::Adam;
use super::train::{adam_settings, Best, EpochLog, TrainState};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"AFQCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    config: TrainConfig,
    epoch: usize,
    adam_step: u64,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    log: Vec<EpochLog>,
    best: Option<(usize, f64)>,
}

fn put(out: &mut Vec<u8>, ts: &[Tensor]) {
    for t in ts {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode(st: &TrainState) -> Vec<u8> {
    let p = &st.model.params;
    let header = Header {
        config_hash: st.cfg.hash(),
        config: st.cfg.clone(),
        epoch: st.epoch,
        adam_step: st.adam.step,
        names: p.names().to_vec(),
        shapes: p.tensors().iter().map(|t| t.shape().to_vec()).collect(),
        log: st.log.clone(),
        best: st.best.as_ref().map(|b| (b.epoch, b.loss)),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 32 + 8 * 4 * p.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    put(&mut out, p.tensors());
    put(&mut out, &st.adam.m);
    put(&mut out, &st.adam.v);
    if let Some(b) = &st.best {
        put(&mut out, b.params.tensors());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn tensors(&mut self, shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let raw = self.take(n * 8)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                Tensor::new(s, data)
            })
            .collect()
    }
}

fn param_set(names: &[String], tensors: Vec<Tensor>) -> ParamSet {
    let mut p = ParamSet::new();
    for (n, t) in names.iter().zip(tensors) {
        p.insert(n.clone(), t);
    }
    p
}

pub fn decode(bytes: &[u8]) -> Result<TrainState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let h: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if h.config.hash() != h.config_hash {
        return Err(Error::Checkpoint("stored config does not match its hash".into()));
    }
    if h.names.len() != h.shapes.len() {
        return Err(Error::Checkpoint("header lists mismatched names and shapes".into()));
    }
    let params = param_set(&h.names, r.tensors(&h.shapes)?);
    let m = r.tensors(&h.shapes)?;
    let v = r.tensors(&h.shapes)?;
    let best = match h.best {
        Some((epoch, loss)) => Some(Best {
            epoch,
            loss,
            params: param_set(&h.names, r.tensors(&h.shapes)?),
        }),
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after the last blob".into()));
    }
    let model = Model {
        cfg: h.config.model_config(),
        params,
    };
    let expected = Model::init(model.cfg.clone(), 0, 0.0)?.params;
    if expected.names() != model.params.names()
        || expected.tensors().iter().zip(model.params.tensors()).any(|(a, b)| a.shape() != b.shape())
    {
        return Err(Error::Checkpoint("weights do not match the stored model config".into()));
    }
    let adam = Adam::from_state(&model.params, adam_settings(&h.config), h.adam_step, m, v)?;
    Ok(TrainState {
        cfg: h.config,
        model,
        adam,
        epoch: h.epoch,
        log: h.log,
        best,
    })
}

/// Write to a sibling temp file, then rename over `path`.
pub fn save(path: &Path, st: &TrainState) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(&encode(st)).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Load for continued training under `cfg`; the config hashes must agree.
pub fn resume(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let st = load(path)?;
    if st.cfg.hash() != cfg.hash() {
        return Err(Error::Checkpoint(format!(
            "config hash {} does not match checkpoint {}",
            cfg.hash(),
            st.cfg.hash()
        )));
    }
    Ok(st)
}
