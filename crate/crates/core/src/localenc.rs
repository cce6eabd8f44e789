//! Shallow convolutional branch over the region-aware feature map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::feedback::DR_OUT;
use crate::params::{fan_in_uniform, Bound, ParamSet};

pub const LOCAL_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub d_out: usize,
    /// ReLU after each convolution.
    pub relu: bool,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self { d_out: 256, relu: true }
    }
}

pub fn init_params<R: Rng + ?Sized>(cfg: &LocalConfig, rng: &mut R, p: &mut ParamSet) -> Result<()> {
    if cfg.d_out == 0 {
        return Err(Error::Config("local d_out must be positive".into()));
    }
    let fan1 = 9 * DR_OUT;
    p.insert("local.conv1.w", fan_in_uniform(&[fan1, LOCAL_WIDTH], fan1, rng));
    p.insert("local.conv1.b", fan_in_uniform(&[LOCAL_WIDTH], fan1, rng));
    p.insert("local.conv2.w", fan_in_uniform(&[LOCAL_WIDTH, cfg.d_out], LOCAL_WIDTH, rng));
    p.insert("local.conv2.b", fan_in_uniform(&[cfg.d_out], LOCAL_WIDTH, rng));
    Ok(())
}

/// Intermediate maps of the local branch.
#[derive(Clone, Copy, Debug)]
pub struct LocalStages {
    pub conv3: Var,
    pub pooled: Var,
    pub conv1: Var,
    pub feature: Var,
}

pub fn local_stages(g: &mut Graph, b: &Bound, cfg: &LocalConfig, f: Var) -> Result<LocalStages> {
    let s = g.shape(f);
    if s.len() != 3 || s[2] != DR_OUT {
        return Err(Error::shape(format!("local branch expects H×W×{DR_OUT}, got {s:?}")));
    }
    let mut conv3 = g.conv2d(f, b.var("local.conv1.w"), Some(b.var("local.conv1.b")), 3)?;
    if cfg.relu {
        conv3 = g.relu(conv3);
    }
    let pooled = g.max_pool2(conv3)?;
    let mut conv1 = g.conv2d(pooled, b.var("local.conv2.w"), Some(b.var("local.conv2.b")), 1)?;
    if cfg.relu {
        conv1 = g.relu(conv1);
    }
    let feature = g.global_max_pool(conv1)?;
    Ok(LocalStages {
        conv3,
        pooled,
        conv1,
        feature,
    })
}

/// 3×3 conv 16→64, 2×2 max pool, 1×1 conv 64→D_o, global max pool; 1×D_o.
pub fn local_feature(g: &mut Graph, b: &Bound, cfg: &LocalConfig, f: Var) -> Result<Var> {
    Ok(local_stages(g, b, cfg, f)?.feature)
}
