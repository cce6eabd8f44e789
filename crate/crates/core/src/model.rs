//! The full network: global branch, feedback module, local branch and heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::evalkit::QualityModel;
use crate::feedback::{self, drconv, plan_regions, FeedbackConfig, RegionPlan};
use crate::globalenc::{self, EncoderConfig, VIT_PREFIX};
use crate::localenc::{self, local_stages, LocalConfig, LocalStages};
use crate::objective::{self, loss_dis, loss_rank, loss_reg, total_loss, LossReport, ObjectiveConfig};
use crate::params::{Bound, ParamSet};
use crate::projector::{stitch, ViewSet, VIEW_COUNT};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub feedback: FeedbackConfig,
    pub local: LocalConfig,
    pub objective: ObjectiveConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.feedback.validate()?;
        self.objective.validate()?;
        if self.local.d_out != self.encoder.d_out {
            return Err(Error::Config(format!(
                "local d_out {} differs from global d_out {}",
                self.local.d_out, self.encoder.d_out
            )));
        }
        Ok(())
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Transformer weights (pretrained when available).
    Backbone,
    Rest,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with(VIT_PREFIX) {
        ParamGroup::Backbone
    } else {
        ParamGroup::Rest
    }
}

/// Vars produced by one forward pass over a single sample.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Per-view class-attention maps, grid × grid × N_h.
    pub maps: Vec<Var>,
    pub global: Var,
    pub stitched: Var,
    pub plan: RegionPlan,
    pub region_features: Var,
    pub local: LocalStages,
    pub coarse: Var,
    pub fine: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    /// Fresh weights; both head biases start at `head_bias`.
    pub fn init(cfg: ModelConfig, seed: u64, head_bias: f64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        globalenc::init_params(&cfg.encoder, &mut rng, &mut params)?;
        feedback::init_params(&cfg.feedback, cfg.encoder.heads, &mut rng, &mut params)?;
        localenc::init_params(&cfg.local, &mut rng, &mut params)?;
        objective::init_params(cfg.encoder.d_out, head_bias, &mut rng, &mut params);
        Ok(Self { cfg, params })
    }

    pub fn crop_size(&self) -> usize {
        self.cfg.encoder.image_size
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, views: &ViewSet) -> Result<Forward> {
        let n = views.size();
        if n != self.cfg.encoder.image_size {
            return Err(Error::shape(format!(
                "model expects {0}×{0} views, got {n}×{n}",
                self.cfg.encoder.image_size
            )));
        }
        let enc = &self.cfg.encoder;
        let mut maps = Vec::with_capacity(VIEW_COUNT);
        for i in 0..VIEW_COUNT {
            let t = g.constant(views.texture_tensor(i));
            let d = g.constant(views.depth_tensor(i));
            let z0 = globalenc::embed(g, b, enc, t, d)?;
            let (_, attn) = globalenc::encode(g, b, enc, z0)?;
            maps.push(globalenc::extract_class_attention(g, b, enc, &attn)?);
        }
        let global = globalenc::global_feature(g, b, &maps, &views.ratios)?;

        let s = stitch(views)?;
        let stitched = g.constant(s.image_tensor());
        let plan = plan_regions(g, b, &self.cfg.feedback, &maps, &s.occupancy, (s.height, s.width))?;
        let region_features = drconv(g, stitched, plan.filters, plan.logits, &self.cfg.feedback)?;
        let local = local_stages(g, b, &self.cfg.local, region_features)?;
        let (coarse, fine) = objective::predict_heads(g, b, global, local.feature)?;
        Ok(Forward {
            maps,
            global,
            stitched,
            plan,
            region_features,
            local,
            coarse,
            fine,
        })
    }

    /// Build the batch loss on `g`. Returns the total-loss var, its parts and
    /// the per-sample `(q_c, q_f)` predictions.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        b: &Bound,
        views: &[&ViewSet],
        mos: &[f64],
    ) -> Result<(Var, LossReport, Vec<(f64, f64)>)> {
        if views.is_empty() || views.len() != mos.len() {
            return Err(Error::invalid("batch needs one MOS per sample"));
        }
        let mut coarse = Vec::with_capacity(views.len());
        let mut fine = Vec::with_capacity(views.len());
        let mut pairs = Vec::with_capacity(views.len());
        for vs in views {
            let f = self.forward(g, b, vs)?;
            coarse.push(f.coarse);
            fine.push(f.fine);
            pairs.push((f.global, f.local.feature));
        }
        let qc = g.concat_rows(&coarse)?;
        let qf = g.concat_rows(&fine)?;
        let reg = loss_reg(g, qc, qf, mos)?;
        let dis = loss_dis(g, &pairs)?;
        let rank = loss_rank(g, qc, qf, mos, &self.cfg.objective)?;
        let (total, report) = total_loss(g, reg, dis, rank, &self.cfg.objective)?;
        let preds = g
            .value(qc)
            .data()
            .iter()
            .zip(g.value(qf).data())
            .map(|(&c, &f)| (c, f))
            .collect();
        Ok((total, report, preds))
    }

    /// `(q_c, q_f)` for one crop, without gradients.
    pub fn predict(&self, views: &ViewSet) -> Result<(f64, f64)> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &b, views)?;
        Ok((g.value(f.coarse).item(), g.value(f.fine).item()))
    }

    /// Named shapes of the feedback and local intermediates of one forward pass.
    pub fn trace_shapes(&self, views: &ViewSet) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let mut g = Graph::new();
        let b = self.params.bind_frozen(&mut g);
        let f = self.forward(&mut g, &b, views)?;
        let s = |v: Var| g.shape(v).to_vec();
        let (h, w) = (g.shape(f.stitched)[0], g.shape(f.stitched)[1]);
        Ok(vec![
            ("attention map", s(f.maps[0])),
            ("enhanced attention", s(f.plan.enhanced)),
            ("filter avg pool", s(f.plan.pooled)),
            ("filter 1x1 conv a", s(f.plan.hidden)),
            ("filter 1x1 conv b", s(f.plan.filters)),
            ("mask 3x3 conv", s(f.plan.coarse_logits)),
            ("mask interpolation", s(f.plan.logits)),
            ("mask argmax", vec![h, w, usize::from(f.plan.mask.len() == h * w)]),
            ("stitched image", s(f.stitched)),
            ("drconv", s(f.region_features)),
            ("local 3x3 conv", s(f.local.conv3)),
            ("local max pool", s(f.local.pooled)),
            ("local 1x1 conv", s(f.local.conv1)),
            ("global max pool", s(f.local.feature)),
            ("global feature", s(f.global)),
        ])
    }
}

impl QualityModel for Model {
    fn crop_size(&self) -> usize {
        self.cfg.encoder.image_size
    }

    fn score(&self, views: &ViewSet) -> Result<f64> {
        Ok(self.predict(views)?.1)
    }
}
