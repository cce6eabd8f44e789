use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feedback::{FeedbackConfig, Interpolation};
use crate::globalenc::EncoderConfig;
use crate::localenc::LocalConfig;
use crate::model::ModelConfig;
use crate::objective::ObjectiveConfig;
use crate::projector::RenderSettings;

/// Every training, rendering and model hyperparameter as one flat table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub crop_size: usize,
    pub resolution: usize,
    pub splat_radius: f64,
    pub max_splats: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub d_out: usize,
    pub attn_norm_affine: bool,
    pub regions: usize,
    pub kernel_size: usize,
    pub st_temperature: f64,
    pub interpolation: Interpolation,
    pub local_relu: bool,
    pub lambda_dis: f64,
    pub lambda_rank: f64,
    pub softrank_epsilon: f64,
    pub rank_stop_coarse: bool,
    pub eval_crops: usize,
    pub seed: u64,
    /// Optional safetensors file with timm ViT weights.
    pub pretrained: Option<PathBuf>,
    /// Initial head bias; the mean training MOS when unset.
    pub head_bias: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr_backbone: 2e-5,
            lr_rest: 2e-4,
            lr_decay: 0.9,
            lr_decay_every: 5,
            weight_decay: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            crop_size: 224,
            resolution: 512,
            splat_radius: 0.01,
            max_splats: 8,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            d_out: 256,
            attn_norm_affine: true,
            regions: 8,
            kernel_size: 3,
            st_temperature: 1.0,
            interpolation: Interpolation::Bilinear,
            local_relu: true,
            lambda_dis: 1.0,
            lambda_rank: 1.0,
            softrank_epsilon: 0.1,
            rank_stop_coarse: false,
            eval_crops: 10,
            seed: 0,
            pretrained: None,
            head_bias: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: D=8, L=1, D_o=16, 64×64 views, P=16.
    pub fn tiny() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            lr_backbone: 3e-4,
            lr_rest: 3e-3,
            crop_size: 64,
            resolution: 64,
            splat_radius: 0.05,
            embed_dim: 8,
            depth: 1,
            heads: 4,
            mlp_ratio: 2,
            d_out: 16,
            eval_crops: 1,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Override one key from a `key=value` string; the value is read as a TOML
    /// literal and falls back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        self.apply_overrides(&[assignment])
    }

    /// Apply several overrides, validating only the end result.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, assignments: &[S]) -> Result<()> {
        let mut next = self.clone();
        for a in assignments {
            next.set_unchecked(a.as_ref())?;
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn set_unchecked(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let known = toml::Table::try_from(Self::default()).expect("defaults serialize");
        let optional = ["pretrained", "head_bias"];
        if !known.contains_key(key) && !optional.contains(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_string(), value);
        *self = table.try_into().map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("lr_decay_every", self.lr_decay_every),
            ("crop_size", self.crop_size),
            ("resolution", self.resolution),
            ("max_splats", self.max_splats),
            ("eval_crops", self.eval_crops),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [
            ("lr_backbone", self.lr_backbone),
            ("lr_rest", self.lr_rest),
            ("splat_radius", self.splat_radius),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.crop_size > self.resolution {
            return Err(Error::Config(format!(
                "crop_size {} exceeds resolution {}",
                self.crop_size, self.resolution
            )));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                patch_size: self.patch_size,
                embed_dim: self.embed_dim,
                depth: self.depth,
                heads: self.heads,
                d_out: self.d_out,
                mlp_ratio: self.mlp_ratio,
                image_size: self.crop_size,
                attn_norm_affine: self.attn_norm_affine,
            },
            feedback: FeedbackConfig {
                regions: self.regions,
                kernel_size: self.kernel_size,
                st_temperature: self.st_temperature,
                interpolation: self.interpolation,
            },
            local: LocalConfig {
                d_out: self.d_out,
                relu: self.local_relu,
            },
            objective: ObjectiveConfig {
                lambda_dis: self.lambda_dis,
                lambda_rank: self.lambda_rank,
                softrank_epsilon: self.softrank_epsilon,
                rank_stop_coarse: self.rank_stop_coarse,
            },
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            resolution: self.resolution,
            radius: self.splat_radius,
            max_splats: self.max_splats,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Learning rates `(backbone, rest)` in effect during `epoch` (0-based).
    pub fn learning_rates(&self, epoch: usize) -> (f64, f64) {
        let f = self.lr_decay.powi((epoch / self.lr_decay_every) as i32);
        (self.lr_backbone * f, self.lr_rest * f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let t = TrainConfig::tiny();
        assert_eq!(TrainConfig::from_toml(&t.to_toml()).unwrap(), t);
    }

    #[test]
    fn partial_files_use_defaults() {
        let c = TrainConfig::from_toml("epochs = 3\nseed = 9\n").unwrap();
        assert_eq!((c.epochs, c.seed, c.batch_size), (3, 9, 8));
        assert!(TrainConfig::from_toml("nonsense = 1").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = TrainConfig::default();
        c.set("epochs=7").unwrap();
        c.set("interpolation = nearest").unwrap();
        c.set("head_bias=2.5").unwrap();
        c.set("pretrained=/tmp/vit.safetensors").unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.interpolation, Interpolation::Nearest);
        assert_eq!(c.head_bias, Some(2.5));
        assert_eq!(c.pretrained.as_deref(), Some(Path::new("/tmp/vit.safetensors")));
        assert!(c.set("bogus=1").is_err());
        assert!(c.set("epochs=0").is_err());
        assert!(c.set("epochs").is_err());
        assert_eq!(c.epochs, 7);
    }

    #[test]
    fn schedule_decays_every_five_epochs() {
        let c = TrainConfig::default();
        for e in 0..5 {
            assert_eq!(c.learning_rates(e).1, 2e-4);
        }
        for e in 5..10 {
            assert!((c.learning_rates(e).1 - 1.8e-4).abs() < 1e-18);
        }
        assert!((c.learning_rates(10).0 - 2e-5 * 0.81).abs() < 1e-18);
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.adam_beta2 = 0.99;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_inconsistent_values() {
        let mut c = TrainConfig::default();
        assert!(c.set("crop_size=600").is_err());
        assert!(c.set("lr_decay=1.5").is_err());
        assert!(c.set("heads=7").is_err());
        c.apply_overrides(&["heads=2", "embed_dim=8"]).unwrap();
        assert_eq!((c.heads, c.embed_dim), (2, 8));
    }
}
