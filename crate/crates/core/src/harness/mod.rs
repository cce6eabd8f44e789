//! Configuration, training, checkpoints, cross-validation and synthetic data.

pub mod checkpoint;
pub mod config;
pub mod cv;
pub mod optim;
pub mod synth;
pub mod train;
pub mod visual;

use crate::datapack::{Manifest, RenderCache};
use crate::error::Result;

pub use config::TrainConfig;
pub use cv::{run_cv, samples_for, CvReport, NetTrainer, Trainer};
pub use optim::{Adam, AdamSettings};
pub use synth::{SynthConfig, SynthItem};
pub use train::{train, Best, EpochLog, TrainState};

use crate::datapack::Sample;

/// Render (or fetch from the cache) every manifest entry at the configured settings.
pub fn load_samples(m: &Manifest, cache: &RenderCache, cfg: &TrainConfig) -> Result<Vec<Sample>> {
    let views = cache.views_for(m, &cfg.render_settings())?;
    samples_for(m, &views)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cloudio::canonicalize;
    use crate::error::Error;
    use crate::projector::project_views;

    pub(crate) fn fixture(n_contents: usize, levels: usize) -> (TrainConfig, Vec<Sample>) {
        let mut cfg = TrainConfig::tiny();
        cfg.epochs = 3;
        cfg.regions = 3;
        cfg.d_out = 8;
        let items = synth::generate(&SynthConfig {
            contents: n_contents,
            levels,
            points: 1500,
            seed: 5,
        })
        .unwrap();
        let samples = items
            .into_iter()
            .map(|it| Sample {
                views: project_views(&canonicalize(&it.cloud).unwrap(), &cfg.render_settings()).unwrap(),
                id: it.id,
                mos: it.mos,
            })
            .collect();
        (cfg, samples)
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_log() {
        let (cfg, samples) = fixture(2, 3);
        let full = train(cfg.clone(), &samples).unwrap();
        assert_eq!(full.log.len(), 3);
        assert_eq!(full.log[0].lr_rest, cfg.lr_rest);

        let mut part = TrainState::new(cfg.clone(), &samples).unwrap();
        part.run_until(&samples, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        checkpoint::save(&path, &part).unwrap();
        let mut resumed = checkpoint::resume(&path, &cfg).unwrap();
        assert_eq!(resumed, part);
        resumed.run_until(&samples, cfg.epochs).unwrap();
        assert_eq!(resumed.log, full.log);
        assert_eq!(resumed.model.params, full.model.params);
        assert_eq!(resumed.best, full.best);

        let mut other = cfg.clone();
        other.seed += 1;
        assert!(matches!(checkpoint::resume(&path, &other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let (cfg, samples) = fixture(1, 2);
        let mut st = TrainState::new(cfg, &samples).unwrap();
        st.run_until(&samples, 1).unwrap();
        let bytes = checkpoint::encode(&st);
        let back = checkpoint::decode(&bytes).unwrap();
        let v = &samples[0].views;
        assert_eq!(back.best_model().predict(v).unwrap(), st.best_model().predict(v).unwrap());
        assert_eq!(back.model.predict(v).unwrap(), st.model.predict(v).unwrap());
        assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint::decode(&bad).is_err());
    }

    #[test]
    fn nan_loss_names_the_batch() {
        let (mut cfg, mut samples) = fixture(1, 2);
        cfg.head_bias = Some(0.0);
        samples[1].mos = f64::NAN;
        let mut st = TrainState::new(cfg, &samples).unwrap();
        match st.run_epoch(&samples) {
            Err(Error::NonFiniteLoss { epoch, batch, samples: ids }) => {
                assert_eq!((epoch, batch), (0, 0));
                assert!(ids.contains(&"c00_l1".to_string()));
            }
            other => panic!("expected a non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn best_snapshot_tracks_the_minimal_loss_epoch() {
        let (cfg, samples) = fixture(1, 3);
        let st = train(cfg, &samples).unwrap();
        let min = st.log.iter().map(|l| l.loss).fold(f64::INFINITY, f64::min);
        let best = st.best.as_ref().unwrap();
        assert_eq!(best.loss, min);
        assert_eq!(st.log[best.epoch].loss, min);
    }
}
