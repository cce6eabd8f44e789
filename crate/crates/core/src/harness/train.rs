use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{Adam, AdamSettings};
use crate::autodiff::Graph;
use crate::datapack::{crop_nonblank, Sample};
use crate::error::{Error, Result};
use crate::evalkit::srocc;
use crate::globalenc::load_pretrained;
use crate::model::Model;
use crate::params::ParamSet;
use crate::projector::ViewSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the batch totals.
    pub loss: f64,
    pub reg: f64,
    pub dis: f64,
    pub rank: f64,
    pub lr_backbone: f64,
    pub lr_rest: f64,
    /// SROCC of the fine-head scores seen during the epoch, before each step.
    pub train_srocc: Option<f64>,
}

/// Weights after the epoch with the lowest training loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Best {
    pub epoch: usize,
    pub loss: f64,
    pub params: ParamSet,
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub cfg: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
    pub best: Option<Best>,
}

pub fn adam_settings(cfg: &TrainConfig) -> AdamSettings {
    AdamSettings {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    }
}

impl TrainState {
    /// Fresh model; heads start at `cfg.head_bias` or the mean training MOS.
    pub fn new(cfg: TrainConfig, train: &[Sample]) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let bias = cfg
            .head_bias
            .unwrap_or_else(|| train.iter().map(|s| s.mos).sum::<f64>() / train.len() as f64);
        let mut model = Model::init(cfg.model_config(), cfg.seed, bias)?;
        if let Some(path) = &cfg.pretrained {
            load_pretrained(path, &model.cfg.encoder, &mut model.params)?;
        }
        let adam = Adam::new(&model.params, adam_settings(&cfg));
        Ok(Self {
            cfg,
            model,
            adam,
            epoch: 0,
            log: Vec::new(),
            best: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// The minimal-loss snapshot, or the current weights before any epoch.
    pub fn best_model(&self) -> Model {
        Model {
            cfg: self.model.cfg.clone(),
            params: self.best.as_ref().map_or_else(|| self.model.params.clone(), |b| b.params.clone()),
        }
    }

    pub fn run_epoch(&mut self, train: &[Sample]) -> Result<&EpochLog> {
        let cfg = &self.cfg;
        let e = self.epoch;
        let (lr_b, lr_r) = cfg.learning_rates(e);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(e as u64 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut sums = [0.0; 4];
        let (mut seen_pred, mut seen_mos) = (Vec::new(), Vec::new());
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let crops = chunk
                .iter()
                .map(|&i| crop_nonblank(&train[i].views, cfg.crop_size, &mut rng))
                .collect::<Result<Vec<ViewSet>>>()?;
            let refs: Vec<&ViewSet> = crops.iter().collect();
            let mos: Vec<f64> = chunk.iter().map(|&i| train[i].mos).collect();
            let ids = || chunk.iter().map(|&i| train[i].id.clone()).collect::<Vec<_>>();

            let mut g = Graph::new();
            let b = self.model.params.bind(&mut g);
            let (loss, report, preds) = match self.model.batch_loss(&mut g, &b, &refs, &mos) {
                Err(Error::NonFiniteActivation { block }) => {
                    log::error!("non-finite activation in block {block}; batch {:?}", ids());
                    return Err(Error::NonFiniteLoss { epoch: e, batch: bi, samples: ids() });
                }
                r => r?,
            };
            if !report.total.is_finite() {
                log::error!("non-finite loss {report:?}; batch {:?}", ids());
                return Err(Error::NonFiniteLoss { epoch: e, batch: bi, samples: ids() });
            }
            let mut grads = g.backward(loss)?;
            let grads = self.model.params.collect_grads(&b, &mut grads);
            if grads.iter().any(|t| !t.all_finite()) {
                log::error!("non-finite gradient; batch {:?}", ids());
                return Err(Error::NonFiniteLoss { epoch: e, batch: bi, samples: ids() });
            }
            self.adam.update(&mut self.model.params, &grads, lr_b, lr_r)?;

            let w = chunk.len() as f64;
            for (s, v) in sums.iter_mut().zip([report.total, report.reg, report.dis, report.rank]) {
                *s += w * v;
            }
            seen_pred.extend(preds.iter().map(|p| p.1));
            seen_mos.extend(mos);
        }
        let n = train.len() as f64;
        let entry = EpochLog {
            epoch: e,
            loss: sums[0] / n,
            reg: sums[1] / n,
            dis: sums[2] / n,
            rank: sums[3] / n,
            lr_backbone: lr_b,
            lr_rest: lr_r,
            train_srocc: srocc(&seen_pred, &seen_mos).ok(),
        };
        log::info!(
            "epoch {e}: loss {:.5} (reg {:.5}, dis {:.5}, rank {:.5}) srocc {:?}",
            entry.loss,
            entry.reg,
            entry.dis,
            entry.rank,
            entry.train_srocc
        );
        if self.best.as_ref().map_or(true, |b| entry.loss < b.loss) {
            self.best = Some(Best {
                epoch: e,
                loss: entry.loss,
                params: self.model.params.clone(),
            });
        }
        self.epoch += 1;
        self.log.push(entry);
        Ok(self.log.last().expect("just pushed"))
    }

    /// Train until `stop` epochs are complete (capped at `cfg.epochs`).
    pub fn run_until(&mut self, train: &[Sample], stop: usize) -> Result<()> {
        while self.epoch < stop.min(self.cfg.epochs) {
            self.run_epoch(train)?;
        }
        Ok(())
    }
}

/// Full run from scratch.
pub fn train(cfg: TrainConfig, samples: &[Sample]) -> Result<TrainState> {
    let mut st = TrainState::new(cfg, samples)?;
    let epochs = st.cfg.epochs;
    st.run_until(samples, epochs)?;
    Ok(st)
}
