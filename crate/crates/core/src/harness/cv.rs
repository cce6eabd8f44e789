use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::train::train;
use crate::datapack::{FoldPlan, Manifest, Sample};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, mean_report, MetricReport, QualityModel};
use crate::projector::ViewSet;

/// Produces a fitted model from one fold's training samples.
pub trait Trainer {
    fn fit(&self, train: &[Sample], fold: usize) -> Result<Box<dyn QualityModel>>;
}

/// Trains the full network and keeps the minimal-loss weights.
pub struct NetTrainer {
    pub cfg: TrainConfig,
}

impl Trainer for NetTrainer {
    fn fit(&self, train_set: &[Sample], fold: usize) -> Result<Box<dyn QualityModel>> {
        log::info!("fold {fold}: training on {} samples", train_set.len());
        let st = train(self.cfg.clone(), train_set)?;
        Ok(Box::new(st.best_model()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<MetricReport>,
    pub mean: MetricReport,
}

impl CvReport {
    /// Fold rows followed by the mean row.
    pub fn rows(&self) -> Vec<MetricReport> {
        let mut r = self.folds.clone();
        r.push(self.mean.clone());
        r
    }
}

/// Samples of `m` in manifest order.
pub fn samples_for(m: &Manifest, views: &BTreeMap<String, ViewSet>) -> Result<Vec<Sample>> {
    m.entries()
        .iter()
        .map(|e| {
            let v = views
                .get(&e.id)
                .ok_or_else(|| Error::Manifest(format!("no rendered views for `{}`", e.id)))?;
            Ok(Sample {
                id: e.id.clone(),
                views: v.clone(),
                mos: e.mos,
            })
        })
        .collect()
}

/// Train and evaluate every fold of `plan`, then average the reports.
pub fn run_cv(
    trainer: &dyn Trainer,
    m: &Manifest,
    views: &BTreeMap<String, ViewSet>,
    plan: &FoldPlan,
    crops: usize,
    seed: u64,
) -> Result<CvReport> {
    plan.check()?;
    let mut folds = Vec::with_capacity(plan.k);
    for f in 0..plan.k {
        let (train_m, test_m) = plan.split(m, f);
        if train_m.is_empty() || test_m.is_empty() {
            return Err(Error::Manifest(format!("fold {f} has an empty side")));
        }
        let model = trainer.fit(&samples_for(&train_m, views)?, f)?;
        let r = evaluate(model.as_ref(), &samples_for(&test_m, views)?, crops, seed, format!("{f}"))?;
        log::info!("fold {f}: plcc {:.4} srocc {:.4} rmse {:.4}", r.plcc, r.srocc, r.rmse);
        folds.push(r);
    }
    let mean = mean_report(&folds).ok_or_else(|| Error::invalid("no folds"))?;
    Ok(CvReport { folds, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapack::{kfold_split, ManifestEntry};

    /// Reads the score back from the first depth pixel.
    struct Oracle;

    impl QualityModel for Oracle {
        fn crop_size(&self) -> usize {
            4
        }

        fn score(&self, v: &ViewSet) -> Result<f64> {
            Ok(v.depth[0][0] as f64 * 10.0)
        }
    }

    struct OracleTrainer;

    impl Trainer for OracleTrainer {
        fn fit(&self, _: &[Sample], _: usize) -> Result<Box<dyn QualityModel>> {
            Ok(Box::new(Oracle))
        }
    }

    fn toy(contents: usize, per: usize) -> (Manifest, BTreeMap<String, ViewSet>) {
        let mut entries = Vec::new();
        let mut views = BTreeMap::new();
        for c in 0..contents {
            for d in 0..per {
                let id = format!("c{c}_d{d}");
                let mos = 1.0 + (c * per + d) as f64 * 0.37 % 8.0;
                let mut v = ViewSet::blank(4);
                for view in 0..6 {
                    v.depth[view] = vec![(mos / 10.0) as f32; 16];
                    v.occupancy[view] = vec![1; 16];
                }
                let v = ViewSet::from_parts(4, v.texture, v.depth, v.occupancy).unwrap();
                views.insert(id.clone(), v);
                entries.push(ManifestEntry {
                    id,
                    path: format!("{c}_{d}.ply").into(),
                    content: format!("c{c}"),
                    mos,
                });
            }
        }
        (Manifest::new(entries).unwrap(), views)
    }

    #[test]
    fn oracle_model_scores_perfectly_on_every_fold() {
        let (m, views) = toy(5, 3);
        let plan = kfold_split(&m, 5, 3).unwrap();
        let r = run_cv(&OracleTrainer, &m, &views, &plan, 2, 0).unwrap();
        assert_eq!(r.folds.len(), 5);
        assert_eq!(r.rows().len(), 6);
        assert!((r.mean.srocc - 1.0).abs() < 1e-12);
        assert!((r.mean.plcc - 1.0).abs() < 1e-6);
        assert_eq!(r.mean.fold, "mean");
    }

    #[test]
    fn missing_views_are_reported() {
        let (m, mut views) = toy(2, 2);
        views.remove("c0_d1");
        assert!(samples_for(&m, &views).is_err());
    }
}
