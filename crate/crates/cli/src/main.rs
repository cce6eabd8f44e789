use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use afqnet_core::datapack::crop_nonblank;
use afqnet_core::evalkit::{evaluate, predict_sample, write_reports};
use afqnet_core::harness::{checkpoint, load_samples, run_cv, synth, visual, NetTrainer, TrainConfig, TrainState};
use afqnet_core::projector::export_pngs;
use afqnet_core::{kfold_split, Manifest, RenderCache};

#[derive(Parser)]
#[command(name = "afqnet", version, about = "No-reference point cloud quality assessment")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML file with training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Render cache directory (default: $AFQ_CACHE_DIR).
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }

    fn cache(&self) -> RenderCache {
        match &self.cache {
            Some(d) => RenderCache::new(Some(d.clone())),
            None => RenderCache::from_env(),
        }
    }
}

#[derive(Args, Clone)]
struct FoldArgs {
    /// Use one fold of a content-disjoint k-fold split.
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
}

impl FoldArgs {
    /// `(train, test)` of the selected fold, or the whole manifest twice.
    fn split(&self, m: &Manifest, seed: u64) -> Result<(Manifest, Manifest)> {
        match (self.fold, self.folds) {
            (Some(f), Some(k)) => {
                if f >= k {
                    bail!("fold {f} out of range for {k} folds");
                }
                Ok(kfold_split(m, k, seed)?.split(m, f))
            }
            _ => Ok((m.clone(), m.clone())),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Project every manifest entry into six views (filling the cache).
    Render {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write per-view PNGs here.
        #[arg(long)]
        png_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write a synthetic dataset with graded distortions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        contents: usize,
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 4000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and write a checkpoint.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint; its config hash must match.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Write the per-epoch log as JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        fold: FoldArgs,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Multi-crop evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        fold: FoldArgs,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Score one point cloud.
    Predict {
        ply: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Dump the guided mask and per-head attention of one crop.
    Visualize {
        ply: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// k-fold cross-validation.
    Cv {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Report CSV with one row per fold plus the mean.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "cloud".into(), |s| s.to_string_lossy().into_owned())
}

fn print_report(r: &afqnet_core::MetricReport) {
    println!("{:>6}  plcc {:.4}  srocc {:.4}  rmse {:.4}", r.fold, r.plcc, r.srocc, r.rmse);
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Render { manifest, png_dir, cfg } => {
            let c = cfg.load()?;
            let m = Manifest::load(&manifest)?;
            let cache = cfg.cache();
            if cache.dir().is_none() && png_dir.is_none() {
                log::warn!("no cache directory and no --png-dir; renders are discarded");
            }
            let settings = c.render_settings();
            for e in m.entries() {
                let vs = cache.views(&e.path, &settings).with_context(|| format!("rendering `{}`", e.id))?;
                if let Some(d) = &png_dir {
                    export_pngs(&vs, &settings, d, &e.id)?;
                }
                println!("{}  ratios {:?}", e.id, vs.ratios.map(|r| (r * 1000.0).round() / 1000.0));
            }
        }
        Cmd::Synth {
            out,
            contents,
            levels,
            points,
            seed,
        } => {
            let m = synth::write_dataset(
                &synth::SynthConfig {
                    contents,
                    levels,
                    points,
                    seed,
                },
                &out,
            )?;
            println!("wrote {} clouds and {}", m.len(), out.join("manifest.csv").display());
        }
        Cmd::Train {
            manifest,
            out,
            resume,
            stop_after,
            log: log_path,
            fold,
            cfg,
        } => {
            let c = cfg.load()?;
            let m = Manifest::load(&manifest)?;
            let (train_m, _) = fold.split(&m, c.seed)?;
            let samples = load_samples(&train_m, &cfg.cache(), &c)?;
            let mut st = match &resume {
                Some(p) => checkpoint::resume(p, &c)?,
                None => TrainState::new(c.clone(), &samples)?,
            };
            let stop = stop_after.unwrap_or(c.epochs);
            while st.epoch < stop.min(c.epochs) {
                let e = st.run_epoch(&samples)?;
                println!("epoch {:>3}  loss {:.5}  train srocc {:?}", e.epoch, e.loss, e.train_srocc);
                checkpoint::save(&out, &st)?;
            }
            checkpoint::save(&out, &st)?;
            if let Some(p) = log_path {
                std::fs::write(&p, serde_json::to_string_pretty(&st.log)?).with_context(|| p.display().to_string())?;
            }
            if let Some(b) = &st.best {
                println!("best epoch {} (loss {:.5}); checkpoint {}", b.epoch, b.loss, out.display());
            }
        }
        Cmd::Eval {
            manifest,
            checkpoint: ckpt,
            out,
            fold,
            cache,
        } => {
            let st = checkpoint::load(&ckpt)?;
            let m = Manifest::load(&manifest)?;
            let (_, test_m) = fold.split(&m, st.cfg.seed)?;
            let cache = cache.map_or_else(RenderCache::from_env, |d| RenderCache::new(Some(d)));
            let samples = load_samples(&test_m, &cache, &st.cfg)?;
            let name = fold.fold.map_or_else(|| "all".to_string(), |f| f.to_string());
            let r = evaluate(&st.best_model(), &samples, st.cfg.eval_crops, st.cfg.seed, name)?;
            print_report(&r);
            if let Some(p) = out {
                write_reports(&p, &[r])?;
            }
        }
        Cmd::Predict { ply, checkpoint: ckpt } => {
            let st = checkpoint::load(&ckpt)?;
            let vs = RenderCache::from_env().views(&ply, &st.cfg.render_settings())?;
            let score = predict_sample(&st.best_model(), &vs, st.cfg.eval_crops, st.cfg.seed, 0)?;
            println!("{score:.6}");
        }
        Cmd::Visualize {
            ply,
            checkpoint: ckpt,
            out,
        } => {
            let st = checkpoint::load(&ckpt)?;
            let vs = RenderCache::from_env().views(&ply, &st.cfg.render_settings())?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(st.cfg.seed);
            let crop = crop_nonblank(&vs, st.cfg.crop_size, &mut rng)?;
            let v = visual::explain(&st.best_model(), &crop)?;
            for p in visual::write_visuals(&v, &out, &stem(&ply))? {
                println!("{}", p.display());
            }
            println!("coarse {:.6}  fine {:.6}", v.coarse, v.fine);
        }
        Cmd::Cv {
            manifest,
            folds,
            out,
            cfg,
        } => {
            let c = cfg.load()?;
            let m = Manifest::load(&manifest)?;
            let plan = kfold_split(&m, folds, c.seed)?;
            let views = cfg.cache().views_for(&m, &c.render_settings())?;
            let r = run_cv(&NetTrainer { cfg: c.clone() }, &m, &views, &plan, c.eval_crops, c.seed)?;
            for row in r.rows() {
                print_report(&row);
            }
            if let Some(p) = out {
                write_reports(&p, &r.rows())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
