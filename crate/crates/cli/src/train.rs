//! Epoch loop shared by network training and the pre-study heads.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mlctx_core::data::{preprocess_train, Dataset, Preprocess};
use mlctx_core::eval::{evaluate, EvalMode};
use mlctx_core::nn::{backward, derive_seed, forward, init_params};
use mlctx_core::optim::{lr_at, sgd_step, TrainConfig};
use mlctx_core::{arch, Mode, NetworkGraph, ParamSet, Scalar, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;

// Independent RNG streams derived from the run seed.
const SHUFFLE_STREAM: u64 = 1 << 40;
const AUGMENT_STREAM: u64 = 2 << 40;
const DROPOUT_STREAM: u64 = 3 << 40;
const INIT_STREAM: u64 = 4 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: Option<f64>,
    pub val_top1: Option<f64>,
}

pub const LOG_HEADER: &str = "iter,epoch,lr,loss,val_top1";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.iter, r.epoch, r.lr, opt(r.loss), opt(r.val_top1));
    }
    s
}

/// Hooks that let callers build batches and act at epoch ends.
pub trait FitHooks<T: Scalar> {
    /// Input tensor and labels for the given sample indices.
    fn batch(&mut self, indices: &[usize], iter: usize) -> Result<(Tensor<T>, Vec<usize>)>;

    /// Called after each epoch; the returned value is logged as
    /// validation top-1.
    fn epoch_end(&mut self, _epoch: usize, _iter: usize, _params: &ParamSet<T>) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Runs `config.epochs` epochs of shuffled mini-batch SGD. Every row of
/// the returned log carries the learning rate actually applied; a last
/// row records `lr_at(max_iter)`.
pub fn fit<T: Scalar>(
    graph: &NetworkGraph,
    params: &mut ParamSet<T>,
    config: &TrainConfig,
    num_samples: usize,
    aux_weight: f64,
    seed: u64,
    hooks: &mut impl FitHooks<T>,
) -> Result<Vec<LogRow>> {
    if num_samples == 0 {
        bail!("training set is empty");
    }
    let ipe = config.iters_per_epoch(num_samples);
    let max_iter = ipe * config.epochs;
    let mut log = Vec::with_capacity(max_iter + config.epochs + 1);
    let mut order: Vec<usize> = (0..num_samples).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SHUFFLE_STREAM + epoch as u64));
        order.shuffle(&mut rng);
        for b in 0..ipe {
            let iter = epoch * ipe + b;
            let idx = &order[b * config.batch_size..((b + 1) * config.batch_size).min(num_samples)];
            let (input, labels) = hooks.batch(idx, iter)?;
            let drop_seed = derive_seed(seed, DROPOUT_STREAM + iter as u64);
            let acts = forward(graph, params, &input, Mode::Train, Some(drop_seed))?;
            let loss = backward(graph, params, &acts, &labels, aux_weight)?;
            if !loss.is_finite() {
                bail!("non-finite loss {loss} at iteration {iter} (epoch {epoch})");
            }
            let lr = lr_at(&config.schedule, config, iter, max_iter, epoch)?;
            sgd_step(params, lr, config.momentum, config.weight_decay, config.decay_biases)
                .with_context(|| format!("iteration {iter}"))?;
            log.push(LogRow { iter, epoch, lr, loss: Some(loss), val_top1: None });
        }
        let val = hooks.epoch_end(epoch, (epoch + 1) * ipe, params)?;
        if let Some(last) = log.last_mut() {
            last.val_top1 = val;
        }
    }
    log.push(LogRow {
        iter: max_iter,
        epoch: config.epochs,
        lr: lr_at(&config.schedule, config, max_iter, max_iter, config.epochs)?,
        loss: None,
        val_top1: None,
    });
    Ok(log)
}

/// Augmented image batches plus per-epoch validation and checkpointing.
struct ImageHooks<'a> {
    cfg: &'a RunConfig,
    graph: &'a NetworkGraph,
    train: &'a Dataset,
    val: &'a Dataset,
    preprocess: Preprocess,
    checkpoint: Option<PathBuf>,
}

impl<T: Scalar> FitHooks<T> for ImageHooks<'_> {
    fn batch(&mut self, indices: &[usize], iter: usize) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut imgs = Vec::with_capacity(indices.len());
        for (j, &i) in indices.iter().enumerate() {
            let s = derive_seed(self.cfg.seed, AUGMENT_STREAM + (iter * self.cfg.train.batch_size + j) as u64);
            imgs.push(preprocess_train(&self.train.image_tensor::<T>(i), &self.preprocess, s)?.0);
        }
        Ok((Tensor::stack(&imgs)?, indices.iter().map(|&i| self.train.label(i)).collect()))
    }

    fn epoch_end(&mut self, epoch: usize, iter: usize, params: &ParamSet<T>) -> Result<Option<f64>> {
        let last = epoch + 1 == self.cfg.train.epochs;
        if let Some(path) = &self.checkpoint {
            if last || (self.cfg.checkpoint_every > 0 && (epoch + 1) % self.cfg.checkpoint_every == 0) {
                Checkpoint::from_params(&self.cfg.preset_key, iter as u64, params).save(path)?;
            }
        }
        if self.val.is_empty() || !(last || (self.cfg.val_every > 0 && (epoch + 1) % self.cfg.val_every == 0)) {
            return Ok(None);
        }
        let r = evaluate(
            self.graph,
            params,
            self.val,
            EvalMode::CenterCrop,
            &self.cfg.crop_plan,
            &self.preprocess,
            self.cfg.eval_batch,
        )?;
        Ok(Some(r.top1))
    }
}

pub fn preprocess_for(cfg: &RunConfig, train: &Dataset) -> Result<Preprocess> {
    let mean = train
        .mean_pixel()
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| train.compute_mean_pixel());
    Ok(Preprocess::new(cfg.base_size, cfg.crop_size, mean)?.with_scale(cfg.input_scale))
}

/// Result of a training run.
pub struct Trained<T: Scalar> {
    pub graph: NetworkGraph,
    pub params: ParamSet<T>,
    pub log: Vec<LogRow>,
    pub preprocess: Preprocess,
}

/// Builds the preset, initializes it from the run seed and trains it on
/// `train`. With `out` set, the log CSV and checkpoints land there.
pub fn train_network<T: Scalar>(
    cfg: &RunConfig,
    train: &Dataset,
    val: &Dataset,
    write_outputs: bool,
) -> Result<Trained<T>> {
    let graph = arch::build(&cfg.preset)?;
    let classes = graph.num_classes()?;
    if classes != train.num_classes() {
        bail!(
            "dataset has {} classes, preset `{}` predicts {classes}",
            train.num_classes(),
            cfg.preset_key
        );
    }
    let mut params = init_params::<T>(&graph, cfg.init, derive_seed(cfg.seed, INIT_STREAM))?;
    let preprocess = preprocess_for(cfg, train)?;
    let checkpoint = if write_outputs {
        Some(cfg.ensure_out_dir()?.join("checkpoint.mlck"))
    } else {
        None
    };
    let mut hooks = ImageHooks {
        cfg,
        graph: &graph,
        train,
        val,
        preprocess: preprocess.clone(),
        checkpoint,
    };
    let result = fit(&graph, &mut params, &cfg.train, train.len(), cfg.aux_weight, cfg.seed, &mut hooks);
    let log = match result {
        Ok(log) => log,
        Err(e) if write_outputs => {
            return Err(e.context(format!(
                "training aborted; last good checkpoint (if any) kept at {}",
                cfg.out.join("checkpoint.mlck").display()
            )))
        }
        Err(e) => return Err(e),
    };
    if write_outputs {
        let path = cfg.out.join("train_log.csv");
        fs::write(&path, log_csv(&log)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(Trained { graph, params, log, preprocess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mlctx_core::nn::{Dims, GraphBuilder, InitPolicy, LayerKind};
    use mlctx_core::optim::Schedule;
    use mlctx_core::Shape;

    /// Two separable blobs in the plane.
    struct Blobs {
        poison: bool,
    }

    impl FitHooks<f64> for Blobs {
        fn batch(&mut self, indices: &[usize], _iter: usize) -> Result<(Tensor<f64>, Vec<usize>)> {
            let labels: Vec<usize> = indices.iter().map(|&i| i % 2).collect();
            let mut data: Vec<f64> = labels
                .iter()
                .zip(indices)
                .flat_map(|(&l, &i)| {
                    let s = if l == 0 { -1.0 } else { 1.0 };
                    [s + 0.01 * i as f64, s]
                })
                .collect();
            if self.poison {
                data[0] = f64::NAN;
            }
            Ok((Tensor::from_vec(Shape::new(indices.len(), 2, 1, 1)?, data)?, labels))
        }

        fn epoch_end(&mut self, epoch: usize, _iter: usize, _params: &ParamSet<f64>) -> Result<Option<f64>> {
            Ok(Some(epoch as f64))
        }
    }

    fn toy() -> (NetworkGraph, TrainConfig) {
        let mut b = GraphBuilder::new(Dims::flat(2));
        b.add("fc", LayerKind::Fc { out: 2 }, &["data"]).unwrap();
        b.add("prob", LayerKind::SoftmaxXent, &["fc"]).unwrap();
        let cfg = TrainConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            decay_biases: false,
            batch_size: 4,
            epochs: 3,
            schedule: Schedule::Poly { power: 0.5 },
        };
        (b.finish().unwrap(), cfg)
    }

    fn run(poison: bool) -> Result<Vec<LogRow>> {
        let (g, cfg) = toy();
        let mut p = init_params::<f64>(&g, InitPolicy::Normalized, 1).unwrap();
        fit(&g, &mut p, &cfg, 10, 0.0, 5, &mut Blobs { poison })
    }

    #[test]
    fn log_layout() {
        let log = run(false).unwrap();
        // ceil(10 / 4) = 3 iterations per epoch, plus the closing row
        assert_eq!(log.len(), 10);
        assert_eq!(log[0].lr, 0.1);
        let last = log.last().unwrap();
        assert_eq!((last.iter, last.epoch, last.lr, last.loss), (9, 3, 0.0, None));
        let vals: Vec<(usize, f64)> = log.iter().filter_map(|r| r.val_top1.map(|v| (r.iter, v))).collect();
        assert_eq!(vals, vec![(2, 0.0), (5, 1.0), (8, 2.0)]);
        assert!(log.windows(2).all(|w| w[1].lr < w[0].lr));
        let first = log[0].loss.unwrap();
        assert!(log[8].loss.unwrap() < first);
        assert!(log_csv(&log).starts_with("iter,epoch,lr,loss,val_top1\n0,0,0.1,"));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(log_csv(&run(false).unwrap()), log_csv(&run(false).unwrap()));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let err = run(true).unwrap_err().to_string();
        assert!(err.contains("non-finite loss") && err.contains("iteration 0"), "{err}");
    }
}
