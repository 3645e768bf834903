//! The five commands. Each returns its printable report so tests can
//! inspect it; files go to the configured output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use mlctx_core::arch::{self, count_params, diff_against_reference, infer_shapes, reference_rows, ShapeTable};
use mlctx_core::data::{extract_features, write_feature_store, Dataset, FeatureStore, Preprocess};
use mlctx_core::eval::{
    accuracy_table, benchmark_overhead, evaluate, timing_table, AccuracyRow, EvalMode, EvalReport, Overhead,
    TimingReport,
};
use mlctx_core::nn::{derive_seed, forward, init_params, Dims, GraphBuilder, LayerKind, Mode};
use mlctx_core::optim::TrainConfig;
use mlctx_core::{ArchPreset, Family, NetworkGraph, ParamSet, Precision, Scalar, Shape, Tensor};

use crate::checkpoint::Checkpoint;
use crate::config::{EvalSelection, RunConfig};
use crate::train::{fit, preprocess_for, train_network, FitHooks, LogRow};

// ---------------------------------------------------------------- shapes

pub struct ShapesOutput {
    pub table: ShapeTable,
    /// `None` when no reference table exists for the preset.
    pub diff: Option<Vec<String>>,
    pub text: String,
}

pub fn cmd_shapes(preset_key: &str) -> Result<ShapesOutput> {
    let preset: ArchPreset = preset_key.parse()?;
    let graph = arch::build(&preset)?;
    let table = infer_shapes(&graph, graph.input_dims())?;
    let counts = count_params(&graph)?;
    let diff = reference_rows(&preset).map(|r| diff_against_reference(&table, &r));
    let mut text = format!("{}  (input {}, {} parameters)\n", preset.key(), graph.input_dims(), counts.total);
    text.push_str(&table.to_text());
    match &diff {
        None => text.push_str("reference: none for this preset\n"),
        Some(d) if d.is_empty() => text.push_str("reference: all rows match\n"),
        Some(d) => {
            let _ = writeln!(text, "reference: {} mismatches", d.len());
            for line in d {
                let _ = writeln!(text, "  {line}");
            }
        }
    }
    Ok(ShapesOutput { table, diff, text })
}

// ------------------------------------------------------------------ eval

pub struct EvalOutput {
    pub center: Option<EvalReport>,
    pub multi: Option<EvalReport>,
    pub csv: String,
    pub text: String,
}

fn eval_with<T: Scalar>(
    cfg: &RunConfig,
    graph: &NetworkGraph,
    params: &ParamSet<T>,
    val: &Dataset,
    preprocess: &Preprocess,
) -> Result<EvalOutput> {
    let run = |mode| evaluate(graph, params, val, mode, &cfg.crop_plan, preprocess, cfg.eval_batch);
    let center = match cfg.eval_mode {
        EvalSelection::Center | EvalSelection::Both => Some(run(EvalMode::CenterCrop)?),
        EvalSelection::Multi => None,
    };
    let multi = match cfg.eval_mode {
        EvalSelection::Multi | EvalSelection::Both => Some(run(EvalMode::MultiCrop)?),
        EvalSelection::Center => None,
    };
    let mut csv = format!("network,{}\n", EvalReport::CSV_HEADER);
    for r in center.iter().chain(&multi) {
        let _ = writeln!(csv, "{},{}", cfg.preset_key, r.csv_row());
    }
    let text = accuracy_table(&[AccuracyRow {
        network: cfg.preset_key.clone(),
        center: center.clone(),
        multi: multi.clone(),
    }]);
    Ok(EvalOutput { center, multi, csv, text })
}

/// Evaluates `params` (already checked against the preset) on the
/// validation split.
pub fn eval_params<T: Scalar>(cfg: &RunConfig, graph: &NetworkGraph, params: &ParamSet<T>) -> Result<EvalOutput> {
    let (train, val) = cfg.load_data()?;
    let preprocess = preprocess_for(cfg, &train)?;
    eval_with(cfg, graph, params, &val, &preprocess)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutput> {
    let path = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out.join("checkpoint.mlck"));
    let ck = Checkpoint::load(&path)?;
    let graph = arch::build(&cfg.preset)?;
    ck.check(&cfg.preset_key, &graph)?;
    let out = match cfg.precision {
        Precision::Single => eval_params(cfg, &graph, &ck.params)?,
        Precision::Double => eval_params(cfg, &graph, &ck.params.convert::<f64>())?,
    };
    let dir = cfg.ensure_out_dir()?;
    write(dir, "eval.csv", &out.csv)?;
    write(dir, "eval.txt", &out.text)?;
    Ok(out)
}

// ----------------------------------------------------------------- train

pub struct TrainOutput {
    pub log: Vec<LogRow>,
    pub eval: Option<EvalOutput>,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let (train, val) = cfg.load_data()?;
    match cfg.precision {
        Precision::Single => train_and_report::<f32>(cfg, &train, &val),
        Precision::Double => train_and_report::<f64>(cfg, &train, &val),
    }
}

fn train_and_report<T: Scalar>(cfg: &RunConfig, train: &Dataset, val: &Dataset) -> Result<TrainOutput> {
    let t = train_network::<T>(cfg, train, val, true)?;
    Ok(TrainOutput { log: t.log, eval: None })
}

// ----------------------------------------------------------------- bench

pub struct BenchOutput {
    pub rows: Vec<(String, TimingReport)>,
    pub overheads: Vec<(String, String, Overhead)>,
    pub csv: String,
    pub text: String,
}

fn bench_net(key: &str, seed: u64) -> Result<(NetworkGraph, ParamSet<f32>)> {
    let preset: ArchPreset = key.parse()?;
    let graph = arch::build(&preset)?;
    let params = init_params(&graph, mlctx_core::nn::InitPolicy::Normalized, seed)?;
    Ok((graph, params))
}

/// Times every preset against the first baseline of the same family and
/// scale in the list, with interleaved repetitions.
pub fn cmd_bench(presets: &[String], batch: usize, reps: usize, seed: u64) -> Result<BenchOutput> {
    let parsed: Vec<ArchPreset> = presets
        .iter()
        .map(|k| k.parse::<ArchPreset>())
        .collect::<mlctx_core::Result<_>>()?;
    let mut rows: Vec<(String, TimingReport)> = Vec::new();
    let mut overheads = Vec::new();
    for (i, p) in parsed.iter().enumerate() {
        if !p.multilevel {
            continue;
        }
        let base = parsed
            .iter()
            .position(|b| !b.multilevel && b.family == p.family && b.scale == p.scale)
            .ok_or_else(|| anyhow!("no baseline for `{}` in the preset list", presets[i]))?;
        let (bg, bp) = bench_net(&presets[base], seed)?;
        let (cg, cp) = bench_net(&presets[i], seed)?;
        let o = benchmark_overhead((&bg, &bp), (&cg, &cp), batch, reps)?;
        if !rows.iter().any(|(n, _)| *n == presets[base]) {
            rows.push((presets[base].clone(), o.baseline.clone()));
        }
        rows.push((presets[i].clone(), o.candidate.clone()));
        overheads.push((presets[base].clone(), presets[i].clone(), o));
    }
    for (i, p) in parsed.iter().enumerate() {
        if !p.multilevel && !rows.iter().any(|(n, _)| *n == presets[i]) {
            let (g, ps) = bench_net(&presets[i], seed)?;
            rows.push((presets[i].clone(), mlctx_core::eval::benchmark(&g, &ps, batch, reps)?));
        }
    }
    let mut csv = format!("{}\n", TimingReport::CSV_HEADER);
    for (n, r) in &rows {
        let _ = writeln!(csv, "{}", r.csv_row(n));
    }
    let mut text = timing_table(&rows);
    for (b, c, o) in &overheads {
        let _ = writeln!(
            text,
            "overhead {c} vs {b}: forward {:+.2}%  backward {:+.2}%  total {:+.2}%",
            100.0 * (o.forward_ratio - 1.0),
            100.0 * (o.backward_ratio - 1.0),
            100.0 * (o.total_ratio - 1.0)
        );
    }
    Ok(BenchOutput { rows, overheads, csv, text })
}

// -------------------------------------------------------------- prestudy

/// Feature matrix rows as a training source for the pre-study head.
struct FeatureHooks<'a> {
    store: &'a FeatureStore,
}

impl<T: Scalar> FitHooks<T> for FeatureHooks<'_> {
    fn batch(&mut self, indices: &[usize], _iter: usize) -> Result<(Tensor<T>, Vec<usize>)> {
        Ok(feature_batch(self.store, indices))
    }
}

fn feature_batch<T: Scalar>(store: &FeatureStore, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
    let shape = Shape::new(indices.len(), store.dim, 1, 1).expect("non-empty batch");
    let mut data = Vec::with_capacity(shape.len());
    for &i in indices {
        data.extend(store.row(i).iter().map(|&v| T::from_f64(v as f64)));
    }
    let labels = indices.iter().map(|&i| store.labels[i] as usize).collect();
    (Tensor::from_vec(shape, data).expect("length matches"), labels)
}

/// Three fully-connected layers (two hidden of `width` with ReLU and
/// dropout, then one per class) over a flat feature vector.
pub fn head_graph(dim: usize, width: usize, classes: usize) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new(Dims::flat(dim));
    b.add("fc6", LayerKind::Fc { out: width }, &["data"])?;
    b.add("relu6", LayerKind::Relu, &["fc6"])?;
    b.add("drop6", LayerKind::Dropout { keep: 0.5 }, &["relu6"])?;
    b.add("fc7", LayerKind::Fc { out: width }, &["drop6"])?;
    b.add("relu7", LayerKind::Relu, &["fc7"])?;
    b.add("drop7", LayerKind::Dropout { keep: 0.5 }, &["relu7"])?;
    b.add("fc8", LayerKind::Fc { out: classes }, &["drop7"])?;
    b.add("prob", LayerKind::SoftmaxXent, &["fc8"])?;
    Ok(b.finish()?)
}

fn subset_store(store: &FeatureStore, classes: usize) -> FeatureStore {
    let keep: Vec<usize> = (0..store.len()).filter(|&i| (store.labels[i] as usize) < classes).collect();
    FeatureStore {
        dim: store.dim,
        features: keep.iter().flat_map(|&i| store.row(i).iter().copied()).collect(),
        labels: keep.iter().map(|&i| store.labels[i]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadResult {
    pub feature_dim: usize,
    pub top1: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrestudyRow {
    pub classes: usize,
    pub conv5: HeadResult,
    pub concat: HeadResult,
    pub concat_raw: HeadResult,
}

pub struct PrestudyOutput {
    pub conv4_dim: usize,
    pub conv5_dim: usize,
    pub rows: Vec<PrestudyRow>,
    pub csv: String,
    pub text: String,
}

fn train_head(
    cfg: &RunConfig,
    train: &FeatureStore,
    val: &FeatureStore,
    classes: usize,
    seed: u64,
) -> Result<HeadResult> {
    let graph = head_graph(train.dim, cfg.head_width, classes)?;
    let mut params = init_params::<f32>(&graph, cfg.init, seed)?;
    let tc = TrainConfig {
        base_lr: cfg.head_lr,
        epochs: cfg.prestudy_epochs,
        schedule: mlctx_core::optim::Schedule::Poly { power: 0.5 },
        ..cfg.train.clone()
    };
    let log = fit(&graph, &mut params, &tc, train.len(), 0.0, seed, &mut FeatureHooks { store: train })?;
    // mean loss over the last epoch
    let ipe = tc.iters_per_epoch(train.len());
    let tail: Vec<f64> = log.iter().rev().filter_map(|r| r.loss).take(ipe).collect();
    let final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    let mut hits = 0;
    let idx: Vec<usize> = (0..val.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, labels) = feature_batch::<f32>(val, chunk);
        let acts = forward(&graph, &params, &x, Mode::Infer, None)?;
        let probs = acts.probs(&graph)?;
        for (n, &l) in labels.iter().enumerate() {
            let row = probs.sample(n);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hits += (best == l) as usize;
        }
    }
    Ok(HeadResult {
        feature_dim: train.dim,
        top1: hits as f64 / val.len().max(1) as f64,
        final_loss,
    })
}

/// Trains the baseline stacked-conv trunk, freezes it, and compares
/// three-layer heads trained on top-stage features against heads trained
/// on the normalized second-highest stage concatenated with the top one.
pub fn cmd_prestudy(cfg: &RunConfig, write_outputs: bool) -> Result<PrestudyOutput> {
    if cfg.preset.family != Family::AlexNet || cfg.preset.multilevel {
        bail!("prestudy runs on a baseline alexnet preset, got `{}`", cfg.preset_key);
    }
    let (train, val) = cfg.load_data()?;
    let trained = train_network::<f32>(cfg, &train, &val, false)?;
    let conv4 = cfg.preset.stage_output("conv4")?;
    let conv5 = cfg.preset.stage_output("conv5")?;
    let extract = |ds: &Dataset, ids: &[&str], l2: &[&str]| {
        extract_features(&trained.graph, &trained.params, ds, &trained.preprocess, ids, l2, cfg.eval_batch)
    };
    let f5 = (extract(&train, &[&conv5], &[])?, extract(&val, &[&conv5], &[])?);
    let f45 = (
        extract(&train, &[&conv4, &conv5], &[&conv4])?,
        extract(&val, &[&conv4, &conv5], &[&conv4])?,
    );
    let raw = (
        extract(&train, &[&conv4, &conv5], &[])?,
        extract(&val, &[&conv4, &conv5], &[])?,
    );
    if write_outputs {
        let dir = cfg.ensure_out_dir()?;
        write_feature_store(&f5.0, dir.join("features_conv5_train.mlfs"))?;
        write_feature_store(&f45.0, dir.join("features_conv4l2_conv5_train.mlfs"))?;
    }
    let conv5_dim = f5.0.dim;
    let conv4_dim = f45.0.dim - conv5_dim;
    let mut rows = Vec::new();
    for &k in &cfg.prestudy_classes {
        if k < 2 || k > train.num_classes() {
            bail!("prestudy class subset {k} outside 2..={}", train.num_classes());
        }
        let seed = derive_seed(cfg.seed, 5 << 40 | k as u64);
        let run = |pair: &(FeatureStore, FeatureStore)| {
            train_head(cfg, &subset_store(&pair.0, k), &subset_store(&pair.1, k), k, seed)
        };
        rows.push(PrestudyRow {
            classes: k,
            conv5: run(&f5)?,
            concat: run(&f45)?,
            concat_raw: run(&raw)?,
        });
    }
    let mut csv = String::from("classes,conv5_dim,conv5_top1,concat_dim,concat_top1,raw_concat_top1,raw_concat_final_loss\n");
    let mut text = format!(
        "{:>7} | {:>12} | {:>18} | {:>24}\n",
        "classes", "conv5", "conv4 (L2) + conv5", "conv4 (raw) + conv5 loss"
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.classes, r.conv5.feature_dim, r.conv5.top1, r.concat.feature_dim, r.concat.top1, r.concat_raw.top1,
            r.concat_raw.final_loss
        );
        let _ = writeln!(
            text,
            "{:>7} | {:>11.2}% | {:>17.2}% | {:>24.4}",
            r.classes,
            100.0 * r.conv5.top1,
            100.0 * r.concat.top1,
            r.concat_raw.final_loss
        );
    }
    let _ = writeln!(text, "head input: conv5 {conv5_dim}, conv4 + conv5 {}", conv4_dim + conv5_dim);
    if write_outputs {
        let dir = cfg.ensure_out_dir()?;
        write(dir, "prestudy.csv", &csv)?;
        write(dir, "prestudy.txt", &text)?;
    }
    Ok(PrestudyOutput { conv4_dim, conv5_dim, rows, csv, text })
}

pub(crate) fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}
