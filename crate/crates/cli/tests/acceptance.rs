//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs sequentially (timing checks must not share the CPU with other
//! tests). Select criteria by number: `cargo test --test acceptance -- 3 4`.
//! Training on CIFAR-10 needs the binary batches in `$MLC_CIFAR_DIR`
//! (default `data/cifar-10-batches-bin` under the workspace root).

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mlctx_cli::commands::{cmd_bench, cmd_eval, cmd_prestudy, cmd_shapes, cmd_train, eval_params};
use mlctx_cli::train::train_network;
use mlctx_cli::{Checkpoint, RunConfig};
use mlctx_core::arch::{build, ArchPreset};
use mlctx_core::data::{tta_crops, CropPlan};
use mlctx_core::eval::{accuracy_table, benchmark_overhead, AccuracyRow};
use mlctx_core::nn::{grad_check_with, init_params, Dims, GradCheckOptions, GraphBuilder, InitPolicy, LayerKind, LrnSpec};
use mlctx_core::optim::{lr_at, Schedule, TrainConfig};
use mlctx_core::tensor::{mirror_h, ConvSpec, PoolSpec};
use mlctx_core::{Family, NetworkGraph, Scale, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| format!("{e:#}"))
}

fn config(pairs: &[(&str, &str)], out: &Path) -> Result<RunConfig, String> {
    let mut map: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    map.insert("out".into(), out.display().to_string());
    ok(RunConfig::from_map(&map))
}

/// Recipe used for every training-based check: normalized init on
/// mean-subtracted pixels scaled by 1/16, momentum SGD at lr 0.03.
const RECIPE: &[(&str, &str)] = &[
    ("init", "normalized"),
    ("input_scale", "0.0625"),
    ("lr", "0.03"),
    ("batch", "32"),
];

fn with_recipe<'a>(extra: &[(&'a str, &'a str)]) -> Vec<(&'a str, &'a str)> {
    let mut v: Vec<(&str, &str)> = RECIPE.to_vec();
    v.extend_from_slice(extra);
    v
}

fn random(shape: Shape, seed: u64, amp: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-amp..amp)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

fn shape_tables() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for key in ["alexnet-full", "alexnet-full++", "inception-full", "inception-full++"] {
        let out = ok(cmd_shapes(key))?;
        let diff = out.diff.ok_or_else(|| format!("{key}: no reference table"))?;
        ensure!(diff.is_empty(), "{key}: {}", diff.join("; "));
        notes.push(format!("{key} {} rows", out.table.rows.len()));
    }
    let fc6 = ok(cmd_shapes("alexnet-full++"))?.table.get("fc6").map(|r| r.input);
    ensure!(fc6 == Some(Dims::new(640, 6, 6)), "alexnet-full++ fc6 input {fc6:?}");
    let pool5 = ok(cmd_shapes("inception-full++"))?.table.get("pool5").map(|r| r.input);
    ensure!(pool5 == Some(Dims::new(1856, 7, 7)), "inception-full++ pool5 input {pool5:?}");
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(1), "took {t:?}");
    Ok(format!("{}; {t:.2?}", notes.join(", ")))
}

// ---------------------------------------------------------------- 2

fn sandwich(kind: LayerKind) -> NetworkGraph {
    let mut b = GraphBuilder::new(Dims::new(3, 6, 6));
    b.add("conv", LayerKind::Conv(ConvSpec::new(6, 3, 1, 1)), &["data"]).unwrap();
    b.add("mid", kind, &["conv"]).unwrap();
    b.add("fc", LayerKind::Fc { out: 4 }, &["mid"]).unwrap();
    b.add("prob", LayerKind::SoftmaxXent, &["fc"]).unwrap();
    b.finish().unwrap()
}

fn concat_graph() -> NetworkGraph {
    let mut b = GraphBuilder::new(Dims::new(2, 5, 5));
    b.add("a", LayerKind::Conv(ConvSpec::new(3, 1, 1, 0)), &["data"]).unwrap();
    b.add("b", LayerKind::Conv(ConvSpec::new(4, 3, 1, 1)), &["data"]).unwrap();
    b.add("cat", LayerKind::Concat, &["a", "b"]).unwrap();
    b.add("fc", LayerKind::Fc { out: 3 }, &["cat"]).unwrap();
    b.add("prob", LayerKind::SoftmaxXent, &["fc"]).unwrap();
    b.finish().unwrap()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut graphs: Vec<(String, NetworkGraph, usize)> = [
        LayerKind::Relu,
        LayerKind::Tanh,
        LayerKind::Lrn(LrnSpec::default()),
        LayerKind::MaxPool(PoolSpec::new(2, 2)),
        LayerKind::AvgPoolGlobal,
        LayerKind::L2Norm,
        LayerKind::Dropout { keep: 0.5 },
        LayerKind::Conv(ConvSpec::new(5, 3, 2, 1)),
        LayerKind::Fc { out: 7 },
    ]
    .into_iter()
    .map(|k| (k.name().to_string(), sandwich(k), 3))
    .collect();
    graphs.push(("concat".into(), concat_graph(), 3));
    for family in [Family::AlexNet, Family::Inception] {
        let p = ArchPreset::new(family, Scale::Mini, true)
            .with_input(3, 16, 16)
            .with_aux_heads(family == Family::Inception);
        graphs.push((p.key(), ok(build(&p))?, 2));
    }
    let mut worst = (0.0f64, String::new());
    let (mut checked, mut skipped) = (0, 0);
    for (i, (name, g, n)) in graphs.iter().enumerate() {
        let params = ok(init_params::<f64>(g, InitPolicy::Normalized, 5 + i as u64))?;
        let d = g.input_dims();
        let x = random(Shape::new(*n, d.c, d.h, d.w).unwrap(), 8 + i as u64, 1.0);
        let classes = ok(g.num_classes())?;
        let labels: Vec<usize> = (0..*n).map(|j| (j * 7 + 3) % classes).collect();
        let opts = GradCheckOptions { max_checks: 2_000, ..Default::default() };
        let r = ok(grad_check_with(g, &params, &x, &labels, &opts))?;
        checked += r.checked;
        skipped += r.skipped_kinks;
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, format!("{name} {}", r.worst));
        }
    }
    let t = start.elapsed();
    ensure!(worst.0 < 1e-5, "max relative error {:.3e} at {}", worst.0, worst.1);
    ensure!(t < Duration::from_secs(120), "took {t:?}");
    Ok(format!(
        "max rel error {:.2e} ({}), {checked} probes, {skipped} kink crossings skipped; {t:.1?}",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------- 3

fn tta() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = Shape::new(1, 3, 375, 500).unwrap();
    let img = Tensor::<f32>::from_vec(s, (0..s.len()).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap();
    let crops = ok(tta_crops(&img, &CropPlan::full_default()))?;
    ensure!(crops.len() == 144, "{} full-scale crops", crops.len());
    for (i, c) in crops.iter().enumerate() {
        ensure!(c.shape() == Shape::new(1, 3, 224, 224).unwrap(), "crop {i} is {:?}", c.shape());
    }
    for i in 0..72 {
        ensure!(crops[i + 72].data() == mirror_h(&crops[i]).data(), "crop {} is not the mirror of {i}", i + 72);
    }
    let s = Shape::new(1, 3, 32, 32).unwrap();
    let small = Tensor::<f32>::from_vec(s, (0..s.len()).map(|_| rng.random_range(0.0..255.0)).collect()).unwrap();
    let mini = ok(tta_crops(&small, &CropPlan::mini_default()))?;
    ensure!(mini.len() == 144, "{} mini crops", mini.len());
    ensure!(mini.iter().all(|c| c.shape() == s), "mini crop extent");
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(5), "took {t:?}");
    Ok(format!("144 + 144 crops, mirror pairs hold; {t:.2?}"))
}

// ---------------------------------------------------------------- 4

fn schedules() -> Outcome {
    let poly = Schedule::Poly { power: 0.5 };
    let cfg = TrainConfig {
        base_lr: 0.01,
        momentum: 0.9,
        weight_decay: 0.0,
        decay_biases: true,
        batch_size: 1,
        epochs: 1,
        schedule: poly.clone(),
    };
    let max = 1000;
    let got: Vec<f64> = [0, 750, max]
        .into_iter()
        .map(|i| lr_at(&poly, &cfg, i, max, 0))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for (g, want) in got.iter().zip([0.01, 0.005, 0.0]) {
        ensure!((g - want).abs() < 1e-12, "poly gives {got:?}");
    }
    let step = Schedule::Step { divisor: 10.0, milestones: vec![30, 60] };
    let at45 = ok(lr_at(&step, &cfg, 0, max, 45))?;
    ensure!((at45 - 0.001).abs() < 1e-12, "step gives {at45} at epoch 45");
    Ok(format!("poly {got:?}, step@45 {at45}"))
}

// ---------------------------------------------------------------- 5

fn cifar_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MLC_CIFAR_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cifar-10-batches-bin"));
    (dir.join("data_batch_1.bin").is_file() && dir.join("test_batch.bin").is_file()).then_some(dir)
}

fn cifar_training() -> Outcome {
    let Some(dir) = cifar_dir() else {
        return Err("BLOCKED: CIFAR-10 binary batches not found (set MLC_CIFAR_DIR)".into());
    };
    let start = Instant::now();
    let tmp = ok(tempfile::tempdir())?;
    let data = dir.display().to_string();
    let mut rows = Vec::new();
    for key in ["alexnet-mini", "alexnet-mini++"] {
        let pairs = with_recipe(&[
            ("preset", key),
            ("data", &data),
            ("train_size", "5000"),
            ("val_size", "1000"),
            ("epochs", "15"),
            ("seed", "1"),
            ("eval_mode", "both"),
        ]);
        let cfg = config(&pairs, &tmp.path().join(key))?;
        let (train, val) = ok(cfg.load_data())?;
        let trained = ok(train_network::<f32>(&cfg, &train, &val, true))?;
        let out = ok(eval_params(&cfg, &trained.graph, &trained.params))?;
        rows.push(AccuracyRow { network: key.into(), center: out.center, multi: out.multi });
    }
    println!("{}", accuracy_table(&rows));
    let top1 = |r: &AccuracyRow, multi: bool| {
        if multi { r.multi.as_ref() } else { r.center.as_ref() }.map_or(f64::NAN, |e| e.top1)
    };
    let (base, plus) = (top1(&rows[0], false), top1(&rows[1], false));
    for r in &rows {
        println!(
            "{}: center -> 144-crop top-1 delta {:+.2}%",
            r.network,
            100.0 * (top1(r, true) - top1(r, false))
        );
    }
    println!("multilevel - baseline center top-1 {:+.2}%", 100.0 * (plus - base));
    let t = start.elapsed();
    ensure!(base >= 0.55, "baseline top-1 {:.2}% < 55%", 100.0 * base);
    ensure!(plus >= base - 0.005, "multilevel {:.2}% < baseline {:.2}% - 0.5%", 100.0 * plus, 100.0 * base);
    ensure!(t <= Duration::from_secs(45 * 60), "took {t:?}");
    Ok(format!("baseline {:.2}%, multilevel {:.2}%; {t:.0?}", 100.0 * base, 100.0 * plus))
}

// ---------------------------------------------------------------- 6

fn prestudy() -> Outcome {
    let start = Instant::now();
    let tmp = ok(tempfile::tempdir())?;
    let pairs = with_recipe(&[
        ("preset", "alexnet-mini"),
        ("train_size", "2000"),
        ("val_size", "500"),
        ("epochs", "8"),
        ("seed", "6"),
        ("prestudy_classes", "10"),
        ("prestudy_epochs", "10"),
    ]);
    let cfg = config(&pairs, tmp.path())?;
    let out = ok(cmd_prestudy(&cfg, true))?;
    println!("{}", out.text.trim_end());
    ensure!(out.rows.len() == 1 && out.rows[0].classes == 10, "expected one 10-class row");
    let r = &out.rows[0];
    ensure!(r.conv5.feature_dim == out.conv5_dim, "conv5 head input {}", r.conv5.feature_dim);
    ensure!(
        r.concat.feature_dim == out.conv4_dim + out.conv5_dim,
        "concat head input {} != {} + {}",
        r.concat.feature_dim,
        out.conv4_dim,
        out.conv5_dim
    );
    ensure!(r.concat_raw.final_loss.is_finite(), "raw concat loss not reported");
    let t = start.elapsed();
    ensure!(t <= Duration::from_secs(20 * 60), "took {t:?}");
    Ok(format!(
        "conv5 {:.1}% (dim {}), conv4+conv5 {:.1}% (dim {}), raw conv4 final loss {:.3}; {t:.0?}",
        100.0 * r.conv5.top1,
        r.conv5.feature_dim,
        100.0 * r.concat.top1,
        r.concat.feature_dim,
        r.concat_raw.final_loss
    ))
}

// ---------------------------------------------------------------- 7

fn overhead() -> Outcome {
    let presets: Vec<String> =
        ["alexnet-mini", "alexnet-mini++", "inception-mini", "inception-mini++"].map(String::from).to_vec();
    let reps = 20;
    let out = ok(cmd_bench(&presets, 32, reps, 7))?;
    println!("{}", out.text.trim_end());
    let mut notes = Vec::new();
    for (base, cand, o) in &out.overheads {
        let limit = if cand.starts_with("alexnet") { 0.15 } else { 0.05 };
        ensure!(o.baseline.repetitions >= 20 && o.candidate.repetitions >= 20, "too few repetitions");
        let over = o.forward_ratio - 1.0;
        ensure!(over < limit, "{cand} vs {base}: forward overhead {:+.2}% >= {:.0}%", 100.0 * over, 100.0 * limit);
        notes.push(format!("{cand} {:+.2}%", 100.0 * over));
    }
    ensure!(out.overheads.len() == 2, "expected two comparisons");
    Ok(format!("forward overhead {}", notes.join(", ")))
}

// ---------------------------------------------------------------- 8

fn read(path: PathBuf) -> Result<Vec<u8>, String> {
    std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn determinism() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let run = |name: &str| -> Result<(PathBuf, RunConfig), String> {
        let dir = tmp.path().join(name);
        let pairs = with_recipe(&[
            ("preset", "alexnet-mini++"),
            ("train_size", "256"),
            ("val_size", "64"),
            ("epochs", "2"),
            ("seed", "8"),
            ("eval_mode", "both"),
            ("crop_plan", "36/32"),
            ("prestudy_classes", "5"),
            ("prestudy_epochs", "2"),
        ]);
        let cfg = config(&pairs, &dir)?;
        ok(cmd_train(&cfg))?;
        ok(cmd_eval(&cfg))?;
        Ok((dir, cfg))
    };
    let (a, cfg) = run("a")?;
    let (b, _) = run("b")?;
    for file in ["train_log.csv", "eval.csv", "checkpoint.mlck"] {
        ensure!(read(a.join(file))? == read(b.join(file))?, "{file} differs between identical runs");
    }

    let prestudy_csv = |name: &str| -> Result<String, String> {
        let pairs = with_recipe(&[
            ("preset", "alexnet-mini"),
            ("train_size", "128"),
            ("val_size", "64"),
            ("epochs", "1"),
            ("seed", "8"),
            ("prestudy_classes", "5"),
            ("prestudy_epochs", "2"),
        ]);
        let cfg = config(&pairs, &tmp.path().join(name))?;
        Ok(ok(cmd_prestudy(&cfg, true))?.csv)
    };
    ensure!(prestudy_csv("p1")? == prestudy_csv("p2")?, "prestudy.csv differs");
    ensure!(ok(cmd_shapes("inception-full++"))?.table.to_csv() == ok(cmd_shapes("inception-full++"))?.table.to_csv(), "shapes differ");

    // Fresh training in memory, then through the checkpoint file.
    let (train, val) = ok(cfg.load_data())?;
    let mut fresh = cfg.clone();
    fresh.out = tmp.path().join("fresh");
    let trained = ok(train_network::<f32>(&fresh, &train, &val, true))?;
    let path = fresh.out.join("checkpoint.mlck");
    let loaded = ok(Checkpoint::load(&path))?;
    ensure!(loaded.params.len() == trained.params.len(), "entry count changed");
    for (name, p) in trained.params.iter() {
        let q = loaded.params.get(name).ok_or_else(|| format!("{name} missing after load"))?;
        let same = p.value.data().iter().zip(q.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure!(same && p.value.shape() == q.value.shape(), "{name} not bit-identical after load");
    }
    ensure!(loaded.to_bytes() == read(path)?, "re-serialized checkpoint differs");
    let before = ok(eval_params(&fresh, &trained.graph, &trained.params))?;
    let after = ok(cmd_eval(&fresh))?;
    ensure!(before.center == after.center && before.multi == after.multi, "eval changed across save/load");
    ensure!(before.csv == after.csv, "eval csv changed across save/load");
    Ok("train/eval/prestudy/shapes outputs byte-identical; checkpoint bit-exact".into())
}

// ---------------------------------------------------------------- 9

fn ablation() -> Outcome {
    let tmp = ok(tempfile::tempdir())?;
    let pairs = with_recipe(&[
        ("preset", "alexnet-mini-allconv"),
        ("train_size", "256"),
        ("val_size", "64"),
        ("epochs", "1"),
        ("seed", "9"),
    ]);
    let cfg = config(&pairs, tmp.path())?;
    let log = ok(cmd_train(&cfg))?.log;
    let losses: Vec<f64> = log.iter().filter_map(|r| r.loss).collect();
    ensure!(!losses.is_empty() && losses.iter().all(|l| l.is_finite()), "no finite training loss");

    let net = |key: &str| -> Result<_, String> {
        let g = ok(build(&ok(key.parse::<ArchPreset>())?))?;
        let p = ok(init_params::<f32>(&g, InitPolicy::Normalized, 9))?;
        Ok((g, p))
    };
    let (two, all) = (net("alexnet-mini++")?, net("alexnet-mini-allconv")?);
    let o = ok(benchmark_overhead((&two.0, &two.1), (&all.0, &all.1), 32, 20))?;
    ensure!(
        o.candidate.total_ms > o.baseline.total_ms,
        "all-stage iteration {:.2} ms <= two-stage {:.2} ms",
        o.candidate.total_ms,
        o.baseline.total_ms
    );
    Ok(format!(
        "{} iterations trained; per-iteration {:.2} ms vs {:.2} ms ({:+.1}%)",
        losses.len(),
        o.candidate.total_ms,
        o.baseline.total_ms,
        100.0 * (o.total_ratio - 1.0)
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "shape tables", shape_tables),
        (2, "gradient check", gradients),
        (3, "test-time crops", tta),
        (4, "learning-rate schedules", schedules),
        (5, "cifar-10 training", cifar_training),
        (6, "frozen-trunk feature heads", prestudy),
        (7, "multilevel timing overhead", overhead),
        (8, "determinism and checkpoints", determinism),
        (9, "all-stage ablation", ablation),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n} [{name}]: PASS ({msg}) [{secs:.1}s]"),
            Err(msg) => {
                println!("criterion {n} [{name}]: FAIL ({msg}) [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
