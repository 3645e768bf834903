//! Run configuration: a flat `key = value` file whose keys can each be
//! overridden by the command-line flag of the same name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

use mlctx_core::data::synthetic::{self, SyntheticSpec};
use mlctx_core::data::{load_cifar10_dir, CropPlan, Dataset};
use mlctx_core::nn::InitPolicy;
use mlctx_core::optim::{Schedule, TrainConfig};
use mlctx_core::{ArchPreset, Family, Precision, Scale};

/// Every recognised key. Flags use the same names with `-` for `_`.
pub const KEYS: &[&str] = &[
    "preset",
    "data",
    "train_size",
    "val_size",
    "classes",
    "noise",
    "seed",
    "epochs",
    "batch",
    "lr",
    "momentum",
    "weight_decay",
    "decay_biases",
    "schedule",
    "aux_weight",
    "init",
    "crop_plan",
    "base_size",
    "crop_size",
    "input_scale",
    "precision",
    "out",
    "checkpoint",
    "checkpoint_every",
    "val_every",
    "eval_mode",
    "eval_batch",
    "prestudy_classes",
    "prestudy_epochs",
    "head_lr",
    "head_width",
    "presets",
    "reps",
];

macro_rules! config_args {
    ($($field:ident),* $(,)?) => {
        /// Flags shared by every command; each mirrors a config-file key.
        #[derive(Debug, Clone, Default, Args)]
        pub struct ConfigArgs {
            /// Config file with `key = value` lines
            #[arg(long)]
            pub config: Option<PathBuf>,
            /// Extra `key=value` override (repeatable)
            #[arg(long = "set", value_name = "KEY=VALUE")]
            pub set: Vec<String>,
            $(
                #[arg(long)]
                pub $field: Option<String>,
            )*
        }

        impl ConfigArgs {
            fn flag_pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.clone()));
                    }
                )*
                out
            }
        }
    };
}

config_args!(
    preset, data, train_size, val_size, classes, noise, seed, epochs, batch, lr, momentum,
    weight_decay, decay_biases, schedule, aux_weight, init, crop_plan, base_size, crop_size,
    input_scale, precision, out, checkpoint, checkpoint_every, val_every, eval_mode, eval_batch,
    prestudy_classes, prestudy_epochs, head_lr, head_width, presets, reps,
);

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("line {}: unknown key `{key}`", n + 1);
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

impl ConfigArgs {
    /// File values first, then named flags, then `--set` pairs.
    pub fn merged(&self) -> Result<BTreeMap<String, String>> {
        let mut map = match &self.config {
            Some(p) => parse_config_text(
                &fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            )?,
            None => BTreeMap::new(),
        };
        for (k, v) in self.flag_pairs() {
            map.insert(k.to_string(), v);
        }
        for kv in &self.set {
            let text = kv.replacen('=', " = ", 1);
            map.extend(parse_config_text(&text)?);
        }
        Ok(map)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::from_map(&self.merged()?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Procedurally generated classes (see `data::synthetic`).
    Synthetic,
    /// Directory holding CIFAR-10 binary batches.
    Cifar(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSelection {
    Center,
    Multi,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset_key: String,
    pub preset: ArchPreset,
    pub data: DataSource,
    pub train_size: Option<usize>,
    pub val_size: usize,
    pub classes: Option<usize>,
    pub noise: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub aux_weight: f64,
    pub init: InitPolicy,
    pub crop_plan: CropPlan,
    pub base_size: usize,
    pub crop_size: usize,
    pub input_scale: f64,
    pub precision: Precision,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub val_every: usize,
    pub eval_mode: EvalSelection,
    pub eval_batch: usize,
    pub prestudy_classes: Vec<usize>,
    pub prestudy_epochs: usize,
    pub head_lr: f64,
    pub head_width: usize,
    pub presets: Vec<String>,
    pub reps: usize,
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| anyhow!("{key} = {v}: {e}")))
        .transpose()
}

fn list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("{key}: `{s}`: {e}")))
        .collect()
}

/// `step:DIVISOR:M1,M2,...` or `poly:POWER`.
pub fn parse_schedule(text: &str) -> Result<Schedule> {
    let parts: Vec<&str> = text.split(':').collect();
    let s = match parts.as_slice() {
        ["poly", p] => Schedule::Poly { power: p.parse()? },
        ["step", d, ms] => Schedule::Step {
            divisor: d.parse()?,
            milestones: list(ms, "schedule")?,
        },
        _ => bail!("schedule `{text}`: expected step:DIVISOR:M1,M2 or poly:POWER"),
    };
    s.validate()?;
    Ok(s)
}

pub fn schedule_text(s: &Schedule) -> String {
    match s {
        Schedule::Poly { power } => format!("poly:{power}"),
        Schedule::Step { divisor, milestones } => format!(
            "step:{divisor}:{}",
            milestones.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
        ),
    }
}

/// `gaussian:MEAN:STD:BIAS` or `normalized`.
pub fn parse_init(text: &str) -> Result<InitPolicy> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["normalized"] => Ok(InitPolicy::Normalized),
        ["gaussian", m, s, b] => {
            let std: f64 = s.parse()?;
            if !(std > 0.0) {
                bail!("gaussian init needs std > 0");
            }
            Ok(InitPolicy::gaussian(m.parse()?, std, b.parse()?))
        }
        _ => bail!("init `{text}`: expected gaussian:MEAN:STD:BIAS or normalized"),
    }
}

/// `mini`, `full`, `center`, or `SCALES/CROP[/nomirror]` (e.g. `36,40/32`).
pub fn parse_crop_plan(text: &str, base: usize, crop: usize) -> Result<CropPlan> {
    let plan = match text {
        "mini" => CropPlan::mini_default(),
        "full" => CropPlan::full_default(),
        "center" => CropPlan::center_only(base, crop),
        other => {
            let parts: Vec<&str> = other.split('/').collect();
            let (scales, c, mirror) = match parts.as_slice() {
                [s, c] => (*s, *c, true),
                [s, c, "nomirror"] => (*s, *c, false),
                _ => bail!("crop_plan `{other}`: expected mini, full, center or SCALES/CROP[/nomirror]"),
            };
            CropPlan {
                mirror,
                ..CropPlan::protocol(list(scales, "crop_plan")?, c.parse()?)
            }
        }
    };
    plan.validate()?;
    Ok(plan)
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        for k in map.keys() {
            if !KEYS.contains(&k.as_str()) {
                bail!("unknown key `{k}`");
            }
        }
        let preset_key = map.get("preset").cloned().unwrap_or_else(|| "alexnet-mini".into());
        let mut preset: ArchPreset = preset_key.parse()?;
        let seed: u64 = num(map, "seed")?.ok_or_else(|| anyhow!("`seed` is required"))?;
        let classes: Option<usize> = num(map, "classes")?;
        if let Some(k) = classes {
            preset = preset.with_classes(k);
        } else if preset.scale == Scale::Mini {
            preset = preset.with_classes(10);
        }
        preset.validate()?;

        let alex = preset.family == Family::AlexNet;
        let mini = preset.scale == Scale::Mini;
        let epochs: usize = num(map, "epochs")?.unwrap_or(if alex { 90 } else { 133 });
        let schedule = match map.get("schedule") {
            Some(s) => parse_schedule(s)?,
            None if alex => Schedule::Step {
                divisor: 10.0,
                milestones: scaled_milestones(epochs),
            },
            None => Schedule::Poly { power: 0.5 },
        };
        let train = TrainConfig {
            base_lr: num(map, "lr")?.unwrap_or(0.01),
            momentum: num(map, "momentum")?.unwrap_or(0.9),
            weight_decay: num(map, "weight_decay")?.unwrap_or(if alex { 0.0005 } else { 0.0002 }),
            decay_biases: num(map, "decay_biases")?.unwrap_or(true),
            batch_size: num(map, "batch")?.unwrap_or(match (alex, mini) {
                (true, true) => 64,
                (true, false) => 256,
                (false, _) => 32,
            }),
            epochs,
            schedule,
        };
        train.validate()?;

        let init = match map.get("init") {
            Some(s) => parse_init(s)?,
            None if alex => InitPolicy::gaussian(0.0, 0.01, 0.1),
            None => InitPolicy::Normalized,
        };
        let input = preset.input_dims();
        let crop_size = num(map, "crop_size")?.unwrap_or(input.h);
        let base_size = num(map, "base_size")?.unwrap_or(if mini { crop_size + 4 } else { 256 });
        if crop_size != input.h || crop_size != input.w {
            bail!("crop_size {crop_size} does not match network input {}x{}", input.h, input.w);
        }
        if crop_size > base_size {
            bail!("crop_size {crop_size} exceeds base_size {base_size}");
        }
        let crop_plan = parse_crop_plan(
            map.get("crop_plan").map_or(if mini { "mini" } else { "full" }, String::as_str),
            base_size,
            crop_size,
        )?;
        if crop_plan.crop_size != crop_size {
            bail!("crop plan crop size {} does not match network input {crop_size}", crop_plan.crop_size);
        }

        let data = match map.get("data").map(String::as_str) {
            None | Some("synthetic") => DataSource::Synthetic,
            Some(p) => {
                let path = PathBuf::from(p);
                if !path.is_dir() {
                    bail!("data directory {} does not exist", path.display());
                }
                DataSource::Cifar(path)
            }
        };
        let checkpoint = map.get("checkpoint").map(PathBuf::from);

        let eval_mode = match map.get("eval_mode").map_or("both", String::as_str) {
            "center" => EvalSelection::Center,
            "multi" => EvalSelection::Multi,
            "both" => EvalSelection::Both,
            other => bail!("eval_mode `{other}`: expected center, multi or both"),
        };
        let aux_weight: f64 = num(map, "aux_weight")?.unwrap_or(if alex { 0.0 } else { 0.3 });
        if !(aux_weight >= 0.0) {
            bail!("aux_weight must be >= 0");
        }
        let presets = match map.get("presets") {
            Some(s) => list(s, "presets")?,
            None => vec![preset_key_base(&preset), format!("{}++", preset_key_base(&preset))],
        };
        Ok(RunConfig {
            preset_key,
            preset,
            data,
            train_size: num(map, "train_size")?,
            val_size: num(map, "val_size")?.unwrap_or(1000),
            classes,
            noise: num(map, "noise")?.unwrap_or(SyntheticSpec::default().noise),
            seed,
            train,
            aux_weight,
            init,
            crop_plan,
            base_size,
            crop_size,
            input_scale: num(map, "input_scale")?.unwrap_or(1.0),
            precision: map.get("precision").map_or(Ok(Precision::Single), |p| p.parse())?,
            out: PathBuf::from(map.get("out").map_or("runs/latest", String::as_str)),
            checkpoint,
            checkpoint_every: num(map, "checkpoint_every")?.unwrap_or(1),
            val_every: num(map, "val_every")?.unwrap_or(1),
            eval_mode,
            eval_batch: num(map, "eval_batch")?.unwrap_or(144),
            prestudy_classes: match map.get("prestudy_classes") {
                Some(s) => list(s, "prestudy_classes")?,
                None => vec![2, 5, 10],
            },
            prestudy_epochs: num(map, "prestudy_epochs")?.unwrap_or(20),
            head_lr: num(map, "head_lr")?.unwrap_or(0.01),
            head_width: num(map, "head_width")?.unwrap_or(256),
            presets,
            reps: num(map, "reps")?.unwrap_or(20),
        })
    }

    /// Training and validation splits for this run.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, mut val) = match &self.data {
            DataSource::Synthetic => {
                let spec = SyntheticSpec {
                    classes: self.preset.num_classes.min(10),
                    noise: self.noise,
                };
                let n = self.train_size.unwrap_or(5000);
                (
                    synthetic::generate(n, spec, self.seed)?,
                    synthetic::generate(self.val_size, spec, self.seed ^ 0x5eed_0f_7e57)?,
                )
            }
            DataSource::Cifar(dir) => {
                let (train, test) = load_cifar10_dir(dir)?;
                let train = match self.train_size {
                    Some(n) => train.take(n),
                    None => train,
                };
                (train, test.take(self.val_size))
            }
        };
        if let Some(k) = self.classes {
            if k < train.num_classes() {
                train = train.first_classes(k)?;
                val = val.first_classes(k)?;
            }
        }
        let (c, h, w) = train.image_dims();
        let d = self.preset.input_dims();
        if c != d.c {
            bail!("dataset has {c}-channel {h}x{w} images, preset expects {} channels", d.c);
        }
        if train.num_classes() != self.preset.num_classes {
            bail!(
                "dataset has {} classes, preset `{}` predicts {}",
                train.num_classes(),
                self.preset_key,
                self.preset.num_classes
            );
        }
        let mean = train.compute_mean_pixel();
        train.set_mean_pixel(mean.clone())?;
        val.set_mean_pixel(mean)?;
        Ok((train, val))
    }

    pub fn ensure_out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

/// Milestones 30 and 60 of a 90-epoch run, scaled to `epochs`.
pub fn scaled_milestones(epochs: usize) -> Vec<usize> {
    if epochs == 90 {
        return vec![30, 60];
    }
    let a = (epochs as f64 / 3.0).round().max(1.0) as usize;
    let b = (2.0 * epochs as f64 / 3.0).round().max(a as f64 + 1.0) as usize;
    vec![a, b]
}

fn preset_key_base(p: &ArchPreset) -> String {
    ArchPreset::new(p.family, p.scale, false).key()
}
