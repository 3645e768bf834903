//! Architecture presets (baseline and multilevel "++" variants at mini and
//! full scale), shape inference and parameter counting.
//!
//! A multilevel network feeds its classifier the concatenation of the top
//! convolutional stage and one or more lower "skip source" stages. For the
//! stacked-conv family each skip source is max-pooled down to the spatial
//! size of the pooled top stage and squashed with tanh; for the inception
//! family the block outputs are concatenated directly before global pooling.

mod alexnet;
mod inception;
mod oracle;
mod shapes;

pub use inception::{inception_block, InceptionWidths};
pub use oracle::{diff_against_reference, reference_rows, ReferenceRow};
pub use shapes::{count_params, infer_shapes, ParamCount, ShapeRow, ShapeTable};

use std::fmt;
use std::str::FromStr;

use crate::nn::{Dims, GraphBuilder, LayerKind, NetworkGraph, LrnSpec};
use crate::tensor::PoolSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    AlexNet,
    Inception,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scale {
    Mini,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchPreset {
    pub family: Family,
    pub scale: Scale,
    pub multilevel: bool,
    /// Stage names whose activations join the classifier input.
    pub skip_sources: Vec<String>,
    pub num_classes: usize,
    pub aux_heads: bool,
    /// Override of the per-sample input `(c, h, w)`.
    pub input: Option<(usize, usize, usize)>,
    pub dropout_keep: f64,
    pub lrn: LrnSpec,
}

impl ArchPreset {
    pub fn new(family: Family, scale: Scale, multilevel: bool) -> Self {
        let skip_sources = if multilevel {
            vec![default_skip(family).to_string()]
        } else {
            Vec::new()
        };
        ArchPreset {
            family,
            scale,
            multilevel,
            skip_sources,
            num_classes: match scale {
                Scale::Mini => 10,
                Scale::Full => 1000,
            },
            aux_heads: false,
            input: None,
            dropout_keep: 0.5,
            lrn: LrnSpec::default(),
        }
    }

    /// Every conv stage below the top joins the classifier input.
    pub fn all_stages(family: Family, scale: Scale) -> Self {
        let mut p = ArchPreset::new(family, scale, true);
        let stages = stage_names(family, scale);
        p.skip_sources = stages[..stages.len() - 1].iter().map(|s| s.to_string()).collect();
        p
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.num_classes = n;
        self
    }

    pub fn with_input(mut self, c: usize, h: usize, w: usize) -> Self {
        self.input = Some((c, h, w));
        self
    }

    pub fn with_aux_heads(mut self, on: bool) -> Self {
        self.aux_heads = on;
        self
    }

    pub fn input_dims(&self) -> Dims {
        let (c, h, w) = self.input.unwrap_or(match (self.family, self.scale) {
            (_, Scale::Mini) => (3, 32, 32),
            (Family::AlexNet, Scale::Full) => (3, 227, 227),
            (Family::Inception, Scale::Full) => (3, 224, 224),
        });
        Dims::new(c, h, w)
    }

    /// Canonical string key, e.g. `alexnet-mini++`.
    pub fn key(&self) -> String {
        let family = match self.family {
            Family::AlexNet => "alexnet",
            Family::Inception => "inception",
        };
        let scale = match self.scale {
            Scale::Mini => "mini",
            Scale::Full => "full",
        };
        let stages = stage_names(self.family, self.scale);
        let suffix = if !self.multilevel {
            ""
        } else if self.skip_sources.len() == stages.len() - 1 {
            "-allconv"
        } else if self.skip_sources == [default_skip(self.family)] {
            "++"
        } else {
            "+custom"
        };
        format!("{family}-{scale}{suffix}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.multilevel == self.skip_sources.is_empty() {
            return Err(Error::invalid(
                "skip_sources must be non-empty exactly when multilevel is set",
            ));
        }
        let stages = stage_names(self.family, self.scale);
        let top = stages.len() - 1;
        for s in &self.skip_sources {
            match stages.iter().position(|n| n == s) {
                Some(i) if i < top => {}
                Some(_) => {
                    return Err(Error::graph(
                        s.clone(),
                        format!("skip source must lie below the top stage `{}`", stages[top]),
                    ))
                }
                None => {
                    return Err(Error::graph(
                        s.clone(),
                        format!("not a conv stage of {}", self.key()),
                    ))
                }
            }
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::invalid("dropout keep probability must be in (0, 1]"));
        }
        Ok(())
    }

    /// Graph node holding the activations of a conv stage.
    pub fn stage_output(&self, stage: &str) -> Result<String> {
        let stages = stage_names(self.family, self.scale);
        let i = stages
            .iter()
            .position(|n| *n == stage)
            .ok_or_else(|| Error::graph(stage, format!("not a conv stage of {}", self.key())))?;
        Ok(match self.family {
            Family::AlexNet => format!("relu{}", i + 1),
            Family::Inception if stage.starts_with("conv") => format!("{stage}_relu"),
            Family::Inception => format!("{stage}/output"),
        })
    }

    pub fn stages(&self) -> &'static [&'static str] {
        stage_names(self.family, self.scale)
    }
}

impl FromStr for ArchPreset {
    type Err = Error;

    /// Parses `<alexnet|inception>-<mini|full>[++|-allconv]`.
    fn from_str(key: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown preset `{key}`"));
        let (base, variant) = if let Some(b) = key.strip_suffix("++") {
            (b, 1)
        } else if let Some(b) = key.strip_suffix("-allconv") {
            (b, 2)
        } else {
            (key, 0)
        };
        let (family, scale) = base.split_once('-').ok_or_else(bad)?;
        let family = match family {
            "alexnet" => Family::AlexNet,
            "inception" | "googlenet" => Family::Inception,
            _ => return Err(bad()),
        };
        let scale = match scale {
            "mini" => Scale::Mini,
            "full" => Scale::Full,
            _ => return Err(bad()),
        };
        Ok(match variant {
            0 => ArchPreset::new(family, scale, false),
            1 => ArchPreset::new(family, scale, true),
            _ => ArchPreset::all_stages(family, scale),
        })
    }
}

impl fmt::Display for ArchPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

fn default_skip(family: Family) -> &'static str {
    match family {
        Family::AlexNet => "conv4",
        Family::Inception => "inception5a",
    }
}

fn stage_names(family: Family, scale: Scale) -> &'static [&'static str] {
    match (family, scale) {
        (Family::AlexNet, _) => &["conv1", "conv2", "conv3", "conv4", "conv5"],
        (Family::Inception, Scale::Mini) => &[
            "conv1",
            "inception3a",
            "inception3b",
            "inception5a",
            "inception5b",
        ],
        (Family::Inception, Scale::Full) => &[
            "conv1",
            "conv2",
            "inception3a",
            "inception3b",
            "inception4a",
            "inception4b",
            "inception4c",
            "inception4d",
            "inception4e",
            "inception5a",
            "inception5b",
        ],
    }
}

/// Builds the network graph for a preset.
pub fn build(preset: &ArchPreset) -> Result<NetworkGraph> {
    preset.validate()?;
    match preset.family {
        Family::AlexNet => alexnet::build(preset),
        Family::Inception => inception::build(preset),
    }
}

/// Max pool that reduces `from` to exactly `to` along each axis:
/// stride `from / to`, kernel `from - stride * (to - 1)`.
pub(crate) fn matching_pool(from: usize, to: usize) -> Result<PoolSpec> {
    if to == 0 || from < to {
        return Err(Error::geometry(
            "skip pool",
            format!("cannot pool {from} down to {to}"),
        ));
    }
    let stride = from / to;
    Ok(PoolSpec::new(from - stride * (to - 1), stride))
}

/// Concatenates the top stage with pooled (and optionally squashed) skip
/// sources, returning the id of the combined node.
pub(crate) fn attach_skips(
    b: &mut GraphBuilder,
    preset: &ArchPreset,
    top: &str,
    squash: bool,
) -> Result<String> {
    if !preset.multilevel {
        return Ok(top.to_string());
    }
    let target = b.dims_of(top)?;
    let mut parts = vec![top.to_string()];
    for stage in &preset.skip_sources {
        let src = preset.stage_output(stage)?;
        let d = b.dims_of(&src)?;
        let mut cur = src;
        if (d.h, d.w) != (target.h, target.w) {
            if d.h != d.w || target.h != target.w {
                return Err(Error::graph(stage.clone(), "skip pooling needs square maps"));
            }
            let pool = matching_pool(d.h, target.h)?;
            cur = b.add(format!("{stage}_skip_pool"), LayerKind::MaxPool(pool), &[&cur])?;
        }
        if squash {
            cur = b.add(format!("{stage}_skip_tanh"), LayerKind::Tanh, &[&cur])?;
        }
        parts.push(cur);
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    b.add("multilevel_concat", LayerKind::Concat, &refs)
}
