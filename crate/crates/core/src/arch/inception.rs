use super::{attach_skips, ArchPreset, Scale};
use crate::nn::{GraphBuilder, LayerKind, NetworkGraph, INPUT};
use crate::tensor::{ConvSpec, PoolSpec};
use crate::{Error, Result};

/// Branch widths of an inception block: 1x1; 3x3 reduce, 3x3; 5x5 reduce,
/// 5x5; pool projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionWidths {
    pub b1: usize,
    pub b3_reduce: usize,
    pub b3: usize,
    pub b5_reduce: usize,
    pub b5: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub const fn new(b1: usize, b3r: usize, b3: usize, b5r: usize, b5: usize, pool_proj: usize) -> Self {
        InceptionWidths {
            b1,
            b3_reduce: b3r,
            b3,
            b5_reduce: b5r,
            b5,
            pool_proj,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.b1 + self.b3 + self.b5 + self.pool_proj
    }
}

fn conv_relu(b: &mut GraphBuilder, id: &str, spec: ConvSpec, input: &str, aux: bool) -> Result<String> {
    let relu = format!("{id}_relu");
    if aux {
        b.add_aux(id, LayerKind::Conv(spec), &[input])?;
        b.add_aux(relu, LayerKind::Relu, &[id])
    } else {
        b.add(id, LayerKind::Conv(spec), &[input])?;
        b.add(relu, LayerKind::Relu, &[id])
    }
}

/// Adds a four-branch block named `name` reading from `input`; returns the
/// id of its channel-concatenated output (`<name>/output`). The block entry
/// is an identity node called `name`.
pub fn inception_block(b: &mut GraphBuilder, name: &str, input: &str, w: InceptionWidths) -> Result<String> {
    let widths = [w.b1, w.b3_reduce, w.b3, w.b5_reduce, w.b5, w.pool_proj];
    if widths.contains(&0) {
        return Err(Error::graph(name, "inception branch widths must be >= 1"));
    }
    let entry = b.add(name, LayerKind::Identity, &[input])?;
    let one = conv_relu(b, &format!("{name}/1x1"), ConvSpec::new(w.b1, 1, 1, 0), &entry, false)?;
    let r3 = conv_relu(b, &format!("{name}/3x3_reduce"), ConvSpec::new(w.b3_reduce, 1, 1, 0), &entry, false)?;
    let three = conv_relu(b, &format!("{name}/3x3"), ConvSpec::new(w.b3, 3, 1, 1), &r3, false)?;
    let r5 = conv_relu(b, &format!("{name}/5x5_reduce"), ConvSpec::new(w.b5_reduce, 1, 1, 0), &entry, false)?;
    let five = conv_relu(b, &format!("{name}/5x5"), ConvSpec::new(w.b5, 5, 1, 2), &r5, false)?;
    let pool = b.add(
        format!("{name}/pool"),
        LayerKind::MaxPool(PoolSpec::padded(3, 1, 1)),
        &[&entry],
    )?;
    let proj = conv_relu(b, &format!("{name}/pool_proj"), ConvSpec::new(w.pool_proj, 1, 1, 0), &pool, false)?;
    b.add(format!("{name}/output"), LayerKind::Concat, &[&one, &three, &five, &proj])
}

enum Step {
    Block(&'static str, InceptionWidths),
    Pool(&'static str),
    Aux(&'static str),
}

const W: fn(usize, usize, usize, usize, usize, usize) -> InceptionWidths = InceptionWidths::new;

fn mini_plan() -> Vec<Step> {
    vec![
        Step::Block("inception3a", W(32, 32, 48, 8, 8, 8)),
        Step::Block("inception3b", W(32, 48, 64, 8, 16, 16)),
        Step::Aux("aux"),
        Step::Pool("pool3"),
        Step::Block("inception5a", W(32, 32, 48, 8, 8, 8)),
        Step::Block("inception5b", W(32, 48, 64, 8, 16, 16)),
    ]
}

fn full_plan() -> Vec<Step> {
    vec![
        Step::Block("inception3a", W(64, 96, 128, 16, 32, 32)),
        Step::Block("inception3b", W(128, 128, 192, 32, 96, 64)),
        Step::Pool("pool3"),
        Step::Block("inception4a", W(192, 96, 208, 16, 48, 64)),
        Step::Aux("aux1"),
        Step::Block("inception4b", W(160, 112, 224, 24, 64, 64)),
        Step::Block("inception4c", W(128, 128, 256, 24, 64, 64)),
        Step::Block("inception4d", W(112, 144, 288, 32, 64, 64)),
        Step::Aux("aux2"),
        Step::Block("inception4e", W(256, 160, 320, 32, 128, 128)),
        Step::Pool("pool4"),
        Step::Block("inception5a", W(256, 160, 320, 32, 128, 128)),
        Step::Block("inception5b", W(384, 192, 384, 48, 128, 128)),
    ]
}

pub(super) fn build(preset: &ArchPreset) -> Result<NetworkGraph> {
    let mut b = GraphBuilder::new(preset.input_dims());
    let mut cur;
    let (steps, pool) = match preset.scale {
        Scale::Mini => {
            cur = conv_relu(&mut b, "conv1", ConvSpec::new(32, 3, 1, 1), INPUT, false)?;
            cur = b.add("pool1", LayerKind::MaxPool(PoolSpec::new(2, 2)), &[&cur])?;
            (mini_plan(), PoolSpec::new(2, 2))
        }
        Scale::Full => {
            let pool = PoolSpec::padded(3, 2, 1);
            cur = conv_relu(&mut b, "conv1", ConvSpec::new(64, 7, 2, 3), INPUT, false)?;
            cur = b.add("pool1", LayerKind::MaxPool(pool), &[&cur])?;
            cur = b.add("norm1", LayerKind::Lrn(preset.lrn), &[&cur])?;
            cur = conv_relu(&mut b, "conv2_reduce", ConvSpec::new(64, 1, 1, 0), &cur, false)?;
            cur = conv_relu(&mut b, "conv2", ConvSpec::new(192, 3, 1, 1), &cur, false)?;
            cur = b.add("norm2", LayerKind::Lrn(preset.lrn), &[&cur])?;
            cur = b.add("pool2", LayerKind::MaxPool(pool), &[&cur])?;
            (full_plan(), pool)
        }
    };
    for step in steps {
        match step {
            Step::Block(name, widths) => cur = inception_block(&mut b, name, &cur, widths)?,
            Step::Pool(name) => cur = b.add(name, LayerKind::MaxPool(pool), &[&cur])?,
            Step::Aux(name) if preset.aux_heads => {
                let p = b.add_aux(format!("{name}/pool"), LayerKind::AvgPoolGlobal, &[&cur])?;
                let fc = b.add_aux(format!("{name}/fc"), LayerKind::Fc { out: preset.num_classes }, &[&p])?;
                b.add_aux(format!("{name}/prob"), LayerKind::SoftmaxXent, &[&fc])?;
            }
            Step::Aux(_) => {}
        }
    }
    cur = attach_skips(&mut b, preset, &cur, false)?;
    cur = b.add("pool5", LayerKind::AvgPoolGlobal, &[&cur])?;
    cur = b.add("drop5", LayerKind::Dropout { keep: preset.dropout_keep }, &[&cur])?;
    cur = b.add("fc", LayerKind::Fc { out: preset.num_classes }, &[&cur])?;
    b.add("prob", LayerKind::SoftmaxXent, &[&cur])?;
    b.finish()
}
