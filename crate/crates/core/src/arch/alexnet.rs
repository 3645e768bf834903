use super::{attach_skips, ArchPreset, Scale};
use crate::nn::{GraphBuilder, LayerKind, NetworkGraph, INPUT};
use crate::tensor::{ConvSpec, PoolSpec};
use crate::Result;

struct Plan {
    /// (out_channels, kernel, stride, pad) for conv1..conv5
    convs: [(usize, usize, usize, usize); 5],
    pool: PoolSpec,
    fc: usize,
}

fn plan(scale: Scale) -> Plan {
    match scale {
        Scale::Mini => Plan {
            convs: [(32, 3, 1, 1), (64, 3, 1, 1), (96, 3, 1, 1), (96, 3, 1, 1), (64, 3, 1, 1)],
            pool: PoolSpec::new(2, 2),
            fc: 256,
        },
        Scale::Full => Plan {
            convs: [
                (96, 11, 4, 0),
                (256, 5, 1, 2),
                (384, 3, 1, 1),
                (384, 3, 1, 1),
                (256, 3, 1, 1),
            ],
            pool: PoolSpec::new(3, 2),
            fc: 4096,
        },
    }
}

pub(super) fn build(preset: &ArchPreset) -> Result<NetworkGraph> {
    let p = plan(preset.scale);
    let mut b = GraphBuilder::new(preset.input_dims());
    let mut cur = INPUT.to_string();
    for (i, &(out, k, stride, pad)) in p.convs.iter().enumerate() {
        let n = i + 1;
        cur = b.add(format!("conv{n}"), LayerKind::Conv(ConvSpec::new(out, k, stride, pad)), &[&cur])?;
        cur = b.add(format!("relu{n}"), LayerKind::Relu, &[&cur])?;
        if n <= 2 {
            cur = b.add(format!("norm{n}"), LayerKind::Lrn(preset.lrn), &[&cur])?;
        }
        if n <= 2 || n == 5 {
            cur = b.add(format!("pool{n}"), LayerKind::MaxPool(p.pool), &[&cur])?;
        }
    }
    cur = attach_skips(&mut b, preset, &cur, true)?;
    let keep = preset.dropout_keep;
    for n in [6, 7] {
        cur = b.add(format!("fc{n}"), LayerKind::Fc { out: p.fc }, &[&cur])?;
        cur = b.add(format!("relu{n}"), LayerKind::Relu, &[&cur])?;
        cur = b.add(format!("drop{n}"), LayerKind::Dropout { keep }, &[&cur])?;
    }
    cur = b.add("fc8", LayerKind::Fc { out: preset.num_classes }, &[&cur])?;
    b.add("prob", LayerKind::SoftmaxXent, &[&cur])?;
    b.finish()
}
