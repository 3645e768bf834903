//! Reference per-layer input sizes for the full-scale networks, baseline
//! and multilevel variants, used to validate the builders.

use super::{ArchPreset, Family, Scale, ShapeTable};
use crate::nn::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceRow {
    pub layer: &'static str,
    pub input: Dims,
}

const fn d(c: usize, h: usize, w: usize) -> Dims {
    Dims { c, h, w, flat: false }
}

const fn v(c: usize) -> Dims {
    Dims {
        c,
        h: 1,
        w: 1,
        flat: true,
    }
}

/// (layer, baseline input, multilevel input)
const ALEXNET: &[(&str, Dims, Dims)] = &[
    ("conv1", d(3, 227, 227), d(3, 227, 227)),
    ("pool1", d(96, 55, 55), d(96, 55, 55)),
    ("conv2", d(96, 27, 27), d(96, 27, 27)),
    ("pool2", d(256, 27, 27), d(256, 27, 27)),
    ("conv3", d(256, 13, 13), d(256, 13, 13)),
    ("conv4", d(384, 13, 13), d(384, 13, 13)),
    ("conv5", d(384, 13, 13), d(384, 13, 13)),
    ("pool5", d(256, 13, 13), d(256, 13, 13)),
    ("fc6", d(256, 6, 6), d(640, 6, 6)),
    ("fc7", v(4096), v(4096)),
    ("fc8", v(4096), v(4096)),
    ("prob", v(1000), v(1000)),
];

const GOOGLENET: &[(&str, Dims, Dims)] = &[
    ("conv1", d(3, 224, 224), d(3, 224, 224)),
    ("pool1", d(64, 112, 112), d(64, 112, 112)),
    ("conv2", d(64, 56, 56), d(64, 56, 56)),
    ("pool2", d(192, 56, 56), d(192, 56, 56)),
    ("inception3a", d(192, 28, 28), d(192, 28, 28)),
    ("inception3b", d(256, 28, 28), d(256, 28, 28)),
    ("pool3", d(480, 28, 28), d(480, 28, 28)),
    ("inception4a", d(480, 14, 14), d(480, 14, 14)),
    ("inception4b", d(512, 14, 14), d(512, 14, 14)),
    ("inception4c", d(512, 14, 14), d(512, 14, 14)),
    ("inception4d", d(512, 14, 14), d(512, 14, 14)),
    ("inception4e", d(528, 14, 14), d(528, 14, 14)),
    ("pool4", d(832, 14, 14), d(832, 14, 14)),
    ("inception5a", d(832, 7, 7), d(832, 7, 7)),
    ("inception5b", d(832, 7, 7), d(832, 7, 7)),
    ("pool5", d(1024, 7, 7), d(1856, 7, 7)),
    ("fc", d(1024, 1, 1), d(1856, 1, 1)),
    ("prob", v(1000), v(1000)),
];

/// Reference rows for a full-scale baseline or two-stage multilevel preset;
/// `None` for presets without a reference.
pub fn reference_rows(preset: &ArchPreset) -> Option<Vec<ReferenceRow>> {
    if preset.scale != Scale::Full || preset.num_classes != 1000 || preset.input.is_some() {
        return None;
    }
    let multilevel = match preset.key().as_str() {
        "alexnet-full" | "inception-full" => false,
        "alexnet-full++" | "inception-full++" => true,
        _ => return None,
    };
    let table = match preset.family {
        Family::AlexNet => ALEXNET,
        Family::Inception => GOOGLENET,
    };
    Some(
        table
            .iter()
            .map(|&(layer, base, plus)| ReferenceRow {
                layer,
                input: if multilevel { plus } else { base },
            })
            .collect(),
    )
}

/// One line per mismatching or missing row; empty when the table matches.
pub fn diff_against_reference(table: &ShapeTable, reference: &[ReferenceRow]) -> Vec<String> {
    let mut out = Vec::new();
    let mut last_pos = None;
    for r in reference {
        match table.rows.iter().position(|row| row.layer == r.layer) {
            None => out.push(format!("{}: missing (expected {})", r.layer, r.input)),
            Some(i) => {
                let row = &table.rows[i];
                if row.input != r.input {
                    out.push(format!("{}: got {}, expected {}", r.layer, row.input, r.input));
                }
                if last_pos.is_some_and(|p| i < p) {
                    out.push(format!("{}: out of order", r.layer));
                }
                last_pos = Some(i);
            }
        }
    }
    out
}
