//! Fixtures shared by the criterion benches.

use mlctx_core::arch::{build, ArchPreset};
use mlctx_core::nn::{init_params, InitPolicy};
use mlctx_core::{NetworkGraph, ParamSet, Result, Shape, Tensor};

/// A built network with initialized weights and a deterministic batch.
pub struct Fixture {
    pub graph: NetworkGraph,
    pub params: ParamSet<f32>,
    pub batch: Tensor<f32>,
    pub labels: Vec<usize>,
}

pub fn fixture(preset: &ArchPreset, batch: usize) -> Result<Fixture> {
    let graph = build(preset)?;
    let params = init_params(&graph, InitPolicy::Normalized, 1)?;
    let d = graph.input_dims();
    let shape = Shape::new(batch, d.c, d.h, d.w)?;
    let data = (0..shape.len()).map(|i| ((i * 31) % 97) as f32 / 97.0 - 0.5).collect();
    let classes = graph.num_classes()?;
    Ok(Fixture {
        batch: Tensor::from_vec(shape, data)?,
        labels: (0..batch).map(|i| i % classes).collect(),
        graph,
        params,
    })
}
