use std::fmt::Write as _;

use crate::nn::{param_shapes, Dims, NetworkGraph, INPUT};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRow {
    pub layer: String,
    pub kind: &'static str,
    pub input: Dims,
    pub output: Dims,
}

/// Per-node input/output sizes in topological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeTable {
    pub rows: Vec<ShapeRow>,
}

impl ShapeTable {
    pub fn get(&self, layer: &str) -> Option<&ShapeRow> {
        self.rows.iter().find(|r| r.layer == layer)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.layer.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:<14}  {:>14}  {:>14}", "layer", "kind", "input", "output");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:<14}  {:>14}  {:>14}",
                r.layer,
                r.kind,
                r.input.to_string(),
                r.output.to_string()
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,input,output\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.layer, r.kind, r.input, r.output);
        }
        s
    }
}

/// Static shape propagation from a per-sample input shape.
pub fn infer_shapes(graph: &NetworkGraph, input: Dims) -> Result<ShapeTable> {
    let declared = graph.input_dims();
    if (input.c, input.h, input.w) != (declared.c, declared.h, declared.w) {
        return Err(Error::graph(
            INPUT,
            format!("input {input} does not match declared {declared}"),
        ));
    }
    let ins = graph.infer_input_dims(input)?;
    let outs = graph.infer_dims(input)?;
    Ok(ShapeTable {
        rows: graph
            .nodes()
            .iter()
            .zip(ins.into_iter().zip(outs))
            .map(|(n, (i, o))| ShapeRow {
                layer: n.id.clone(),
                kind: n.kind.name(),
                input: i,
                output: o,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    /// `(layer, weights + biases)` for every parameterized layer.
    pub per_layer: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamCount {
    pub fn layer(&self, id: &str) -> Option<usize> {
        self.per_layer.iter().find(|(l, _)| l == id).map(|&(_, c)| c)
    }
}

pub fn count_params(graph: &NetworkGraph) -> Result<ParamCount> {
    let mut per_layer: Vec<(String, usize)> = Vec::new();
    for (name, shape) in param_shapes(graph)? {
        let layer = name.rsplit_once('.').map_or(name.as_str(), |(l, _)| l).to_string();
        match per_layer.last_mut() {
            Some((l, c)) if *l == layer => *c += shape.len(),
            _ => per_layer.push((layer, shape.len())),
        }
    }
    let total = per_layer.iter().map(|(_, c)| c).sum();
    Ok(ParamCount { per_layer, total })
}
