use std::collections::HashMap;
use std::fmt;

use crate::tensor::{ConvSpec, PoolSpec};
use crate::{Error, Result};

/// Id of the implicit graph input.
pub const INPUT: &str = "data";

/// Cross-channel local response normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrnSpec {
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnSpec {
    fn default() -> Self {
        LrnSpec {
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Identity,
    Conv(ConvSpec),
    MaxPool(PoolSpec),
    AvgPoolGlobal,
    Relu,
    Tanh,
    Lrn(LrnSpec),
    /// Inverted dropout with keep probability `keep`.
    Dropout { keep: f64 },
    Fc { out: usize },
    Concat,
    L2Norm,
    /// Softmax output; its input logits feed a cross-entropy loss.
    SoftmaxXent,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Identity => "identity",
            LayerKind::Conv(_) => "conv",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPoolGlobal => "avgpool_global",
            LayerKind::Relu => "relu",
            LayerKind::Tanh => "tanh",
            LayerKind::Lrn(_) => "lrn",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Fc { .. } => "fc",
            LayerKind::Concat => "concat",
            LayerKind::L2Norm => "l2norm",
            LayerKind::SoftmaxXent => "softmax_xent",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv(_) | LayerKind::Fc { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    /// Part of an auxiliary classifier: trained, but skipped at inference.
    pub aux: bool,
}

/// Per-sample `(c, h, w)` extents as seen by shape inference. `flat` marks
/// vectors produced by fully connected layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub flat: bool,
}

impl Dims {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Dims { c, h, w, flat: false }
    }

    pub fn flat(c: usize) -> Self {
        Dims {
            c,
            h: 1,
            w: 1,
            flat: true,
        }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.flat {
            write!(f, "{}", self.c)
        } else {
            write!(f, "{}x{}x{}", self.c, self.h, self.w)
        }
    }
}

/// Immutable DAG of layers in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    input: Dims,
    nodes: Vec<LayerNode>,
    index: HashMap<String, usize>,
    /// Per node, positions of its inputs (`None` = graph input).
    edges: Vec<Vec<Option<usize>>>,
}

impl NetworkGraph {
    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub(crate) fn edges(&self, i: usize) -> &[Option<usize>] {
        &self.edges[i]
    }

    /// Softmax heads that are not part of an auxiliary classifier.
    pub fn main_head(&self) -> Option<&LayerNode> {
        self.nodes
            .iter()
            .rev()
            .find(|n| n.kind == LayerKind::SoftmaxXent && !n.aux)
    }

    pub fn aux_heads(&self) -> impl Iterator<Item = &LayerNode> {
        self.nodes
            .iter()
            .filter(|n| n.kind == LayerKind::SoftmaxXent && n.aux)
    }

    pub fn has_dropout(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.kind, LayerKind::Dropout { .. }))
    }

    /// Number of classes predicted by the main head.
    pub fn num_classes(&self) -> Result<usize> {
        let head = self
            .main_head()
            .ok_or_else(|| Error::graph(INPUT, "graph has no softmax head"))?;
        let dims = self.infer_dims(self.input)?;
        Ok(dims[self.index[&head.id]].c)
    }

    /// Output dims of every node for a per-sample input shape.
    pub fn infer_dims(&self, input: Dims) -> Result<Vec<Dims>> {
        let mut out: Vec<Dims> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let ins: Vec<Dims> = self.edges[i]
                .iter()
                .map(|e| e.map_or(input, |j| out[j]))
                .collect();
            out.push(node_output_dims(node, &ins)?);
        }
        Ok(out)
    }

    /// Input dims of every node (concatenated dims for multi-input nodes).
    pub fn infer_input_dims(&self, input: Dims) -> Result<Vec<Dims>> {
        let outs = self.infer_dims(input)?;
        Ok((0..self.nodes.len())
            .map(|i| {
                let edges = &self.edges[i];
                let first = edges[0].map_or(input, |j| outs[j]);
                if edges.len() == 1 {
                    first
                } else {
                    outs[i]
                }
            })
            .collect())
    }
}

pub(crate) fn node_output_dims(node: &LayerNode, ins: &[Dims]) -> Result<Dims> {
    let err = |msg: String| Error::graph(node.id.clone(), msg);
    let x = ins[0];
    let spatial = |c: usize, h: usize, w: usize| Dims::new(c, h, w);
    match &node.kind {
        LayerKind::Identity
        | LayerKind::Relu
        | LayerKind::Tanh
        | LayerKind::Lrn(_)
        | LayerKind::Dropout { .. }
        | LayerKind::L2Norm => Ok(x),
        LayerKind::Conv(spec) => {
            let (h, w) = spec
                .output_hw(x.h, x.w)
                .map_err(|e| err(format!("input {x}: {e}")))?;
            Ok(spatial(spec.out_channels, h, w))
        }
        LayerKind::MaxPool(spec) => {
            let (h, w) = spec
                .output_hw(x.h, x.w)
                .map_err(|e| err(format!("input {x}: {e}")))?;
            Ok(spatial(x.c, h, w))
        }
        LayerKind::AvgPoolGlobal => Ok(spatial(x.c, 1, 1)),
        LayerKind::Fc { out } => {
            if *out == 0 {
                return Err(err("fc with zero outputs".into()));
            }
            Ok(Dims::flat(*out))
        }
        LayerKind::Concat => {
            let mut c = 0;
            for (i, d) in ins.iter().enumerate() {
                if d.h != x.h || d.w != x.w {
                    return Err(err(format!(
                        "concat input {i} ({}) has shape {d}, expected *x{}x{}",
                        node.inputs[i], x.h, x.w
                    )));
                }
                c += d.c;
            }
            Ok(Dims {
                c,
                h: x.h,
                w: x.w,
                flat: ins.iter().all(|d| d.flat),
            })
        }
        LayerKind::SoftmaxXent => {
            if x.h != 1 || x.w != 1 {
                return Err(err(format!("softmax expects Cx1x1 logits, got {x}")));
            }
            Ok(x)
        }
    }
}

/// Incremental builder; nodes may only consume previously added nodes, so
/// every built graph is acyclic and already topologically ordered.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    graph: NetworkGraph,
}

impl GraphBuilder {
    pub fn new(input: Dims) -> Self {
        GraphBuilder {
            graph: NetworkGraph {
                input,
                nodes: Vec::new(),
                index: HashMap::new(),
                edges: Vec::new(),
            },
        }
    }

    pub fn add(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Result<String> {
        self.push(id.into(), kind, inputs, false)
    }

    /// Adds a node belonging to an auxiliary classifier.
    pub fn add_aux(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Result<String> {
        self.push(id.into(), kind, inputs, true)
    }

    fn push(&mut self, id: String, kind: LayerKind, inputs: &[&str], aux: bool) -> Result<String> {
        let g = &mut self.graph;
        if id == INPUT || g.index.contains_key(&id) {
            return Err(Error::graph(id, "duplicate node id"));
        }
        let arity_ok = match kind {
            LayerKind::Concat => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::graph(
                id,
                format!("{} cannot take {} inputs", kind.name(), inputs.len()),
            ));
        }
        let mut edges = Vec::with_capacity(inputs.len());
        for &inp in inputs {
            if inp == INPUT {
                edges.push(None);
            } else {
                let j = *g
                    .index
                    .get(inp)
                    .ok_or_else(|| Error::graph(id.clone(), format!("unknown input `{inp}`")))?;
                edges.push(Some(j));
            }
        }
        // Shape check as we go so builder errors name the offending node.
        let node = LayerNode {
            id: id.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            aux,
        };
        let dims = g.infer_dims(g.input)?;
        let ins: Vec<Dims> = edges.iter().map(|e| e.map_or(g.input, |j| dims[j])).collect();
        node_output_dims(&node, &ins)?;
        g.index.insert(id.clone(), g.nodes.len());
        g.nodes.push(node);
        g.edges.push(edges);
        Ok(id)
    }

    pub fn dims_of(&self, id: &str) -> Result<Dims> {
        if id == INPUT {
            return Ok(self.graph.input);
        }
        let i = self
            .graph
            .position(id)
            .ok_or_else(|| Error::graph(id, "unknown node"))?;
        Ok(self.graph.infer_dims(self.graph.input)?[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        id == INPUT || self.graph.index.contains_key(id)
    }

    pub fn finish(self) -> Result<NetworkGraph> {
        let heads = self
            .graph
            .nodes
            .iter()
            .filter(|n| n.kind == LayerKind::SoftmaxXent && !n.aux)
            .count();
        if heads > 1 {
            return Err(Error::graph(INPUT, "more than one main softmax head"));
        }
        Ok(self.graph)
    }
}
