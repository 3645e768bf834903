//! Forward execution and reverse-mode gradient propagation over a graph.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{LayerKind, NetworkGraph, INPUT};
use super::layers::{self, check_labels};
use super::params::{bias_name, weight_name, ParamSet};
use super::derive_seed;
use crate::tensor::{
    self, avgpool_global, avgpool_global_backward, concat_channels, concat_channels_backward,
    conv2d_forward, maxpool2d_backward, maxpool2d_padded, PoolIndices,
};
use crate::{Error, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    Pool(PoolIndices),
    Mask(Vec<T>),
    Lrn(Vec<T>),
    L2(Vec<T>),
}

/// Every node's output from one forward pass, plus what backward needs.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    mode: Mode,
    input: Tensor<T>,
    ids: Vec<String>,
    outputs: Vec<Option<Tensor<T>>>,
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> Activations<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    /// Output of node `id`; `None` for unknown ids and for auxiliary
    /// nodes skipped at inference.
    pub fn get(&self, id: &str) -> Option<&Tensor<T>> {
        if id == INPUT {
            return Some(&self.input);
        }
        let i = self.ids.iter().position(|n| n == id)?;
        self.outputs[i].as_ref()
    }

    /// Probabilities of the main softmax head.
    pub fn probs(&self, graph: &NetworkGraph) -> Result<&Tensor<T>> {
        let head = graph
            .main_head()
            .ok_or_else(|| Error::graph(INPUT, "graph has no softmax head"))?;
        self.get(&head.id)
            .ok_or_else(|| Error::graph(head.id.clone(), "head not evaluated"))
    }

    /// Fingerprint of the piecewise-linear branches taken: the sign of
    /// every ReLU output and the winner of every max-pool window.
    pub(crate) fn branch_signature(&self, graph: &NetworkGraph) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in graph.nodes().iter().enumerate() {
            match (&node.kind, &self.caches[i], &self.outputs[i]) {
                (LayerKind::Relu, _, Some(y)) => {
                    for chunk in y.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (j, &v)| acc | (((v > T::ZERO) as u64) << j));
                        bits.hash(&mut h);
                    }
                }
                (_, Cache::Pool(idx), _) => idx.argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn out(&self, i: Option<usize>) -> &Tensor<T> {
        match i {
            None => &self.input,
            Some(j) => self.outputs[j].as_ref().expect("input evaluated before consumer"),
        }
    }
}

/// Stable per-node stream index (FNV-1a of the id), so dropout masks do not
/// move when unrelated nodes are added to the graph.
fn id_stream(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Runs the graph. Dropout is active only in [`Mode::Train`] and then
/// requires a seed; auxiliary classifiers are skipped in [`Mode::Infer`].
pub fn forward<T: Scalar>(
    graph: &NetworkGraph,
    params: &ParamSet<T>,
    input: &Tensor<T>,
    mode: Mode,
    seed: Option<u64>,
) -> Result<Activations<T>> {
    let d = graph.input_dims();
    let s = input.shape();
    if (s.c, s.h, s.w) != (d.c, d.h, d.w) {
        return Err(Error::graph(
            INPUT,
            format!("input shape {s} does not match declared {}x{}x{}", d.c, d.h, d.w),
        ));
    }
    if mode == Mode::Train && seed.is_none() && graph.has_dropout() {
        return Err(Error::invalid("train-mode forward with dropout needs a seed"));
    }
    let nodes = graph.nodes();
    let mut acts = Activations {
        mode,
        input: input.clone(),
        ids: nodes.iter().map(|n| n.id.clone()).collect(),
        outputs: Vec::with_capacity(nodes.len()),
        caches: Vec::with_capacity(nodes.len()),
    };
    for (i, node) in nodes.iter().enumerate() {
        if mode == Mode::Infer && node.aux {
            acts.outputs.push(None);
            acts.caches.push(Cache::None);
            continue;
        }
        let edges = graph.edges(i);
        let x = acts.out(edges[0]);
        let wrap = |e: Error| match e {
            Error::Graph { .. } => e,
            other => Error::graph(node.id.clone(), other.to_string()),
        };
        let (y, cache) = match &node.kind {
            LayerKind::Identity => (x.clone(), Cache::None),
            LayerKind::Conv(spec) => {
                let w = &params.require(&weight_name(&node.id))?.value;
                let b = &params.require(&bias_name(&node.id))?.value;
                (conv2d_forward(x, w, b.data(), spec).map_err(wrap)?, Cache::None)
            }
            LayerKind::MaxPool(spec) => {
                let (y, idx) = maxpool2d_padded(x, spec).map_err(wrap)?;
                (y, Cache::Pool(idx))
            }
            LayerKind::AvgPoolGlobal => (avgpool_global(x), Cache::None),
            LayerKind::Relu => (layers::relu(x), Cache::None),
            LayerKind::Tanh => (layers::tanh(x), Cache::None),
            LayerKind::Lrn(l) => {
                let (y, scale) = layers::lrn_forward(x, l.size, l.alpha, l.k, l.beta).map_err(wrap)?;
                (y, Cache::Lrn(scale))
            }
            LayerKind::Dropout { keep } => match mode {
                Mode::Infer => (x.clone(), Cache::None),
                Mode::Train => {
                    let seed = seed.expect("checked above");
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, id_stream(&node.id)));
                    let mask = layers::dropout_mask(x.len(), *keep, &mut rng);
                    (layers::apply_mask(x, &mask), Cache::Mask(mask))
                }
            },
            LayerKind::Fc { .. } => {
                let w = &params.require(&weight_name(&node.id))?.value;
                let b = &params.require(&bias_name(&node.id))?.value;
                (layers::fc_forward(x, w, b).map_err(wrap)?, Cache::None)
            }
            LayerKind::Concat => {
                let ins: Vec<&Tensor<T>> = edges.iter().map(|&e| acts.out(e)).collect();
                (concat_channels(&ins).map_err(wrap)?, Cache::None)
            }
            LayerKind::L2Norm => {
                let (y, norms) = layers::l2_forward(x);
                (y, Cache::L2(norms))
            }
            LayerKind::SoftmaxXent => (layers::softmax(x), Cache::None),
        };
        acts.outputs.push(Some(y));
        acts.caches.push(cache);
    }
    Ok(acts)
}

/// Weighted loss of all active heads: main cross-entropy plus
/// `aux_weight` times each auxiliary cross-entropy.
pub fn loss<T: Scalar>(
    graph: &NetworkGraph,
    acts: &Activations<T>,
    labels: &[usize],
    aux_weight: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut found_main = false;
    for (i, node) in graph.nodes().iter().enumerate() {
        if node.kind != LayerKind::SoftmaxXent {
            continue;
        }
        let w = if node.aux { aux_weight } else { 1.0 };
        if !node.aux {
            found_main = true;
        }
        if w == 0.0 {
            continue;
        }
        let logits = acts.out(graph.edges(i)[0]);
        let l = layers::cross_entropy_logits(logits, labels)?;
        total += w * l;
    }
    if !found_main {
        return Err(Error::graph(INPUT, "graph has no softmax head"));
    }
    Ok(total)
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], target: Option<usize>, g: Tensor<T>) {
    if let Some(j) = target {
        match &mut grads[j] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Back-propagates the loss of a train-mode forward pass, adding parameter
/// gradients into `params`. Returns the loss value.
pub fn backward<T: Scalar>(
    graph: &NetworkGraph,
    params: &mut ParamSet<T>,
    acts: &Activations<T>,
    labels: &[usize],
    aux_weight: f64,
) -> Result<f64> {
    if acts.mode != Mode::Train {
        return Err(Error::invalid("backward needs a train-mode forward pass"));
    }
    let n = acts.input.shape().n;
    if let Some(head) = graph.main_head() {
        let classes = acts.get(&head.id).map(|t| t.shape().c).unwrap_or(0);
        check_labels(labels, n, classes)?;
    }
    let total = loss(graph, acts, labels, aux_weight)?;
    let nodes = graph.nodes();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    for i in (0..nodes.len()).rev() {
        let node = &nodes[i];
        let edges = graph.edges(i);
        if node.kind == LayerKind::SoftmaxXent {
            let w = if node.aux { aux_weight } else { 1.0 };
            if w != 0.0 {
                let probs = acts.outputs[i].as_ref().expect("train mode evaluates all nodes");
                accumulate(&mut grads, edges[0], layers::softmax_xent_backward(probs, labels, w));
            }
            continue;
        }
        let Some(gy) = grads[i].take() else { continue };
        let x = acts.out(edges[0]);
        let y = acts.outputs[i].as_ref().expect("train mode evaluates all nodes");
        let wants_input = edges[0].is_some();
        match (&node.kind, &acts.caches[i]) {
            (LayerKind::Identity, _) => accumulate(&mut grads, edges[0], gy),
            (LayerKind::Conv(spec), _) => {
                let wname = weight_name(&node.id);
                let g = {
                    let w = &params.require(&wname)?.value;
                    tensor::conv::conv2d_backward_impl(x, w, &gy, spec, wants_input)?
                };
                params.require_mut(&wname)?.grad.add_assign(&g.weight);
                let gb = params.require_mut(&bias_name(&node.id))?;
                for (a, &b) in gb.grad.data_mut().iter_mut().zip(&g.bias) {
                    *a += b;
                }
                if let Some(gx) = g.input {
                    accumulate(&mut grads, edges[0], gx);
                }
            }
            (LayerKind::MaxPool(_), Cache::Pool(idx)) => {
                accumulate(&mut grads, edges[0], maxpool2d_backward(&gy, idx)?);
            }
            (LayerKind::AvgPoolGlobal, _) => {
                accumulate(&mut grads, edges[0], avgpool_global_backward(&gy, x.shape())?);
            }
            (LayerKind::Relu, _) => accumulate(&mut grads, edges[0], layers::relu_backward(y, &gy)),
            (LayerKind::Tanh, _) => accumulate(&mut grads, edges[0], layers::tanh_backward(y, &gy)),
            (LayerKind::Lrn(l), Cache::Lrn(scale)) => {
                let gx = layers::lrn_backward(x, y, scale, &gy, l.size, l.alpha, l.beta);
                accumulate(&mut grads, edges[0], gx);
            }
            (LayerKind::Dropout { .. }, Cache::Mask(mask)) => {
                accumulate(&mut grads, edges[0], layers::apply_mask(&gy, mask));
            }
            (LayerKind::Fc { .. }, _) => {
                let wname = weight_name(&node.id);
                let gx = {
                    let p = params.require_mut(&wname)?;
                    layers::fc_backward_weight(x, &gy, &mut p.grad);
                    wants_input.then(|| layers::fc_backward_input(x, &p.value, &gy))
                };
                layers::fc_backward_bias(&gy, &mut params.require_mut(&bias_name(&node.id))?.grad);
                if let Some(gx) = gx {
                    accumulate(&mut grads, edges[0], gx);
                }
            }
            (LayerKind::Concat, _) => {
                let channels: Vec<usize> = edges.iter().map(|&e| acts.out(e).shape().c).collect();
                for (&e, g) in edges.iter().zip(concat_channels_backward(&gy, &channels)?) {
                    accumulate(&mut grads, e, g);
                }
            }
            (LayerKind::L2Norm, Cache::L2(norms)) => {
                accumulate(&mut grads, edges[0], layers::l2_backward(y, norms, &gy));
            }
            (kind, _) => {
                return Err(Error::graph(
                    node.id.clone(),
                    format!("no backward state recorded for {}", kind.name()),
                ))
            }
        }
    }
    Ok(total)
}
