use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{LayerKind, NetworkGraph};
use crate::{Error, Result, Scalar, Shape, Tensor};

/// A trainable tensor with its gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape();
        Param {
            value,
            grad: Tensor::zeros(shape),
            momentum: Tensor::zeros(shape),
        }
    }
}

/// Named parameters in graph order. Conv and fc nodes own `<id>.weight`
/// and `<id>.bias`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: IndexMap<String, Param<T>>,
}

pub fn weight_name(node: &str) -> String {
    format!("{node}.weight")
}

pub fn bias_name(node: &str) -> String {
    format!("{node}.bias")
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), Param::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Param<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::graph(name, "missing parameter"))
    }

    pub(crate) fn require_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::graph(name, "missing parameter"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count over all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(T::ZERO);
        }
    }

    pub fn convert<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.convert(),
                            grad: p.grad.convert(),
                            momentum: p.momentum.convert(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Checks that names and shapes match what `graph` expects.
    pub fn validate_for(&self, graph: &NetworkGraph) -> Result<()> {
        let expected = param_shapes(graph)?;
        if expected.len() != self.entries.len() {
            return Err(Error::graph(
                "params",
                format!("expected {} entries, found {}", expected.len(), self.entries.len()),
            ));
        }
        for (name, shape) in expected {
            let p = self.require(&name)?;
            if p.value.shape() != shape {
                return Err(Error::shape("params", format!("{name} {shape}"), p.value.shape()));
            }
        }
        Ok(())
    }
}

/// Weight initialization policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitPolicy {
    /// Weights from `N(mean, std^2)`, every bias set to `bias`.
    Gaussian { mean: f64, std: f64, bias: f64 },
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    Normalized,
}

impl InitPolicy {
    pub fn gaussian(mean: f64, std: f64, bias: f64) -> Self {
        InitPolicy::Gaussian { mean, std, bias }
    }
}

/// `(name, shape)` of every parameter the graph needs, in graph order.
pub fn param_shapes(graph: &NetworkGraph) -> Result<Vec<(String, Shape)>> {
    let dims = graph.infer_input_dims(graph.input_dims())?;
    let mut out = Vec::new();
    for (node, d) in graph.nodes().iter().zip(dims) {
        match &node.kind {
            LayerKind::Conv(spec) => {
                out.push((weight_name(&node.id), spec.weight_shape(d.c)?));
                out.push((bias_name(&node.id), Shape::new(spec.out_channels, 1, 1, 1)?));
            }
            LayerKind::Fc { out: o } => {
                out.push((weight_name(&node.id), Shape::new(*o, d.len(), 1, 1)?));
                out.push((bias_name(&node.id), Shape::new(*o, 1, 1, 1)?));
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Creates every parameter of `graph`; deterministic per seed.
pub fn init_params<T: Scalar>(graph: &NetworkGraph, policy: InitPolicy, seed: u64) -> Result<ParamSet<T>> {
    if let InitPolicy::Gaussian { std, .. } = policy {
        if !(std > 0.0) {
            return Err(Error::invalid(format!("gaussian init std must be > 0, got {std}")));
        }
    }
    let mut set = ParamSet::new();
    for (i, (name, shape)) in param_shapes(graph)?.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, i as u64));
        let is_bias = name.ends_with(".bias");
        let values: Vec<f64> = match (policy, is_bias) {
            (InitPolicy::Gaussian { bias, .. }, true) => vec![bias; shape.len()],
            (InitPolicy::Gaussian { mean, std, .. }, false) => {
                let dist = Normal::new(mean, std).map_err(|e| Error::invalid(e.to_string()))?;
                (0..shape.len()).map(|_| dist.sample(&mut rng)).collect()
            }
            (InitPolicy::Normalized, true) => vec![0.0; shape.len()],
            (InitPolicy::Normalized, false) => {
                let receptive = shape.h * shape.w;
                let fan_in = shape.c * receptive;
                let fan_out = shape.n * receptive;
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..shape.len())
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect()
            }
        };
        set.insert(name, Tensor::from_f64(shape, &values)?);
    }
    Ok(set)
}
