//! Layer catalogue, parameters, initializers and the autodiff executor.

mod exec;
mod gradcheck;
mod graph;
mod layers;
mod params;

pub use exec::{backward, forward, loss, Activations, Mode};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Dims, GraphBuilder, LayerKind, LayerNode, LrnSpec, NetworkGraph, INPUT};
pub use layers::{cross_entropy_logits, cross_entropy_probs, l2_normalize, lrn, relu, softmax, tanh};
pub use params::{bias_name, init_params, param_shapes, weight_name, InitPolicy, Param, ParamSet};

/// Mixes a run seed with a stream index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
