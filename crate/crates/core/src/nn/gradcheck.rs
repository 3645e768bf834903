//! Central-difference verification of analytic parameter gradients.

use super::exec::{backward, forward, loss, Mode};
use super::graph::NetworkGraph;
use super::params::ParamSet;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Denominator floor: error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Above this many scalars a deterministic strided subsample is checked.
    pub max_checks: usize,
    pub aux_weight: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            floor: 1e-4,
            max_checks: 10_000,
            aux_weight: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub checked: usize,
    /// Probes whose `+eps` or `-eps` evaluation switched a ReLU sign or a
    /// max-pool winner. The loss is not differentiable across such a kink,
    /// so these are excluded from `max_rel_error`.
    pub skipped_kinks: usize,
}

/// Max relative error between analytic and central-difference gradients.
pub fn grad_check(
    graph: &NetworkGraph,
    params: &ParamSet<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<f64> {
    let opts = GradCheckOptions {
        eps,
        ..Default::default()
    };
    Ok(grad_check_with(graph, params, input, labels, &opts)?.max_rel_error)
}

pub fn grad_check_with(
    graph: &NetworkGraph,
    params: &ParamSet<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.eps > 0.0) || !opts.eps.is_finite() {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {}", opts.eps)));
    }
    let seed = Some(opts.seed);
    let mut analytic = params.clone();
    analytic.zero_grads();
    let acts = forward(graph, &analytic, input, Mode::Train, seed)?;
    backward(graph, &mut analytic, &acts, labels, opts.aux_weight)?;
    let branches = acts.branch_signature(graph);

    let total = params.num_scalars();
    let mut probe = params.clone();
    let eval = |probe: &ParamSet<f64>| -> Result<(f64, bool)> {
        let acts = forward(graph, probe, input, Mode::Train, seed)?;
        let same = acts.branch_signature(graph) == branches;
        Ok((loss(graph, &acts, labels, opts.aux_weight)?, same))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let len = params.get(&name).expect("listed").value.len();
        for idx in sample_indices(len, total, opts.max_checks) {
            let orig = params.get(&name).expect("listed").value.data()[idx];
            probe.get_mut(&name).expect("listed").value.data_mut()[idx] = orig + opts.eps;
            let (plus, same_plus) = eval(&probe)?;
            probe.get_mut(&name).expect("listed").value.data_mut()[idx] = orig - opts.eps;
            let (minus, same_minus) = eval(&probe)?;
            probe.get_mut(&name).expect("listed").value.data_mut()[idx] = orig;
            if !(same_plus && same_minus) {
                report.skipped_kinks += 1;
                continue;
            }

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.get(&name).expect("listed").grad.data()[idx];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_empty() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = format!("{name}[{idx}]");
            }
        }
    }
    Ok(report)
}

/// All indices when the model is small, otherwise an evenly strided share
/// of the budget (at least a few per entry).
fn sample_indices(len: usize, total: usize, budget: usize) -> Vec<usize> {
    if total <= budget {
        return (0..len).collect();
    }
    let share = ((len as f64 * budget as f64 / total as f64).ceil() as usize).max(8).min(len);
    let stride = len as f64 / share as f64;
    (0..share)
        .map(|k| ((k as f64 + 0.5) * stride) as usize)
        .map(|i| i.min(len - 1))
        .collect()
}
