//! SGD with heavy-ball momentum and weight decay, and the step and
//! polynomial learning-rate schedules.

use crate::nn::ParamSet;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// `base / divisor^k` where `k` counts milestones (in epochs) already reached.
    Step { divisor: f64, milestones: Vec<usize> },
    /// `base * (1 - iter / max_iter)^power`.
    Poly { power: f64 },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            Schedule::Step { divisor, milestones } => {
                if !(*divisor > 0.0) {
                    return Err(Error::invalid("step divisor must be > 0"));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("milestones must be strictly increasing"));
                }
            }
            Schedule::Poly { power } => {
                if !(*power > 0.0) {
                    return Err(Error::invalid("poly power must be > 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to biases as well as weights.
    pub decay_biases: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::invalid("base_lr must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        self.schedule.validate()
    }

    /// Iterations per epoch, `ceil(dataset_size / batch_size)`.
    pub fn iters_per_epoch(&self, dataset_size: usize) -> usize {
        dataset_size.div_ceil(self.batch_size)
    }
}

/// Learning rate for iteration `iter` of `max_iter` during epoch `epoch`.
pub fn lr_at(schedule: &Schedule, config: &TrainConfig, iter: usize, max_iter: usize, epoch: usize) -> Result<f64> {
    if iter > max_iter {
        return Err(Error::invalid(format!("iteration {iter} beyond max_iter {max_iter}")));
    }
    Ok(match schedule {
        Schedule::Step { divisor, milestones } => {
            let passed = milestones.iter().filter(|&&m| epoch >= m).count();
            config.base_lr / divisor.powi(passed as i32)
        }
        Schedule::Poly { power } => {
            if max_iter == 0 {
                return Err(Error::invalid("poly schedule needs max_iter > 0"));
            }
            config.base_lr * (1.0 - iter as f64 / max_iter as f64).powf(*power)
        }
    })
}

/// One SGD step over every parameter, then zeroes the gradients:
/// `v <- momentum * v - lr * (grad + decay * theta)`, `theta <- theta + v`.
/// Biases are decayed only when `decay_biases` is set.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    decay_biases: bool,
) -> Result<()> {
    for (name, p) in params.iter() {
        p.grad.ensure_finite(name)?;
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for (name, p) in params.iter_mut() {
        let wd = if decay_biases || !name.ends_with(".bias") {
            T::from_f64(weight_decay)
        } else {
            T::ZERO
        };
        let value = p.value.data_mut();
        let grad = p.grad.data_mut();
        let vel = p.momentum.data_mut();
        for ((theta, g), v) in value.iter_mut().zip(grad.iter_mut()).zip(vel.iter_mut()) {
            *v = mu * *v - lr * (*g + wd * *theta);
            *theta += *v;
            *g = T::ZERO;
        }
    }
    Ok(())
}
