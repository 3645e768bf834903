//! Miniature deep-learning engine for multilevel-context classifiers:
//! networks whose classifier sees the concatenated activations of the two
//! highest convolutional stages rather than the top stage alone.

pub mod arch;
pub mod data;
mod error;
pub mod eval;
pub mod nn;
pub mod optim;
mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::{Shape, Tensor};

pub use arch::{ArchPreset, Family, Scale};
pub use data::{CropPlan, Dataset};
pub use eval::{EvalMode, EvalReport, TimingReport};
pub use nn::{Mode, NetworkGraph, ParamSet};
