//! Command-line harness: run configuration, checkpoints and the `train`,
//! `eval`, `bench`, `shapes` and `prestudy` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{ConfigArgs, RunConfig};
