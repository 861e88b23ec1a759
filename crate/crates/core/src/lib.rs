//! Language self-play on a verifiable token world.
//!
//! One small autoregressive policy plays both roles of a two-player game:
//! conditioned on the reserved challenger token it writes queries, and
//! conditioned on a query it writes answers. Both roles are trained together
//! with group-relative policy gradients, a KL anchor to a frozen reference and,
//! in the full variant, a rubric-based quality reward that breaks the zero-sum
//! structure of the game.
//!
//! Module map:
//!
//! * [`vocab`], [`sequence`], [`batch`], [`config`], [`rng`]: shared data types
//! * [`autodiff`]: reverse-mode tape, optimizer and finite-difference oracle
//! * [`policy`]: the windowed MLP policy, reference snapshots and checkpoints
//! * [`task`]: query grammar, task reward, quality rubric and datasets
//! * [`objective`]: advantages, KL estimate and the two losses
//! * [`trainer`]: the training loop for self-play and the data-driven baseline
//! * [`harness`]: win-rate evaluation, curve export and the command line

pub mod autodiff;
pub mod batch;
pub mod config;
pub mod error;
pub mod exec;
pub mod harness;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod sequence;
pub mod task;
#[cfg(test)]
mod testutil;
pub mod trainer;
pub mod vocab;

pub use error::{LspError, Result};
