//! Minimal reverse-mode differentiation over a flat `f64` parameter array.
//!
//! A [`Tape`] records vector-valued primitives that read named slices of a
//! [`ParameterVector`]. The recorded graph does not depend on parameter
//! values, so one tape can be evaluated at many parameter points; the
//! finite-difference oracle relies on that.

mod gradcheck;
mod optim;
mod params;
mod tape;

pub use gradcheck::finite_diff_check;
pub use optim::{apply_update, AdamState, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub(crate) use params::fnv1a;
pub use params::{Gradient, ParameterLayout, ParameterVector, SliceId, SliceSpec};
pub use tape::{Tape, Var};
