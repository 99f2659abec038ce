//! Scalar-loss reverse-mode differentiation, the Adam optimizer, and a
//! finite-difference gradient oracle used as the correctness reference.

mod adam;
mod params;
mod tape;

pub use adam::{adam_step, AdamState};
pub use params::{
    evaluate, evaluate_with_gradients, finite_difference_gradient, max_relative_gap, GradientSet,
    ParamNodes, ParamSet,
};
pub use tape::{Gradients, NodeId, Tape};
