//! Minimal dense-array compute layer with reverse-mode differentiation.
//!
//! The [`Tape`] executes primitives eagerly and records just enough to run
//! the backward pass in reverse topological order. One tape corresponds to
//! one forward/backward cycle; training rebuilds the tape every step.

mod array;
mod gradcheck;
mod optim;
mod store;
mod tape;


pub use array::Tensor;
pub use gradcheck::{gradcheck, GradcheckReport};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use store::ParameterStore;
pub use tape::{Tape, Var};
