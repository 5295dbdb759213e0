//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are dense f32 arrays of rank <= 4 living on a [`Tape`]; every
//! reduction accumulates in f64. A tape is single-threaded; independent tapes
//! may run concurrently. [`Tape::forward_f64`] replays the recorded graph in
//! full f64 precision, which is what the finite-difference gradient checks
//! are built on.

mod graph;
mod optim;
mod shape;
mod store;
mod tape;

pub use graph::Graph;
pub use optim::{AdamW, CosineSchedule, StepStats};
pub use shape::{broadcast_shapes, Shape};
pub use store::{Param, ParamStore};
pub use tape::{Tape, TensorError, TensorId};
