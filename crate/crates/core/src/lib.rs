//! Fault diagnosis on power-distribution feeders with graph convolutional
//! networks: a small autodiff engine, graph utilities, a synthetic fault
//! generator, the ANN and CGCN classifiers, transfer-learning training and
//! evaluation reports.

mod codec;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Mode, Tape, Tensor, Var};
