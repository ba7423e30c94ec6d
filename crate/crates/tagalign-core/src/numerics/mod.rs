//! Minimal dense-tensor substrate: graph with reverse-mode autodiff,
//! finite-difference gradient checking and the checkpoint container format.

pub mod container;
pub mod gradcheck;
pub mod graph;
pub mod scalar;

pub use container::{read_container, write_container, ContainerError, NamedTensor};
pub use gradcheck::{gradcheck, GradCheckParam, GradCheckReport};
pub use graph::{Graph, TensorId};
pub use scalar::Scalar;
