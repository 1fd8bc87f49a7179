//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is a flat tape ([`Graph`]) of owned forward values plus
//! backward closures. It exists so a watermark detector's training signal can
//! be pushed back through spectral frontends, convolutions, and a
//! straight-through codec channel with `f64` accuracy; it is deliberately
//! small and has no notion of devices, broadcasting, or graphs that outlive
//! one optimization step.

pub mod check;
pub mod conv;
pub mod exec;
mod graph;
pub mod spectral;
mod tensor;

pub use conv::{Conv1dDims, Conv2dDims};
pub use graph::{Gradients, Graph, TensorId};
pub use tensor::Tensor;
