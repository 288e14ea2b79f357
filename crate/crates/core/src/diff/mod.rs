//! Dense `f64` tensors with a reverse-mode tape, Adam and a central
//! difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::Adam;
pub use gradcheck::{check_graph, grad_check, GradCheckReport};
pub use graph::{ConvGeom, Graph, Var};
pub use params::{accumulate_grads, Binding, ParamId, ParamStore};
pub use tensor::Tensor;
