//! Dense tensors, reverse-mode differentiation, the layer operations the
//! networks use, the Adam optimizer and finite-difference verification.

pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use conv::Conv2dSpec;
pub use graph::{BatchStats, Graph, Var};
pub use optim::Adam;
pub use params::{Binding, Param, ParamStore};
pub use tensor::{Scalar, Tensor};
