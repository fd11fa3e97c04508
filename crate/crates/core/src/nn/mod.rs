//! Minimal differentiable tensor machinery used by every model branch.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{cross_entropy, Graph, Mode, Var, LOG_EPS};
pub use params::{he_normal, xavier_uniform, BnObservation, BufferId, BufferStore, Gradients, ParamId, ParamStore};
pub use tensor::{argmax, softmax, Tensor};
