//! Reverse-mode differentiation over dense matrices, feedforward networks
//! and the Adam optimizer.

mod adam;
mod feedforward;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use feedforward::{Activation, EmbeddingDictionary, FeedForward, Input, Layer, PriorNet};
pub use graph::{Graph, NodeId};
pub use params::{Gradients, ParamStore};
pub use tensor::{init_uniform, SparseRows, Tensor};
