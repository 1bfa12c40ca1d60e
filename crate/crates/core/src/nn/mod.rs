//! Dense tensors, reverse-mode differentiation, MLP/GIN layers and Adam.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::ParamCheckpoint;
pub use layers::{dropout_forward, Activation, Bound, Dropout, Gin, Linear, Mlp, ParamId, ParamSet, Topology};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
