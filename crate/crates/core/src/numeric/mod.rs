//! Dense float64 numerics with reverse-mode differentiation.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use nn::{scaled_attention, softmax, softmax_rows, Gru, Linear, Mlp2};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{ParameterStore, Tensor};
