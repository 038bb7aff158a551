//! Dense-matrix math with reverse-mode gradients.
//!
//! Everything the model trains with lives here: a [`Tape`] that records
//! primitive operations during the forward pass and replays them backwards
//! for gradients, the neural primitives (matrix products, the split
//! ReLU/identity nonlinearity, spatial batch normalization, row softmax,
//! cross-entropy), and the Adamax update rule.
//!
//! All values are 64-bit; gradient correctness is held to tight central
//! finite-difference checks (see [`gradcheck`]), which reduced precision
//! would not survive.

mod adamax;
pub mod gradcheck;
mod tape;

pub use adamax::{AdamaxConfig, AdamaxState};
pub use tape::{row_softmax_mat, Gradients, NodeId, Tape, Tensor};
