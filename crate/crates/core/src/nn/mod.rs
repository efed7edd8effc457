//! Coordinate networks: positional encoding, residual MLP, hand-written
//! backpropagation and Adam. All training arithmetic is f64.

mod adam;
mod encoding;
pub mod layers;
mod matrix;
mod model;

pub use adam::{adam_step, OptimizerState};
pub use encoding::{encode_batch, encoded_width, normalize_coordinate, positional_encode};
pub use layers::{Dense, DenseGrad};
pub use matrix::Matrix;
pub use model::{param_count, ForwardCache, Gradients, NetworkConfig, NetworkModel, NnError};
