//! Dense 64-bit linear algebra and seeded random streams.
//!
//! Everything above this module works on row-major [`Matrix`] values where
//! rows are samples of a minibatch and columns are features.

mod matrix;
mod rng;

pub use matrix::{matmul, row_stats, Matrix};
pub use rng::{gaussian, glorot_init, RngStream};
