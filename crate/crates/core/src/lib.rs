//! Networks of deep neural networks for distant speech recognition.
//!
//! Speech-enhancement (SE) and speech-recognition (SR) feed-forward networks
//! are unrolled into an L-level graph and trained jointly: each network
//! receives its own loss gradient plus a λ-weighted gradient back-propagated
//! from the networks one level above.

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod mlp;
pub mod netgraph;
pub mod numeric;
pub mod systems;
pub mod trainer;

pub use error::{Error, Result};
