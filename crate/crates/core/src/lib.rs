//! Minimal-effort back propagation (meProp), model simplification and
//! per-example active paths for small feed-forward and LSTM networks.

pub mod error;
pub mod harness;
pub mod layers;
pub mod numerics;
pub mod activator;
pub mod checkpoint;
pub mod dataio;
pub mod optimizer;
pub mod simplifier;
pub mod trainer;

pub use error::{Error, Result};
