//! Federated submodel learning with layer-wise optimal-transport pruning,
//! pruning-rate-scaled proximal regularization and transport-aligned
//! aggregation, simulated in a single deterministic process.

pub mod alignment;
pub mod data;
pub mod error;
pub mod federation;
pub mod linalg;
pub mod nn;
pub mod ot;
pub mod sar;
pub mod seeds;

pub use error::{Error, Result};
