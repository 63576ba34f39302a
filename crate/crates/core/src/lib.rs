//! Desk-scale split-federated learning simulator.
//!
//! Clients hold the front and back ends of a U-shaped segmentation network;
//! a trunk server holds the middle. Local training exchanges activations and
//! gradients across the split boundary, and a global model is re-assembled
//! each round by one of several averaging strategies, including a
//! quality-aware scheme that down-weights clients with suspiciously high
//! per-sample losses (e.g. from corrupted annotations).

pub mod aggregation;
pub mod dataset;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod numerics;
pub mod params;
pub mod rng;
pub mod split;
pub mod tensor;
pub mod transport;
pub mod unet;

pub use error::{Result, SplitFedError};
