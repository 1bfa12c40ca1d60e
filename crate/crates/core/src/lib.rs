//! Semi-supervised graph imbalanced regression.
//!
//! A rationale/environment graph regressor is trained by self-training on an
//! imbalanced labeled set. Each round adds confidently pseudo-labeled graphs,
//! reverse-sampled toward rare label ranges, and latent examples mixed toward
//! interval label anchors.

pub mod binning;
pub mod confidence;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod mixup;
pub mod model;
pub mod nn;
pub mod pseudo;
pub mod rng;
pub mod selftrain;

pub use error::{Error, Result};
