//! Label-conditioned diffusion over skeleton motion, with the recognition
//! and metric tooling used to judge generated data.

pub mod checkpoint;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod protocol;
pub mod recognizer;
pub mod sampler;

pub use error::{Error, Result};
