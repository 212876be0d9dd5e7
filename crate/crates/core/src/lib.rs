//! Multimodal rating regression at desk scale: corpus cleaning, sampling and
//! splitting, a rating-count weighted Huber objective, a small dual-encoder
//! regressor, evaluation, an inference profiler and a data-scaling fit.

pub mod corpus;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod profiler;
pub mod rng;
pub mod sampling;
pub mod scaling;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
