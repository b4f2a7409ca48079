//! Find out which convolutional filters act as semantic part detectors.
//!
//! The crate runs small linear-chain CNNs, turns feature-map maxima into
//! part detections, scores them against annotated parts, searches for the
//! filter combinations that detect each part best, and measures how much
//! filters and parts matter for classification.

pub mod bbox;
pub mod config;
pub mod corpus;
pub mod discrim;
pub mod error;
pub mod eval;
pub mod ga;
pub mod geometry;
pub mod manifest;
pub mod mask;
pub mod nn;
pub mod pipeline;
pub mod planted;
pub mod regression;
pub mod report;
pub mod stimulus;
pub mod tensor;
pub mod topk;

pub use error::{Error, Result};
