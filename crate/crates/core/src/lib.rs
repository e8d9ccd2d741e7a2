//! Synthetic speech detection from speaker and prosody embeddings.
//!
//! The pipeline loads audio, computes MFCC and log-mel front-ends, runs two
//! embedding extractors, concatenates and standardizes the embeddings, and
//! classifies them with a kernel SVM trained by SMO.

pub mod audio;
pub mod classifier;
pub mod dataset;
pub mod dsp;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod label;
pub mod metrics;
pub mod pipeline;
pub mod svg;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use label::Label;
