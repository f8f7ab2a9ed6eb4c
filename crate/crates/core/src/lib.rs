//! Core library for a trainable dialogue-response evaluation metric.
//!
//! The metric couples a conditional variational autoencoder over
//! (context, response) pairs with a next-sentence-prediction head. At
//! scoring time, mutual-information estimates between the candidate and
//! both the context and the reference are fused with the coherence
//! probability into a single quality score, and utilities are provided for
//! building evaluation sets, aggregating human annotations, and reporting
//! correlation statistics.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{CmnError, Result};
