//! Span-to-semantic-unit alignment for AMR graphs from decoder-over-encoder
//! score matrices (cross-attention or saliency), with LEAMR/ISI formats,
//! evaluation metrics and the guided cross-attention loss.

pub mod error;
pub mod extract;
pub mod graph;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod rules;
pub mod segment;
pub mod tokens;

pub use error::{Error, Result};
