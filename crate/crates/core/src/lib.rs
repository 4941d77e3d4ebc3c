//! Streaming speech recognition engine built around a selective state-space
//! encoder and unimodal aggregation of frame embeddings.
//!
//! The pipeline runs strictly left to right: log-mel features are subsampled
//! by a causal convolutional frontend, encoded by a stack of gated
//! state-space blocks, passed through a short non-causal lookahead
//! convolution, and scored by a per-frame aggregation weight. Weight valleys
//! close text-unit segments; each closed segment is aggregated into a single
//! embedding and decoded incrementally by a causal attention decoder. Weight
//! peaks optionally trigger speculative early decoding so tokens can be
//! emitted before their segment ends.
//!
//! Every stage has an offline (whole-sequence) form that computes the same
//! arithmetic as the streaming form; the test suites hold the two paths
//! together, along with brute-force oracles for the segmentation, loss, and
//! latency rules.

pub mod bench;
pub mod ctc;
pub mod decoder;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod frontend;
pub mod latency;
pub mod lookahead;
mod math;
pub mod oracle;
pub mod selftest;
pub mod ssm;
pub mod uma;
pub mod weights;

pub use error::PipelineError;
pub use weights::{ModelConfig, TensorBundle};
