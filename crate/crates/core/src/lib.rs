//! Character-level text classification with a top-down semantic model.
//!
//! Words become sigmoid-bounded topic vectors through a small fully
//! convolutional network over character embeddings. A BiLSTM over those
//! vectors yields per-word attention weights and positional features; the
//! attention-weighted sum of topic vectors, concatenated with the BiLSTM
//! final states, feeds a residual classifier.
//!
//! The crate also carries the bag-of-words and TF-IDF linear baselines and
//! the small reverse-mode autodiff engine everything is built on.

pub mod baselines;
pub mod cli;
pub mod error;
pub mod tensor;
pub mod model;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Scalar, Tensor, Var};
