//! Ranking-loss laboratory for next-item recommendation.
//!
//! The crate covers the full family of softmax-style recommendation losses
//! written as `−s₊ + log Z`, the probabilities with which sampled losses
//! upper-bound `−log NDCG` and `−log MRR`, and a small sequential
//! recommender (mean-pool or GRU encoder over a shared embedding table)
//! that is trained with any of those losses and evaluated by full-catalog
//! ranking.

pub mod bench;
pub mod bounds;
pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod sampling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
