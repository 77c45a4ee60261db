//! Streaming visual-token memory with a desk-scale embodied navigation harness.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod executor;
pub mod features;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod prompt;
pub mod streams;
pub mod world;

pub use error::{NavError, TokenError};
pub use features::{
    cosine_similarity, grid_pool, FeatureConfig, FeatureExtractor, FrameFeatures, PoolScale, TokenMatrix,
};
pub use memory::{MemoryState, MergeConfig};
