//! Hybrid-grained learned product quantization for cross-view retrieval.
//!
//! Queries and database items are each embedded at one coarse level and `L`
//! fine levels (soft cluster residuals). Every level has its own product
//! quantizer, shared by both views and trained jointly with the encoders by an
//! asymmetric contrastive loss. Items are stored as hard codes and searched with
//! per-query lookup tables.

mod binio;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod features;
pub mod frontend;
pub mod ghostvlad;
pub mod index;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod quantizer;
pub mod synth;
pub mod train;

pub use config::EngineConfig;
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{HardCode, HybridEmbedding, Level, LevelEmbedding, TokenBag, View};
pub use params::{init_parameters, ParameterSet, Trainable};
