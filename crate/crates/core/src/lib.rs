//! Spectral hashing on a compressed anchor graph with orthogonality-constrained
//! training of a linear projection.

pub mod anchor_graph;
pub mod codes;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod optimizer;
pub mod par;
pub mod pipeline;

pub use codes::{hamming_distance, PackedCodes};
pub use dataset::{FeatureMatrix, LabelSet, StandardizationStats};
pub use encoder::{HashModel, QueryMode};
pub use error::{EshError, Result};
pub use optimizer::{Algorithm, Alpha, ProjectionMatrix, TrainConfig, TrainTrace};
