//! Offline catalog construction.
//!
//! Photos of a large collection are described by a semantic feature and
//! clustered with k-means. Within each cluster every photo votes for each
//! curated style in proportion to their style similarity, and the summed
//! votes give a per-cluster style ranking. The cluster centers, rankings and
//! style descriptors are persisted together as a [`StyleIndex`].

mod features;
mod index;
mod kmeans;
mod ranking;

use thiserror::Error;

pub use features::{
    builtin_semantic_feature, load_external_features, read_feature_file, write_feature_file, BuiltinFeatures,
    FeatureProvider, FixedFeature, SemanticFeature, FEATURE_FILE_VERSION, SEMANTIC_DIM,
};
pub use index::{fingerprint_of, load_index, save_index, IndexError, StyleIndex, INDEX_FORMAT_VERSION};
pub use kmeans::{assign_cluster, kmeans_cluster, kmeans_cluster_detailed, ClusterModel, KMeansReport};
pub use ranking::{build_ranking, RankedStyle, RankingTable, StyleEntry};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corrupt feature file {path}: {reason}")]
    CorruptFeatureFile { path: String, reason: String },
    #[error("no feature entry for {0}")]
    MissingEntry(String),
    #[error("cannot form {k} clusters from {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Similarity(#[from] crate::similarity::SimilarityError),
    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
