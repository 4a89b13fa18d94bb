//! Cluster-level and feature-level matching of hyperfeature maps.

pub mod cluster_match;
pub mod fundamental;
pub mod kmeans;
pub mod matching;
pub mod refine;

pub use cluster_match::{match_clusters, ransac_filter, ClusterMatch, ClusterPair, EpipolarCheck};
pub use kmeans::{kmeans, ClusterAssignment};
pub use matching::{
    cluster_mean_positions, match_all, match_within_clusters, Correspondence, CorrespondenceSet,
};
pub use refine::subpixel_refine;

/// Cosine similarity; zero when either vector vanishes.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let den = (na * nb).sqrt();
    if den <= 1e-24 {
        0.0
    } else {
        (dot / den).clamp(-1.0, 1.0)
    }
}
