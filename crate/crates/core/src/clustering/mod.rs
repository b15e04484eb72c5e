//! Pseudo-labeling cascade: mini-batch k-means compresses the embeddings,
//! agglomerative clustering groups the centers into pseudo-speakers, and
//! small pseudo-speakers are filtered out.

mod ahc;
mod kmeans;
mod labels;

pub use ahc::{ahc, Linkage};
pub use kmeans::{minibatch_kmeans, KMeansModel, KMeansParams};
pub use labels::{
    compose_pseudo_labels, filter_min_count, label_purity, read_pseudo_labels, removed_sidecar, write_pseudo_labels,
    PseudoLabelSet,
};

use crate::corpus::EmbeddingSet;
use crate::error::Result;

/// Cascade settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeParams {
    pub kmeans: KMeansParams,
    pub n_clusters: usize,
    pub min_count: usize,
    pub linkage: Linkage,
}

/// k-means, AHC over the centers, composition and filtering.
pub fn cluster_cascade(set: &EmbeddingSet, params: &CascadeParams) -> Result<(KMeansModel, PseudoLabelSet)> {
    let km = minibatch_kmeans(set, &params.kmeans)?;
    let center_labels = ahc(&km.centers, km.dim, params.n_clusters, params.linkage)?;
    let composed = compose_pseudo_labels(&km, &center_labels)?;
    let filtered = filter_min_count(&composed, params.min_count)?;
    Ok((km, filtered))
}
