//! Concept Neighborhood construction and the k-NN / naive Bayes pair.
//!
//! Concepts are compared by the cosine similarity of their mean embeddings;
//! the top-K most similar concepts form the adjacency set of a target.

mod adjacency;
mod agreement;
mod classifiers;
mod embedder;

pub use adjacency::{
    build_adjacency, cosine_similarity, mean_embedding, select_top_k, similarity_ranking,
    AdjacencySet, EmbeddingTable,
};
pub use agreement::{
    metric_disagreement, single_class_world, stratified_sample, agreement_sweep, AgreementCurve,
    AgreementPoint, KRule, SweepConfig,
};
pub use classifiers::{knn_classify, ClassStats, GaussianNaiveBayes, KnnClassifier, Metric};
pub use embedder::{Embedder, PenultimateConfig, PenultimateEmbedder};

use crate::error::Result;
use crate::world::ConceptWorld;

/// Mean embeddings of `m` fresh world samples per concept.
pub fn world_embedding_table(
    world: &ConceptWorld,
    embedder: &Embedder,
    m: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let samples = world
        .concept_ids()
        .map(|c| Ok((c, world.sample(c, m, crate::rng::derive_seed(seed, c.0 as u64))?.points)))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::from_samples(embedder, samples.iter().map(|(c, p)| (*c, p)))
}
