use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::Embedder;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::world::ConceptId;

/// Arithmetic mean of the embeddings of `samples`.
pub fn mean_embedding(embedder: &Embedder, samples: &Tensor2) -> Result<Vec<f64>> {
    if samples.rows() == 0 {
        return Err(Error::contract("mean embedding of an empty sample set"));
    }
    let e = embedder.embed(samples)?;
    let mut mean = vec![0.0; e.cols()];
    for row in e.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = e.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// `⟨u,v⟩ / (‖u‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "cosine_similarity",
            left: (1, u.len()),
            right: (1, v.len()),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::Degenerate(
            "cosine similarity of a zero or non-finite vector".into(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Mean embedding per concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub entries: Vec<(ConceptId, Vec<f64>)>,
}

impl EmbeddingTable {
    /// One mean embedding per `(concept, samples)` pair.
    pub fn from_samples<'a, I>(embedder: &Embedder, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ConceptId, &'a Tensor2)>,
    {
        let entries = samples
            .into_iter()
            .map(|(c, s)| Ok((c, mean_embedding(embedder, s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, id: ConceptId) -> Result<&[f64]> {
        self.entries
            .iter()
            .find(|(c, _)| *c == id)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Lookup {
                kind: "concept embedding",
                id: id.to_string(),
            })
    }

    /// Similarity of `target` to every other concept, in table order.
    pub fn similarities_to(&self, target: ConceptId) -> Result<Vec<(ConceptId, f64)>> {
        let t = self.get(target)?;
        self.entries
            .iter()
            .filter(|(c, _)| *c != target)
            .map(|(c, v)| Ok((*c, cosine_similarity(t, v)?)))
            .collect()
    }

    /// Every concept scaled by a positive factor (used by invariance tests).
    pub fn rescaled(&self, factor: impl Fn(ConceptId) -> f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(c, v)| (*c, v.iter().map(|x| x * factor(*c)).collect()))
                .collect(),
        }
    }
}

/// Orders by similarity (descending), then key (ascending).
fn by_similarity<K: Ord>(a: &(K, f64), b: &(K, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// The `k` highest-scoring entries, ties broken by the smaller key.
pub fn select_top_k<K: Ord + Clone>(scored: &[(K, f64)], k: usize) -> Result<Vec<(K, f64)>> {
    if k > scored.len() {
        return Err(Error::config(format!(
            "asked for {k} neighbours but only {} candidates exist",
            scored.len()
        )));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(by_similarity);
    sorted.truncate(k);
    Ok(sorted)
}

/// Top-K most similar concepts to a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencySet {
    pub target: ConceptId,
    pub neighbors: Vec<(ConceptId, f64)>,
}

impl AdjacencySet {
    /// Validates the ordering/exclusion invariants.
    pub fn new(target: ConceptId, neighbors: Vec<(ConceptId, f64)>) -> Result<Self> {
        if neighbors.iter().any(|(c, _)| *c == target) {
            return Err(Error::contract("adjacency set contains its own target"));
        }
        if neighbors.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::contract("adjacency set is not sorted by similarity"));
        }
        if neighbors.iter().any(|(_, s)| !(-1.0..=1.0).contains(s)) {
            return Err(Error::contract("similarity outside [-1, 1]"));
        }
        Ok(Self { target, neighbors })
    }

    pub fn k(&self) -> usize {
        self.neighbors.len()
    }

    pub fn ids(&self) -> Vec<ConceptId> {
        self.neighbors.iter().map(|(c, _)| *c).collect()
    }

    pub fn contains(&self, id: ConceptId) -> bool {
        self.neighbors.iter().any(|(c, _)| *c == id)
    }

    /// CSV `rank,concept_id,similarity` with ranks from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_similarity_csv(writer, &self.neighbors)
    }
}

pub(crate) fn write_similarity_csv<W: Write>(writer: W, rows: &[(ConceptId, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "concept_id", "similarity"])?;
    for (i, (c, s)) in rows.iter().enumerate() {
        w.write_record([(i + 1).to_string(), c.to_string(), format!("{s:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Concept Neighborhood: the `k` concepts whose mean embeddings are most
/// cosine-similar to the target's.
pub fn build_adjacency(table: &EmbeddingTable, target: ConceptId, k: usize) -> Result<AdjacencySet> {
    if k == 0 {
        return Err(Error::config("adjacency size K must be at least 1"));
    }
    let sims = table.similarities_to(target)?;
    AdjacencySet::new(target, select_top_k(&sims, k)?)
}

/// Similarities of every other concept to `target`, best first.
pub fn similarity_ranking(table: &EmbeddingTable, target: ConceptId) -> Result<Vec<(ConceptId, f64)>> {
    let sims = table.similarities_to(target)?;
    let n = sims.len();
    select_top_k(&sims, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mean_embedding_edge_cases() {
        let e = Embedder::raw(2).unwrap();
        let one = Tensor2::from_rows(&[[1.5, -2.0]]).unwrap();
        assert_eq!(mean_embedding(&e, &one).unwrap(), vec![1.5, -2.0]);
        let pm = Tensor2::from_rows(&[[1.5, -2.0], [-1.5, 2.0]]).unwrap();
        assert_eq!(mean_embedding(&e, &pm).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            mean_embedding(&e, &Tensor2::zeros(0, 2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dog_breed_scores_pick_the_first_five_in_order() {
        let scored: Vec<(&str, f64)> = vec![
            ("Blenheim Spaniel", 93.05),
            ("Cocker Spaniel", 95.10),
            ("English Setter", 95.12),
            ("Brittany Spaniel", 98.19),
            ("Sussex Spaniel", 93.62),
            ("English Springer", 97.05),
        ];
        let top: Vec<&str> = select_top_k(&scored, 5)
            .unwrap()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(
            top,
            [
                "Brittany Spaniel",
                "English Springer",
                "English Setter",
                "Cocker Spaniel",
                "Sussex Spaniel"
            ]
        );
    }

    #[test]
    fn two_concepts_k1_returns_the_other() {
        let table = EmbeddingTable {
            entries: vec![(ConceptId(0), vec![1.0, 0.0]), (ConceptId(1), vec![0.3, 0.7])],
        };
        let adj = build_adjacency(&table, ConceptId(0), 1).unwrap();
        assert_eq!(adj.ids(), vec![ConceptId(1)]);
        assert!(matches!(
            build_adjacency(&table, ConceptId(0), 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ties_go_to_the_lowest_id() {
        let table = EmbeddingTable {
            entries: vec![
                (ConceptId(0), vec![1.0, 0.0]),
                (ConceptId(3), vec![1.0, 1.0]),
                (ConceptId(2), vec![1.0, -1.0]),
            ],
        };
        let adj = build_adjacency(&table, ConceptId(0), 1).unwrap();
        assert_eq!(adj.ids(), vec![ConceptId(2)]);
    }

    #[test]
    fn csv_layout() {
        let adj = AdjacencySet::new(ConceptId(0), vec![(ConceptId(4), 0.5), (ConceptId(2), 0.25)]).unwrap();
        let mut buf = Vec::new();
        adj.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "rank,concept_id,similarity\n1,4,0.5\n2,2,0.25\n"
        );
    }
}
