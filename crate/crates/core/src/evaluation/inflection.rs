use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracies, EvalConfig};
use crate::diffusion::ConditionalSampler;
use crate::error::{Error, Result};
use crate::neighborhood::{similarity_ranking, EmbeddingTable};
use crate::world::{ConceptId, ConceptWorld};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflectionPoint {
    pub bucket_low: f64,
    pub bucket_high: f64,
    pub mean_accuracy: f64,
    pub concepts: Vec<ConceptId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflectionCurve {
    pub model: String,
    pub target: ConceptId,
    /// Ordered from least to most similar.
    pub points: Vec<InflectionPoint>,
    /// Indices of requested buckets that received no concept.
    pub skipped: Vec<usize>,
}

impl InflectionCurve {
    /// Accuracy of the least-similar bucket minus that of the most-similar.
    pub fn gap(&self) -> Option<f64> {
        let low = self.points.first()?;
        let high = self.points.last()?;
        Some(low.mean_accuracy - high.mean_accuracy)
    }

    /// CSV `bucket_low,bucket_high,mean_accuracy`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bucket_low", "bucket_high", "mean_accuracy"])?;
        for p in &self.points {
            w.write_record([format!("{:?}", p.bucket_low), format!("{:?}", p.bucket_high), format!("{:?}", p.mean_accuracy)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits the non-target concepts into `buckets` equal-count groups by
/// ground-truth similarity to the target, least similar first. Groups that
/// would be empty are reported by index.
pub fn similarity_buckets(
    table: &EmbeddingTable,
    target: ConceptId,
    buckets: usize,
) -> Result<(Vec<Vec<(ConceptId, f64)>>, Vec<usize>)> {
    if buckets == 0 {
        return Err(Error::config("need at least one bucket"));
    }
    let mut ranked = similarity_ranking(table, target)?;
    ranked.reverse();
    let n = ranked.len();
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for b in 0..buckets {
        let (lo, hi) = (b * n / buckets, (b + 1) * n / buckets);
        if lo == hi {
            skipped.push(b);
        } else {
            groups.push(ranked[lo..hi].to_vec());
        }
    }
    Ok((groups, skipped))
}

/// Mean generation accuracy per similarity bucket.
pub fn inflection_sweep(
    tag: &str,
    sampler: &dyn ConditionalSampler,
    world: &ConceptWorld,
    table: &EmbeddingTable,
    target: ConceptId,
    buckets: usize,
    config: &EvalConfig,
) -> Result<InflectionCurve> {
    let (groups, skipped) = similarity_buckets(table, target, buckets)?;
    let all: Vec<ConceptId> = groups.iter().flatten().map(|(c, _)| *c).collect();
    let acc = accuracies(sampler, world, &all, config)?;
    let lookup = |c: ConceptId| acc.iter().find(|(k, _)| *k == c).map_or(0.0, |(_, a)| *a);
    let points = groups
        .iter()
        .map(|g| {
            let sims = g.iter().map(|(_, s)| *s);
            InflectionPoint {
                bucket_low: sims.clone().fold(f64::INFINITY, f64::min),
                bucket_high: sims.fold(f64::NEG_INFINITY, f64::max),
                mean_accuracy: g.iter().map(|(c, _)| lookup(*c)).sum::<f64>() / g.len() as f64,
                concepts: g.iter().map(|(c, _)| *c).collect(),
            }
        })
        .collect();
    Ok(InflectionCurve {
        model: tag.to_string(),
        target,
        points,
        skipped,
    })
}
