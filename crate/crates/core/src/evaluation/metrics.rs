use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ConditionalSampler;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::world::{ConceptId, ConceptWorld};

pub const DEFAULT_ETA: f64 = 1e-8;

/// `2·a·b / (a + b + η)` for percentages `a`, `b`.
pub fn erb(a_er: f64, a_adj: f64, eta: f64) -> Result<f64> {
    for (name, v) in [("erasing accuracy", a_er), ("adjacency accuracy", a_adj)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::contract(format!("{name} {v} outside [0, 100]")));
        }
    }
    if !(eta > 0.0) {
        return Err(Error::contract("eta must be positive"));
    }
    Ok(2.0 * a_er * a_adj / (a_er + a_adj + eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples_per_concept: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples_per_concept: 500,
            eta: DEFAULT_ETA,
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if self.samples_per_concept < 100 {
            return Err(Error::contract(format!(
                "need at least 100 samples per concept, got {}",
                self.samples_per_concept
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::contract("eta must be positive"));
        }
        Ok(())
    }

    /// Seed of the sampling chain for one concept. The same concept gets
    /// the same noise under every model, so comparisons are paired.
    pub fn concept_seed(&self, c: ConceptId) -> u64 {
        derive_seed(self.seed, c.0 as u64)
    }
}

/// Percentage of `c`-conditioned samples classified as `c`.
pub fn concept_accuracy(
    sampler: &dyn ConditionalSampler,
    world: &ConceptWorld,
    c: ConceptId,
    n: usize,
    seed: u64,
) -> Result<f64> {
    world.concept(c)?;
    let points = sampler.sample_concept(c, n, seed)?;
    let labels = world.bayes_labels(&points)?;
    Ok(100.0 * labels.iter().filter(|&&l| l == c).count() as f64 / n.max(1) as f64)
}

/// Percentage of target-conditioned samples NOT classified as the target.
pub fn erasing_accuracy(
    sampler: &dyn ConditionalSampler,
    world: &ConceptWorld,
    target: ConceptId,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 100 {
        return Err(Error::contract(format!("need at least 100 samples, got {n}")));
    }
    Ok(100.0 - concept_accuracy(sampler, world, target, n, seed)?)
}

/// Accuracy for each concept (in parallel) with per-concept seeds.
pub fn accuracies(
    sampler: &dyn ConditionalSampler,
    world: &ConceptWorld,
    concepts: &[ConceptId],
    config: &EvalConfig,
) -> Result<Vec<(ConceptId, f64)>> {
    concepts
        .par_iter()
        .map(|&c| {
            let acc = concept_accuracy(sampler, world, c, config.samples_per_concept, config.concept_seed(c))?;
            Ok((c, acc))
        })
        .collect()
}

/// Per-neighbour accuracy and its mean.
pub fn adjacency_accuracy(
    sampler: &dyn ConditionalSampler,
    world: &ConceptWorld,
    adjacency: &[ConceptId],
    config: &EvalConfig,
) -> Result<(Vec<(ConceptId, f64)>, f64)> {
    if adjacency.is_empty() {
        return Err(Error::contract("adjacency set is empty"));
    }
    let per = accuracies(sampler, world, adjacency, config)?;
    let mean = per.iter().map(|(_, a)| a).sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErbReport {
    pub model: String,
    pub target: ConceptId,
    pub a_er: f64,
    pub per_neighbor_acc: Vec<(ConceptId, f64)>,
    pub a_adj_mean: f64,
    pub erb: f64,
    pub eta: f64,
    pub samples_per_concept: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ErbReport {
    /// Rechecks the score and range invariants.
    pub fn check(&self) -> Result<()> {
        let expected = erb(self.a_er, self.a_adj_mean, self.eta)?;
        if (expected - self.erb).abs() > 1e-9 {
            return Err(Error::contract("ERB does not match its inputs"));
        }
        Ok(())
    }
}

/// Accuracy of one retained concept under both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetainRow {
    pub concept: ConceptId,
    pub base_accuracy: f64,
    pub unlearned_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub baseline: ErbReport,
    pub unlearned: ErbReport,
    pub retain: Vec<RetainRow>,
}

impl EvaluationReport {
    /// CSV `model,a_er,a_adj_mean,erb`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "a_er", "a_adj_mean", "erb"])?;
        for r in [&self.baseline, &self.unlearned] {
            w.write_record([r.model.clone(), format!("{:?}", r.a_er), format!("{:?}", r.a_adj_mean), format!("{:?}", r.erb)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `model,concept_id,accuracy` over the adjacency set.
    pub fn write_neighbors_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "concept_id", "accuracy"])?;
        for r in [&self.baseline, &self.unlearned] {
            for (c, a) in &r.per_neighbor_acc {
                w.write_record([r.model.clone(), c.to_string(), format!("{a:?}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `concept_id,base_accuracy,unlearned_accuracy`.
    pub fn write_retain_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["concept_id", "base_accuracy", "unlearned_accuracy"])?;
        for r in &self.retain {
            w.write_record([r.concept.to_string(), format!("{:?}", r.base_accuracy), format!("{:?}", r.unlearned_accuracy)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn config_hash(config: &EvalConfig, target: ConceptId, adjacency: &[ConceptId], retain: &[ConceptId]) -> Result<String> {
    let text = serde_json::to_string(&(config, target, adjacency, retain))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Erasure and adjacency scores of one model.
pub fn erb_report(
    tag: &str,
    sampler: &dyn ConditionalSampler,
    world: &ConceptWorld,
    target: ConceptId,
    adjacency: &[ConceptId],
    config: &EvalConfig,
) -> Result<ErbReport> {
    config.validate()?;
    let a_er = erasing_accuracy(sampler, world, target, config.samples_per_concept, config.concept_seed(target))?;
    let (per, mean) = adjacency_accuracy(sampler, world, adjacency, config)?;
    Ok(ErbReport {
        model: tag.to_string(),
        target,
        a_er,
        per_neighbor_acc: per,
        a_adj_mean: mean,
        erb: erb(a_er, mean, config.eta)?,
        eta: config.eta,
        samples_per_concept: config.samples_per_concept,
        seed: config.seed,
        config_hash: config_hash(config, target, adjacency, &[])?,
    })
}

/// Full comparison of a base and an unlearned model: both ERB reports and
/// per-concept accuracy over the retain set.
pub fn evaluate(
    base: &dyn ConditionalSampler,
    unlearned: &dyn ConditionalSampler,
    world: &ConceptWorld,
    target: ConceptId,
    adjacency: &[ConceptId],
    retain: &[ConceptId],
    config: &EvalConfig,
) -> Result<EvaluationReport> {
    if let Some(c) = retain.iter().find(|c| adjacency.contains(c) || **c == target) {
        return Err(Error::contract(format!("retain concept {c} overlaps the target or adjacency set")));
    }
    let hash = config_hash(config, target, adjacency, retain)?;
    let mut baseline = erb_report("base", base, world, target, adjacency, config)?;
    let mut after = erb_report("unlearned", unlearned, world, target, adjacency, config)?;
    baseline.config_hash.clone_from(&hash);
    after.config_hash = hash;
    let before = accuracies(base, world, retain, config)?;
    let now = accuracies(unlearned, world, retain, config)?;
    let retain = before
        .into_iter()
        .zip(now)
        .map(|((c, b), (_, u))| RetainRow {
            concept: c,
            base_accuracy: b,
            unlearned_accuracy: u,
        })
        .collect();
    Ok(EvaluationReport {
        baseline,
        unlearned: after,
        retain,
    })
}
