use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{erb_report, EvalConfig};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::fade::{unlearn, FadeConfig, LossToggles, UnlearnOutcome};
use crate::neighborhood::AdjacencySet;
use crate::world::ConceptWorld;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub a_er: f64,
    pub a_adj: f64,
    pub erb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub toggles: LossToggles,
    pub runs: Vec<SeedScore>,
    pub mean_a_er: f64,
    pub mean_a_adj: f64,
    pub mean_erb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// The row with every loss enabled.
    pub fn full(&self) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.toggles == LossToggles::ALL)
    }

    /// CSV `guidance,erasing,adjacency,a_er,a_adj,erb` with seed means.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["guidance", "erasing", "adjacency", "a_er", "a_adj", "erb"])?;
        for r in &self.rows {
            w.write_record([
                r.toggles.guidance.to_string(),
                r.toggles.erasing.to_string(),
                r.toggles.adjacency.to_string(),
                format!("{:?}", r.mean_a_er),
                format!("{:?}", r.mean_a_adj),
                format!("{:?}", r.mean_erb),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One unlearning run with the given loss toggles and seed.
pub fn run_variant(
    base: &NoisePredictor,
    world: &ConceptWorld,
    adjacency: &AdjacencySet,
    template: &FadeConfig,
    toggles: LossToggles,
    seed: u64,
) -> Result<UnlearnOutcome> {
    let mut hyper = template.hyper;
    hyper.toggles = toggles;
    hyper.seed = seed;
    unlearn(base, world, &FadeConfig::new(adjacency.clone(), hyper)?)
}

/// Runs and scores every toggle row for every seed. Runs execute in
/// parallel; each has its own seed, so the table does not depend on
/// scheduling.
pub fn ablation_run(
    base: &NoisePredictor,
    world: &ConceptWorld,
    template: &FadeConfig,
    seeds: &[u64],
    eval: &EvalConfig,
) -> Result<AblationTable> {
    ablation_run_with(base, world, template, seeds, eval, |_, _, _| Ok(()))
}

/// As [`ablation_run`], handing every trained model to `inspect` before it
/// is dropped.
pub fn ablation_run_with<F>(
    base: &NoisePredictor,
    world: &ConceptWorld,
    template: &FadeConfig,
    seeds: &[u64],
    eval: &EvalConfig,
    inspect: F,
) -> Result<AblationTable>
where
    F: Fn(LossToggles, u64, &UnlearnOutcome) -> Result<()> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let jobs: Vec<(LossToggles, u64)> = LossToggles::ablation_rows()
        .into_iter()
        .flat_map(|t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let ids = template.neighbours();
    let scores: Vec<SeedScore> = jobs
        .par_iter()
        .map(|&(toggles, seed)| {
            let out = run_variant(base, world, &template.adjacency, template, toggles, seed)?;
            inspect(toggles, seed, &out)?;
            let r = erb_report("variant", &out.model, world, template.target, &ids, eval)?;
            Ok(SeedScore {
                seed,
                a_er: r.a_er,
                a_adj: r.a_adj_mean,
                erb: r.erb,
            })
        })
        .collect::<Result<_>>()?;
    let rows = LossToggles::ablation_rows()
        .iter()
        .zip(scores.chunks(seeds.len()))
        .map(|(&toggles, runs)| {
            let mean = |f: fn(&SeedScore) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
            AblationRow {
                toggles,
                runs: runs.to_vec(),
                mean_a_er: mean(|s| s.a_er),
                mean_a_adj: mean(|s| s.a_adj),
                mean_erb: mean(|s| s.erb),
            }
        })
        .collect();
    Ok(AblationTable { rows })
}
