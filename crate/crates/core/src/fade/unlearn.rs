use std::io::Write;

use rand::Rng;

use super::config::FadeConfig;
use super::losses::{record_fade_terms, FadeBatch, LossBreakdown};
use crate::diffusion::{forward_noise_batch, gaussian, uniform_steps, NoisePredictor};
use crate::error::{Error, Result};
use crate::mesh::{self, checksum};
use crate::numerics::{AdamState, AdamW, Tape, Tensor2};
use crate::rng::{derive_seed, rng_from_seed, LabRng};
use crate::world::{ConceptWorld, DatasetSplit, LabeledSamples};

/// Result of an unlearning run.
#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    /// Base weights plus the trained adapters.
    pub model: NoisePredictor,
    pub trace: Vec<LossBreakdown>,
}

/// CSV `iteration,l_er,l_guid,l_adj,l_total`, iterations from 1.
pub fn write_trace_csv<W: Write>(trace: &[LossBreakdown], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "l_er", "l_guid", "l_adj", "l_total"])?;
    for b in trace {
        w.write_record([
            b.iteration.to_string(),
            format!("{:?}", b.l_er),
            format!("{:?}", b.l_guid),
            format!("{:?}", b.l_adj),
            format!("{:?}", b.l_total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn pick_rows(rng: &mut LabRng, from: &LabeledSamples, count: usize) -> (Tensor2, Vec<crate::world::ConceptId>) {
    let idx: Vec<usize> = (0..count).map(|_| rng.random_range(0..from.len())).collect();
    let points = from.points.gather_rows(&idx).expect("indices in range");
    (points, idx.iter().map(|&i| from.labels[i]).collect())
}

/// Draws a fresh batch of noised latents from the splits.
pub fn draw_batch(model: &NoisePredictor, split: &DatasetSplit, batch: usize, rng: &mut LabRng) -> Result<FadeBatch> {
    let steps = model.schedule().steps();
    let n = model.config().data_dim;
    let (xu, _) = pick_rows(rng, &split.unlearn, batch);
    let tu = uniform_steps(rng, batch, steps);
    let eu = gaussian(rng, batch, n);
    let (xa, la) = if split.adjacency.is_empty() {
        (Tensor2::zeros(0, n), Vec::new())
    } else {
        pick_rows(rng, &split.adjacency, batch)
    };
    let ta = uniform_steps(rng, xa.rows(), steps);
    let ea = gaussian(rng, xa.rows(), n);
    Ok(FadeBatch {
        unlearn: forward_noise_batch(model.schedule(), &model.to_model_space(&xu), &tu, &eu)?,
        unlearn_t: tu,
        adjacent: forward_noise_batch(model.schedule(), &model.to_model_space(&xa), &ta, &ea)?,
        adjacent_t: ta,
        adjacent_labels: la,
    })
}

/// Samples the unlearning / adjacency / retain sets for a config.
pub fn build_splits(world: &ConceptWorld, config: &FadeConfig) -> Result<DatasetSplit> {
    world.make_splits(
        config.target,
        &config.neighbours(),
        config.hyper.samples_per_concept,
        derive_seed(config.hyper.seed, 0xDA7A),
    )
}

/// Attaches adapters to a copy of `base` and trains them on the weighted
/// objective. `base` itself is never modified.
pub fn unlearn(base: &NoisePredictor, world: &ConceptWorld, config: &FadeConfig) -> Result<UnlearnOutcome> {
    config.validate()?;
    if !base.adapters().is_empty() {
        return Err(Error::config("base model already carries adapters"));
    }
    let hyper = &config.hyper;
    let neighbours = config.neighbours();
    let split = build_splits(world, config)?;
    let base_sums: Vec<(String, String)> = base
        .params()
        .iter()
        .map(|(k, v)| (k.clone(), checksum(v)))
        .collect();

    let mut model = base.clone();
    let targets = model.adaptable_matrices();
    mesh::attach(&mut model, &targets, hyper.rank, derive_seed(hyper.seed, 0x4D45))?;
    let opt = AdamW {
        weight_decay: hyper.weight_decay,
        ..AdamW::with_lr(hyper.lr)
    };
    let mut state = AdamState::new(&model.adapters().params);
    let mut rng = rng_from_seed(derive_seed(hyper.seed, 0xFADE));
    let mut trace = Vec::with_capacity(hyper.iterations);

    for iteration in 0..hyper.iterations {
        let batch = draw_batch(&model, &split, hyper.batch, &mut rng)?;
        let mut tape = Tape::new();
        let terms = record_fade_terms(&mut tape, &model, base, &batch, config.target, &neighbours, hyper, iteration + 1)?;
        if !terms.breakdown.l_total.is_finite() {
            return Err(Error::TrainingFailure {
                step: iteration,
                reason: format!("unlearning loss became {}", terms.breakdown.l_total),
            });
        }
        trace.push(terms.breakdown);
        let grads = tape.backward(terms.total, &model.adapters().params)?;
        opt.step(&mut model.adapters_mut().params, &grads, &mut state)?;
    }

    model.adapters().verify_base(model.params())?;
    for (name, sum) in &base_sums {
        if checksum(model.params().require(name)?) != *sum {
            return Err(Error::Integrity(format!("base parameter {name} changed during unlearning")));
        }
    }
    Ok(UnlearnOutcome { model, trace })
}
