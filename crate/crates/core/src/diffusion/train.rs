use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{Condition, NoisePredictor, Trainable};
use super::schedule::forward_noise_batch;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, AdamW, Tape, Tensor2};
use crate::rng::{derive_seed, normal_vec, rng_from_seed, LabRng};
use crate::world::ConceptWorld;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    pub weight_decay: f64,
    /// Fraction of examples conditioned on the null token.
    pub null_fraction: f64,
    pub seed: u64,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch: 64,
            lr: 3e-3,
            cosine_decay: true,
            weight_decay: 0.0,
            null_fraction: 0.1,
            seed: 11,
        }
    }
}

/// Per-step training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub losses: Vec<f64>,
}

impl LossTrace {
    /// Mean of the first `window` losses.
    pub fn head_mean(&self, window: usize) -> f64 {
        let w = window.min(self.losses.len()).max(1);
        self.losses.iter().take(w).sum::<f64>() / w as f64
    }

    /// Mean of the last `window` losses.
    pub fn tail_mean(&self, window: usize) -> f64 {
        let w = window.min(self.losses.len()).max(1);
        self.losses.iter().rev().take(w).sum::<f64>() / w as f64
    }

    /// CSV `step,loss`, steps from 1.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "loss"])?;
        for (i, l) in self.losses.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{l:?}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `count` timesteps uniformly from `1..=steps`.
pub fn uniform_steps(rng: &mut LabRng, count: usize, steps: usize) -> Vec<usize> {
    (0..count).map(|_| rng.random_range(1..=steps)).collect()
}

/// Standard normal noise of the given shape.
pub fn gaussian(rng: &mut LabRng, rows: usize, cols: usize) -> Tensor2 {
    Tensor2::from_vec(rows, cols, normal_vec(rng, rows * cols)).expect("length matches shape")
}

/// Mean over rows of the squared Euclidean distance between two batches,
/// recorded on the tape.
pub(crate) fn mean_sq_dist(tape: &mut Tape, a: crate::numerics::Var, b: crate::numerics::Var) -> Result<crate::numerics::Var> {
    let diff = tape.sub(a, b)?;
    let norms = tape.row_sq_norms(diff);
    Ok(tape.mean(norms))
}

fn step_lr(config: &BaseTrainConfig, step: usize) -> f64 {
    if !config.cosine_decay {
        return config.lr;
    }
    let progress = step as f64 / config.steps as f64;
    config.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Fits the denoiser to world samples with the noise-prediction loss
/// `E‖ε − ε_θ(x_t, c, t)‖²`, `t` uniform over the chain.
pub fn train_base(model: &mut NoisePredictor, world: &ConceptWorld, config: &BaseTrainConfig) -> Result<LossTrace> {
    if config.steps == 0 || config.batch == 0 {
        return Err(Error::config("base training needs steps >= 1 and batch >= 1"));
    }
    if !(0.0..=1.0).contains(&config.null_fraction) {
        return Err(Error::config("null fraction must lie in [0, 1]"));
    }
    if model.config().concepts != world.len() || model.config().data_dim != world.dimension {
        return Err(Error::config("denoiser shape does not match the world"));
    }
    let opt = AdamW {
        weight_decay: config.weight_decay,
        ..AdamW::with_lr(config.lr)
    };
    opt.validate()?;
    let mut state = AdamState::new(model.params());
    let mut rng = rng_from_seed(derive_seed(config.seed, 0xBA5E));
    let steps = model.schedule().steps();
    let n = world.dimension;
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut x0 = Tensor2::zeros(config.batch, n);
        let mut conds = Vec::with_capacity(config.batch);
        for r in 0..config.batch {
            let c = world.draw_concept(&mut rng);
            let spec = &world.concepts[c.0];
            for (j, x) in x0.row_mut(r).iter_mut().enumerate() {
                *x = spec.mean[j] + spec.variance[j].sqrt() * crate::rng::standard_normal(&mut rng);
            }
            let null = rng.random::<f64>() < config.null_fraction;
            conds.push(if null { Condition::Null } else { Condition::Concept(c) });
        }
        let x0 = model.to_model_space(&x0);
        let t = uniform_steps(&mut rng, config.batch, steps);
        let eps = gaussian(&mut rng, config.batch, n);
        let x_t = forward_noise_batch(model.schedule(), &x0, &t, &eps)?;

        let mut tape = Tape::new();
        let pred = model.forward_tape(&mut tape, &x_t, &conds, &t, Trainable::Base)?;
        let target = tape.constant(eps);
        let loss = mean_sq_dist(&mut tape, pred, target)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::TrainingFailure {
                step,
                reason: format!("base loss became {value}"),
            });
        }
        losses.push(value);
        let grads = tape.backward(loss, model.params())?;
        let opt = AdamW {
            lr: step_lr(config, step),
            ..opt
        };
        opt.step(model.params_mut(), &grads, &mut state)?;
    }
    Ok(LossTrace { losses })
}
