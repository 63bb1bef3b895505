use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::mesh::AdapterSet;
use crate::numerics::{silu, ParamSet, Tape, Tensor2, Var};
use crate::rng::{normal_vec, rng_from_seed};
use crate::world::{ConceptId, ConceptWorld};

/// Shape of the conditional noise predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub concepts: usize,
    pub time_dim: usize,
    pub concept_dim: usize,
    pub hidden: Vec<usize>,
}

impl DenoiserConfig {
    /// The default network for a given world: two SiLU layers of width 128.
    pub fn for_world(world: &ConceptWorld) -> Self {
        Self {
            data_dim: world.dimension,
            concepts: world.len(),
            time_dim: 8,
            concept_dim: 8,
            hidden: vec![128, 128],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.concepts == 0 || self.hidden.is_empty() {
            return Err(Error::config("denoiser needs data, concepts and at least one hidden layer"));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::config("time embedding dimension must be even and >= 2"));
        }
        if self.concept_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.data_dim + self.time_dim + self.concept_dim
    }
}

/// What the network is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Concept(ConceptId),
    Null,
}

impl From<ConceptId> for Condition {
    fn from(c: ConceptId) -> Self {
        Condition::Concept(c)
    }
}

/// Which tensors a tape forward pass registers as trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    /// Every base weight and bias.
    Base,
    /// Only the adapter factors; base weights enter as constants.
    Mesh,
}

pub const EMBED: &str = "embed";

pub fn hidden_weight(i: usize) -> String {
    format!("h{i}.w")
}

fn hidden_bias(i: usize) -> String {
    format!("h{i}.b")
}

const OUT_W: &str = "out.w";
const OUT_B: &str = "out.b";

/// Sinusoidal features of the timestep; `t` is stretched onto a 1000-step
/// clock so the frequencies do not depend on the chain length.
pub fn time_embedding(t: &[usize], dim: usize, steps: usize) -> Tensor2 {
    let half = dim / 2;
    let mut out = Tensor2::zeros(t.len(), dim);
    for (r, &step) in t.iter().enumerate() {
        let clock = step as f64 * 1000.0 / steps as f64;
        let row = out.row_mut(r);
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            row[i] = (clock * freq).sin();
            row[half + i] = (clock * freq).cos();
        }
    }
    out
}

/// `ε_θ(x_t, c, t)`: an MLP over `[x_t, time features, concept embedding]`.
///
/// Inputs and outputs live in the diffusion space, which is data space
/// divided by `data_scale`. Base weights may carry low-rank adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor {
    config: DenoiserConfig,
    schedule: NoiseSchedule,
    data_scale: f64,
    params: ParamSet,
    adapters: AdapterSet,
}

impl NoisePredictor {
    /// Fresh random weights. The embedding table has one row per concept and
    /// a final row for the null condition.
    pub fn new(config: DenoiserConfig, schedule: NoiseSchedule, data_scale: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(data_scale > 0.0 && data_scale.is_finite()) {
            return Err(Error::config("data scale must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut init = |rows: usize, cols: usize, std: f64| {
            Tensor2::from_vec(rows, cols, normal_vec(&mut rng, rows * cols)).map(|t| t.scale(std))
        };
        let mut params = ParamSet::new();
        params.insert(EMBED, init(config.concepts + 1, config.concept_dim, 1.0)?);
        let mut fan_in = config.input_dim();
        for (i, &width) in config.hidden.iter().enumerate() {
            params.insert(hidden_weight(i), init(fan_in, width, (1.0 / fan_in as f64).sqrt())?);
            params.insert(hidden_bias(i), Tensor2::zeros(1, width));
            fan_in = width;
        }
        params.insert(OUT_W, init(fan_in, config.data_dim, (1.0 / fan_in as f64).sqrt())?);
        params.insert(OUT_B, Tensor2::zeros(1, config.data_dim));
        Ok(Self {
            config,
            schedule,
            data_scale,
            params,
            adapters: AdapterSet::default(),
        })
    }

    pub(crate) fn from_parts(
        config: DenoiserConfig,
        schedule: NoiseSchedule,
        data_scale: f64,
        params: ParamSet,
    ) -> Result<Self> {
        let fresh = Self::new(config, schedule, data_scale, 0)?;
        fresh.params.check_same_layout(&params, "checkpoint parameters")?;
        Ok(Self { params, ..fresh })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn data_scale(&self) -> f64 {
        self.data_scale
    }

    /// Base weights `W₀`.
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable base weights, for training and fault injection. Changing a
    /// matrix that carries an adapter is caught by the checksum on detach.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn adapters(&self) -> &AdapterSet {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut AdapterSet {
        &mut self.adapters
    }

    pub(crate) fn replace_adapters(&mut self, adapters: AdapterSet) -> AdapterSet {
        std::mem::replace(&mut self.adapters, adapters)
    }

    /// Names of the base matrices that may carry adapters.
    pub fn adaptable_matrices(&self) -> Vec<String> {
        let mut names = vec![EMBED.to_string()];
        names.extend((0..self.config.hidden.len()).map(hidden_weight));
        names
    }

    /// Embedding-table row of a condition.
    pub fn condition_row(&self, c: Condition) -> Result<usize> {
        match c {
            Condition::Null => Ok(self.config.concepts),
            Condition::Concept(id) if id.0 < self.config.concepts => Ok(id.0),
            Condition::Concept(id) => Err(Error::Lookup {
                kind: "concept",
                id: id.to_string(),
            }),
        }
    }

    pub fn condition_rows(&self, conds: &[Condition]) -> Result<Vec<usize>> {
        conds.iter().map(|&c| self.condition_row(c)).collect()
    }

    /// Data space → diffusion space.
    pub fn to_model_space(&self, x: &Tensor2) -> Tensor2 {
        x.scale(1.0 / self.data_scale)
    }

    /// Diffusion space → data space.
    pub fn to_data_space(&self, x: &Tensor2) -> Tensor2 {
        x.scale(self.data_scale)
    }

    /// `W₀ + BA` for adapted matrices, `W₀` otherwise.
    pub fn effective_weight(&self, name: &str) -> Result<Cow<'_, Tensor2>> {
        let w0 = self.params.require(name)?;
        Ok(match self.adapters.effective(name, w0)? {
            Some(w) => Cow::Owned(w),
            None => Cow::Borrowed(w0),
        })
    }

    fn check_batch(&self, x_t: &Tensor2, rows: &[usize], t: &[usize]) -> Result<()> {
        if x_t.cols() != self.config.data_dim || rows.len() != x_t.rows() || t.len() != x_t.rows() {
            return Err(Error::Shape {
                op: "predict_noise",
                left: x_t.shape(),
                right: (rows.len(), self.config.data_dim),
            });
        }
        if let Some(&bad) = t.iter().find(|&&s| s == 0 || s > self.schedule.steps()) {
            return Err(Error::contract(format!("timestep {bad} outside 1..={}", self.schedule.steps())));
        }
        Ok(())
    }

    /// Inference forward pass, one condition per row.
    pub fn predict_noise(&self, x_t: &Tensor2, conds: &[Condition], t: &[usize]) -> Result<Tensor2> {
        let rows = self.condition_rows(conds)?;
        self.predict_rows(x_t, &rows, t)
    }

    pub(crate) fn predict_rows(&self, x_t: &Tensor2, rows: &[usize], t: &[usize]) -> Result<Tensor2> {
        self.check_batch(x_t, rows, t)?;
        let weights = self.effective_weights()?;
        self.predict_with(&weights, x_t, rows, t)
    }

    /// All effective matrices, computed once for repeated inference.
    pub(crate) fn effective_weights(&self) -> Result<EffectiveWeights<'_>> {
        let embed = self.effective_weight(EMBED)?;
        let hidden = (0..self.config.hidden.len())
            .map(|i| self.effective_weight(&hidden_weight(i)))
            .collect::<Result<_>>()?;
        Ok(EffectiveWeights { embed, hidden })
    }

    pub(crate) fn predict_with(
        &self,
        weights: &EffectiveWeights<'_>,
        x_t: &Tensor2,
        rows: &[usize],
        t: &[usize],
    ) -> Result<Tensor2> {
        let temb = time_embedding(t, self.config.time_dim, self.schedule.steps());
        let cemb = weights.embed.gather_rows(rows)?;
        let mut h = Tensor2::concat_cols(&[x_t, &temb, &cemb])?;
        for (i, w) in weights.hidden.iter().enumerate() {
            h = h
                .matmul(w)?
                .add_row_bias(self.params.require(&hidden_bias(i))?)?
                .map(silu);
        }
        h.matmul(self.params.require(OUT_W)?)?
            .add_row_bias(self.params.require(OUT_B)?)
    }

    fn weight_var(&self, tape: &mut Tape, name: &str, mode: Trainable) -> Result<Var> {
        let w0 = self.params.require(name)?;
        match mode {
            Trainable::Base => Ok(tape.param(name, w0.clone())),
            Trainable::Mesh => match self.adapters.get(name) {
                Some(adapter) if adapter.enabled => {
                    let base = tape.constant(w0.clone());
                    let (a_name, b_name) = crate::mesh::factor_names(name);
                    let b = tape.param(b_name.clone(), self.adapters.params.require(&b_name)?.clone());
                    let a = tape.param(a_name.clone(), self.adapters.params.require(&a_name)?.clone());
                    let delta = tape.matmul(b, a)?;
                    tape.add(base, delta)
                }
                _ => Ok(tape.constant(w0.clone())),
            },
        }
    }

    fn bias_var(&self, tape: &mut Tape, name: &str, mode: Trainable) -> Result<Var> {
        let b = self.params.require(name)?.clone();
        Ok(match mode {
            Trainable::Base => tape.param(name, b),
            Trainable::Mesh => tape.constant(b),
        })
    }

    /// Differentiable forward pass. Gradients flow to the tensors selected
    /// by `mode`; their names match [`Self::params`] or the adapter set.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        x_t: &Tensor2,
        conds: &[Condition],
        t: &[usize],
        mode: Trainable,
    ) -> Result<Var> {
        let rows = self.condition_rows(conds)?;
        self.check_batch(x_t, &rows, t)?;
        let x = tape.constant(x_t.clone());
        let temb = tape.constant(time_embedding(t, self.config.time_dim, self.schedule.steps()));
        let table = self.weight_var(tape, EMBED, mode)?;
        let cemb = tape.gather_rows(table, &rows)?;
        let mut h = tape.concat_cols(&[x, temb, cemb])?;
        for i in 0..self.config.hidden.len() {
            let w = self.weight_var(tape, &hidden_weight(i), mode)?;
            let b = self.bias_var(tape, &hidden_bias(i), mode)?;
            let z = tape.matmul(h, w)?;
            let z = tape.add_row_bias(z, b)?;
            h = tape.silu(z);
        }
        let w = self.out_weight_var(tape, mode)?;
        let b = self.bias_var(tape, OUT_B, mode)?;
        let z = tape.matmul(h, w)?;
        tape.add_row_bias(z, b)
    }

    /// The output matrix never carries an adapter.
    fn out_weight_var(&self, tape: &mut Tape, mode: Trainable) -> Result<Var> {
        let w = self.params.require(OUT_W)?.clone();
        Ok(match mode {
            Trainable::Base => tape.param(OUT_W, w),
            Trainable::Mesh => tape.constant(w),
        })
    }
}

pub(crate) struct EffectiveWeights<'a> {
    embed: Cow<'a, Tensor2>,
    hidden: Vec<Cow<'a, Tensor2>>,
}
