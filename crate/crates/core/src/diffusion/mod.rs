//! Toy conditional diffusion in data space: the noise schedule, the
//! conditional noise predictor, base training and the ancestral sampler.

mod checkpoint;
mod model;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{DenoiserCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{
    hidden_weight, time_embedding, Condition, DenoiserConfig, NoisePredictor, Trainable, EMBED,
};
pub use sampler::ConditionalSampler;
pub use schedule::{
    forward_noise, forward_noise_batch, noise_with_alpha_bar, predict_x0, NoiseSchedule,
    ScheduleSpec,
};
pub use train::{gaussian, train_base, uniform_steps, BaseTrainConfig, LossTrace};

pub(crate) use train::mean_sq_dist;

use crate::error::Result;
use crate::world::ConceptWorld;

/// Untrained default denoiser for `world`: 100-step stretched linear
/// schedule, data scaled so the widest concept has standard deviation 1/3.
pub fn default_model(world: &ConceptWorld, seed: u64) -> Result<NoisePredictor> {
    NoisePredictor::new(
        DenoiserConfig::for_world(world),
        NoiseSchedule::scaled_linear(100)?,
        3.0 * world.max_std(),
        seed,
    )
}
