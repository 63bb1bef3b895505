//! The unlearning objective and its training loop.
//!
//! Three terms act on the adapted model `θU` against a frozen base `θ`:
//!
//! - erasing: a margin hinge that pulls target-conditioned predictions
//!   towards the base's neighbour-conditioned predictions and away from the
//!   base's own target prediction, on shared noised target latents;
//! - guidance: squared distance of target-conditioned predictions to the
//!   base's null-conditioned prediction;
//! - adjacency: squared drift of neighbour-conditioned predictions on
//!   neighbour latents.
//!
//! Only adapter factors receive gradients.

mod config;
mod losses;
mod unlearn;

pub use config::{FadeConfig, FadeHyper, LossToggles};
pub use losses::{
    adjacency_loss, erasing_loss, fade_total, guidance_loss, hinge, record_fade_terms, FadeBatch,
    FadeTerms, LossBreakdown,
};
pub use unlearn::{build_splits, draw_batch, unlearn, write_trace_csv, UnlearnOutcome};
