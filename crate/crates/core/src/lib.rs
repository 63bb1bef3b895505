//! Adjacency-aware concept unlearning on a toy conditional diffusion model.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense matrices, a reverse-mode tape and AdamW.
//! - [`world`]: synthetic Gaussian concepts grouped into families, with an
//!   exact Bayes classifier used as the evaluation oracle.
//! - [`neighborhood`]: mean-embedding cosine similarity, top-K adjacency
//!   sets, and the k-NN / naive Bayes agreement study.
//! - [`diffusion`]: noise schedule, conditional noise predictor, base
//!   training and ancestral sampling.
//! - [`mesh`]: low-rank adapters `ΔW = B·A` over frozen weights.
//! - [`fade`]: erasing, guidance and adjacency losses and the unlearning loop.
//! - [`evaluation`]: erasing/adjacency accuracy, the ERB score, similarity
//!   inflection curves and the loss-ablation table.

pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod fade;
pub mod mesh;
pub mod neighborhood;
pub mod numerics;
pub mod rng;
pub mod world;

pub use error::{Error, Result};
