use rayon::prelude::*;

use super::model::{Condition, NoisePredictor};
use super::train::gaussian;
use crate::error::Result;
use crate::numerics::Tensor2;
use crate::rng::{derive_seed, rng_from_seed};
use crate::world::ConceptId;

/// Anything that can generate data-space samples for a concept. Evaluation
/// is written against this so it can be driven by stub generators.
pub trait ConditionalSampler: Sync {
    fn sample_concept(&self, concept: ConceptId, count: usize, seed: u64) -> Result<Tensor2>;
}

/// Rows per independently seeded chain block; fixes the random stream
/// layout so results do not depend on the thread count.
const BLOCK: usize = 64;

impl NoisePredictor {
    /// Ancestral sampling from `x_T ~ N(0, I)` with the posterior-mean
    /// update and posterior variance, no noise on the final step. Returns
    /// points in data space.
    pub fn sample(&self, cond: Condition, count: usize, seed: u64) -> Result<Tensor2> {
        let row = self.condition_row(cond)?;
        let weights = self.effective_weights()?;
        let blocks: Vec<Tensor2> = (0..count.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| {
                let rows = BLOCK.min(count - b * BLOCK);
                self.sample_block(&weights, row, rows, derive_seed(seed, b as u64))
            })
            .collect::<Result<_>>()?;
        let n = self.config().data_dim;
        let data = blocks.into_iter().flat_map(Tensor2::into_data).collect();
        Ok(self.to_data_space(&Tensor2::from_vec(count, n, data)?))
    }

    fn sample_block(
        &self,
        weights: &super::model::EffectiveWeights<'_>,
        row: usize,
        count: usize,
        seed: u64,
    ) -> Result<Tensor2> {
        let schedule = self.schedule();
        let n = self.config().data_dim;
        let mut rng = rng_from_seed(seed);
        let mut x = gaussian(&mut rng, count, n);
        let rows = vec![row; count];
        for t in (1..=schedule.steps()).rev() {
            let eps = self.predict_with(weights, &x, &rows, &vec![t; count])?;
            let beta = schedule.beta(t)?;
            let ab = schedule.alpha_bar(t)?;
            let coef = beta / (1.0 - ab).sqrt();
            let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
            let sigma = schedule.posterior_variance(t)?.sqrt();
            let z = (t > 1).then(|| gaussian(&mut rng, count, n));
            for r in 0..count {
                let e = eps.row(r);
                let zr = z.as_ref().map(|z| z.row(r));
                for (j, v) in x.row_mut(r).iter_mut().enumerate() {
                    *v = inv_sqrt_alpha * (*v - coef * e[j]);
                    if let Some(zr) = zr {
                        *v += sigma * zr[j];
                    }
                }
            }
        }
        Ok(x)
    }
}

impl ConditionalSampler for NoisePredictor {
    fn sample_concept(&self, concept: ConceptId, count: usize, seed: u64) -> Result<Tensor2> {
        self.sample(Condition::Concept(concept), count, seed)
    }
}
