use serde::{Deserialize, Serialize};

use super::config::{FadeHyper, LossToggles};
use crate::diffusion::{mean_sq_dist, Condition, NoisePredictor, Trainable};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor2, Var};
use crate::world::ConceptId;

/// Loss values of one iteration. Disabled terms are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub iteration: usize,
    pub l_er: f64,
    pub l_guid: f64,
    pub l_adj: f64,
    pub l_total: f64,
}

/// `max(0, term_a − term_b + δ)`.
pub fn hinge(term_a: f64, term_b: f64, delta: f64) -> f64 {
    (term_a - term_b + delta).max(0.0)
}

/// Weighted sum of the enabled terms; disabled terms are zeroed.
pub fn fade_total(l_er: f64, l_guid: f64, l_adj: f64, hyper: &FadeHyper, iteration: usize) -> Result<LossBreakdown> {
    let on = hyper.toggles;
    if !on.any() {
        return Err(Error::contract("every loss term is disabled"));
    }
    let pick = |flag: bool, v: f64| if flag { v } else { 0.0 };
    let (l_er, l_guid, l_adj) = (pick(on.erasing, l_er), pick(on.guidance, l_guid), pick(on.adjacency, l_adj));
    Ok(LossBreakdown {
        iteration,
        l_er,
        l_guid,
        l_adj,
        l_total: hyper.lambda_er * l_er + hyper.lambda_adj * l_adj + hyper.lambda_guid * l_guid,
    })
}

/// Noised latents for one iteration. `unlearn` rows come from target
/// samples; `adjacent` rows from neighbour samples with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FadeBatch {
    pub unlearn: Tensor2,
    pub unlearn_t: Vec<usize>,
    pub adjacent: Tensor2,
    pub adjacent_t: Vec<usize>,
    pub adjacent_labels: Vec<ConceptId>,
}

/// Frozen-base predictions that every loss compares against.
struct BaseTargets {
    neighbours: Vec<Tensor2>,
    target: Tensor2,
    null: Tensor2,
    adjacent: Tensor2,
}

fn base_targets(base: &NoisePredictor, batch: &FadeBatch, target: ConceptId, adjacency: &[ConceptId]) -> Result<BaseTargets> {
    let rows = batch.unlearn.rows();
    let on = |c: Condition| base.predict_noise(&batch.unlearn, &vec![c; rows], &batch.unlearn_t);
    let adjacent_conds: Vec<Condition> = batch.adjacent_labels.iter().map(|&c| c.into()).collect();
    Ok(BaseTargets {
        neighbours: adjacency.iter().map(|&c| on(c.into())).collect::<Result<_>>()?,
        target: on(target.into())?,
        null: on(Condition::Null)?,
        adjacent: base.predict_noise(&batch.adjacent, &adjacent_conds, &batch.adjacent_t)?,
    })
}

/// Differentiable loss terms recorded on a tape.
pub struct FadeTerms {
    pub l_er: Option<Var>,
    pub l_guid: Option<Var>,
    pub l_adj: Option<Var>,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

fn check_inputs(batch: &FadeBatch, target: ConceptId, adjacency: &[ConceptId]) -> Result<()> {
    if adjacency.is_empty() {
        return Err(Error::contract("erasing loss needs a nonempty adjacency set"));
    }
    if adjacency.contains(&target) {
        return Err(Error::contract("adjacency set contains the target"));
    }
    if batch.unlearn.rows() == 0 {
        return Err(Error::contract("empty unlearning batch"));
    }
    if let Some(c) = batch.adjacent_labels.iter().find(|c| !adjacency.contains(c)) {
        return Err(Error::contract(format!("adjacency batch label {c} is not a neighbour")));
    }
    Ok(())
}

/// Records the enabled losses and their weighted sum. Only the adapter
/// factors of `updated` are registered as parameters.
pub fn record_fade_terms(
    tape: &mut Tape,
    updated: &NoisePredictor,
    base: &NoisePredictor,
    batch: &FadeBatch,
    target: ConceptId,
    adjacency: &[ConceptId],
    hyper: &FadeHyper,
    iteration: usize,
) -> Result<FadeTerms> {
    check_inputs(batch, target, adjacency)?;
    let on = hyper.toggles;
    if !on.any() {
        return Err(Error::contract("every loss term is disabled"));
    }
    let base_out = base_targets(base, batch, target, adjacency)?;
    let rows = batch.unlearn.rows();

    // One forward pass of the updated model on the target condition is
    // shared by the erasing and guidance terms.
    let pred_tar = if on.erasing || on.guidance {
        Some(updated.forward_tape(tape, &batch.unlearn, &vec![Condition::Concept(target); rows], &batch.unlearn_t, Trainable::Mesh)?)
    } else {
        None
    };

    let l_er = match (on.erasing, pred_tar) {
        (true, Some(p)) => {
            let mut terms = Vec::with_capacity(adjacency.len());
            for n in &base_out.neighbours {
                let c = tape.constant(n.clone());
                terms.push(mean_sq_dist(tape, p, c)?);
            }
            let stacked = tape.concat_cols(&terms)?;
            let term_a = tape.mean(stacked);
            let orig = tape.constant(base_out.target.clone());
            let term_b = mean_sq_dist(tape, p, orig)?;
            let gap = tape.sub(term_a, term_b)?;
            let margin = tape.constant(Tensor2::scalar(hyper.delta));
            let shifted = tape.add(gap, margin)?;
            Some(tape.relu(shifted))
        }
        _ => None,
    };

    let l_guid = match (on.guidance, pred_tar) {
        (true, Some(p)) => {
            let null = tape.constant(base_out.null.clone());
            Some(mean_sq_dist(tape, p, null)?)
        }
        _ => None,
    };

    let l_adj = if on.adjacency && batch.adjacent.rows() > 0 {
        let conds: Vec<Condition> = batch.adjacent_labels.iter().map(|&c| c.into()).collect();
        let p = updated.forward_tape(tape, &batch.adjacent, &conds, &batch.adjacent_t, Trainable::Mesh)?;
        let orig = tape.constant(base_out.adjacent.clone());
        Some(mean_sq_dist(tape, p, orig)?)
    } else {
        None
    };

    let mut weighted = Vec::new();
    for (v, w) in [(l_er, hyper.lambda_er), (l_guid, hyper.lambda_guid), (l_adj, hyper.lambda_adj)] {
        if let Some(v) = v {
            weighted.push(tape.scale(v, w));
        }
    }
    let stacked = tape.concat_cols(&weighted)?;
    let total = tape.sum(stacked);

    let value = |v: Option<Var>| -> Result<f64> { v.map_or(Ok(0.0), |v| tape.value(v).item()) };
    let breakdown = fade_total(value(l_er)?, value(l_guid)?, value(l_adj)?, hyper, iteration)?;
    Ok(FadeTerms {
        l_er,
        l_guid,
        l_adj,
        total,
        breakdown,
    })
}

/// Value of the erasing loss alone.
pub fn erasing_loss(
    updated: &NoisePredictor,
    base: &NoisePredictor,
    batch: &FadeBatch,
    target: ConceptId,
    adjacency: &[ConceptId],
    delta: f64,
) -> Result<f64> {
    let hyper = FadeHyper {
        delta,
        toggles: LossToggles::only_erasing(),
        ..FadeHyper::default()
    };
    let mut tape = Tape::new();
    let terms = record_fade_terms(&mut tape, updated, base, batch, target, adjacency, &hyper, 0)?;
    Ok(terms.breakdown.l_er)
}

/// Value of the guidance loss alone.
pub fn guidance_loss(
    updated: &NoisePredictor,
    base: &NoisePredictor,
    batch: &FadeBatch,
    target: ConceptId,
) -> Result<f64> {
    let rows = batch.unlearn.rows();
    let ours = updated.predict_noise(&batch.unlearn, &vec![Condition::Concept(target); rows], &batch.unlearn_t)?;
    let null = base.predict_noise(&batch.unlearn, &vec![Condition::Null; rows], &batch.unlearn_t)?;
    Ok(ours.sub(&null)?.row_sq_norms().mean())
}

/// Value of the adjacency loss alone.
pub fn adjacency_loss(
    updated: &NoisePredictor,
    base: &NoisePredictor,
    batch: &FadeBatch,
    adjacency: &[ConceptId],
) -> Result<f64> {
    if let Some(c) = batch.adjacent_labels.iter().find(|c| !adjacency.contains(c)) {
        return Err(Error::contract(format!("adjacency batch label {c} is not a neighbour")));
    }
    let conds: Vec<Condition> = batch.adjacent_labels.iter().map(|&c| c.into()).collect();
    let ours = updated.predict_noise(&batch.adjacent, &conds, &batch.adjacent_t)?;
    let orig = base.predict_noise(&batch.adjacent, &conds, &batch.adjacent_t)?;
    Ok(ours.sub(&orig)?.row_sq_norms().mean())
}
