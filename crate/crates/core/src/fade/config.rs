use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighborhood::AdjacencySet;
use crate::world::ConceptId;

/// Which loss terms take part in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossToggles {
    pub guidance: bool,
    pub erasing: bool,
    pub adjacency: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self::ALL
    }
}

impl LossToggles {
    pub const ALL: Self = Self {
        guidance: true,
        erasing: true,
        adjacency: true,
    };

    pub fn only_erasing() -> Self {
        Self {
            guidance: false,
            erasing: true,
            adjacency: false,
        }
    }

    pub fn any(self) -> bool {
        self.guidance || self.erasing || self.adjacency
    }

    /// The six ablation rows, full objective first, in
    /// (guidance, erasing, adjacency) order.
    pub fn ablation_rows() -> [Self; 6] {
        let row = |guidance, erasing, adjacency| Self {
            guidance,
            erasing,
            adjacency,
        };
        [
            row(true, true, true),
            row(true, true, false),
            row(true, false, true),
            row(true, false, false),
            row(false, true, true),
            row(false, true, false),
        ]
    }

    /// Compact label such as `+guid -er +adj`.
    pub fn label(self) -> String {
        let mark = |b: bool| if b { '+' } else { '-' };
        format!(
            "{}guid {}er {}adj",
            mark(self.guidance),
            mark(self.erasing),
            mark(self.adjacency)
        )
    }
}

/// Hyperparameters of one unlearning run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadeHyper {
    pub lambda_er: f64,
    pub lambda_adj: f64,
    pub lambda_guid: f64,
    pub delta: f64,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub rank: usize,
    /// Samples drawn per concept for the unlearning and adjacency sets.
    pub samples_per_concept: usize,
    pub toggles: LossToggles,
    pub seed: u64,
}

impl Default for FadeHyper {
    fn default() -> Self {
        Self {
            lambda_er: 3.0,
            lambda_adj: 1000.0,
            lambda_guid: 50.0,
            delta: 1.0,
            iterations: 500,
            batch: 4,
            lr: 1e-2,
            weight_decay: 0.0,
            rank: crate::mesh::DEFAULT_RANK,
            samples_per_concept: 256,
            toggles: LossToggles::ALL,
            seed: 0,
        }
    }
}

impl FadeHyper {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_er, self.lambda_adj, self.lambda_guid];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("margin delta must be non-negative"));
        }
        if !self.toggles.any() {
            return Err(Error::config("at least one loss term must be enabled"));
        }
        if self.batch == 0 || self.samples_per_concept == 0 {
            return Err(Error::config("batch and samples per concept must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("learning rate must be non-negative"));
        }
        if self.rank == 0 {
            return Err(Error::config("adapter rank must be at least 1"));
        }
        Ok(())
    }
}

/// A fully specified unlearning job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadeConfig {
    pub target: ConceptId,
    pub adjacency: AdjacencySet,
    pub hyper: FadeHyper,
}

impl FadeConfig {
    pub fn new(adjacency: AdjacencySet, hyper: FadeHyper) -> Result<Self> {
        let cfg = Self {
            target: adjacency.target,
            adjacency,
            hyper,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.adjacency.target != self.target || self.adjacency.contains(self.target) {
            return Err(Error::config("adjacency set must belong to, and exclude, the target"));
        }
        if self.adjacency.k() == 0 {
            return Err(Error::config("adjacency set is empty"));
        }
        Ok(())
    }

    pub fn neighbours(&self) -> Vec<ConceptId> {
        self.adjacency.ids()
    }
}
