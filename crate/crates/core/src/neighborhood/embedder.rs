use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, AdamW, ParamSet, Tape, Tensor2};
use crate::rng::{derive_seed, normal_vec, rng_from_seed};
use crate::world::ConceptWorld;

/// Feature map used to compare concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Embedder {
    /// Points are their own embedding.
    RawIdentity { dimension: usize },
    /// Last hidden layer of a softmax classifier trained on every concept.
    ClassifierPenultimate(PenultimateEmbedder),
}

impl Embedder {
    pub fn raw(dimension: usize) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        Ok(Embedder::RawIdentity { dimension })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Embedder::RawIdentity { dimension } => *dimension,
            Embedder::ClassifierPenultimate(p) => p.output_dim(),
        }
    }

    /// Embeds every row of `points`.
    pub fn embed(&self, points: &Tensor2) -> Result<Tensor2> {
        match self {
            Embedder::RawIdentity { dimension } => {
                if points.cols() != *dimension {
                    return Err(Error::Shape {
                        op: "embed",
                        left: points.shape(),
                        right: (points.rows(), *dimension),
                    });
                }
                Ok(points.clone())
            }
            Embedder::ClassifierPenultimate(p) => p.embed(points),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenultimateConfig {
    pub hidden: usize,
    pub embedding_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PenultimateConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            embedding_dim: 16,
            steps: 1500,
            batch: 128,
            lr: 5e-3,
            weight_decay: 0.0,
            seed: 17,
        }
    }
}

/// Two tanh layers; the second one's activations are the embedding. The
/// classification head is kept so the network can be inspected, but is not
/// part of the embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenultimateEmbedder {
    input_scale: f64,
    params: ParamSet,
}

const LAYERS: [(&str, &str); 3] = [("l1.w", "l1.b"), ("l2.w", "l2.b"), ("head.w", "head.b")];

impl PenultimateEmbedder {
    /// Trains the classifier on fresh mixture draws from `world`.
    pub fn train(world: &ConceptWorld, config: &PenultimateConfig) -> Result<Self> {
        if config.embedding_dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        if config.steps == 0 || config.batch == 0 {
            return Err(Error::config("classifier training needs steps and batch >= 1"));
        }
        let classes = world.len();
        let n = world.dimension;
        let mut rng = rng_from_seed(derive_seed(config.seed, 1));
        let mut init = |rows: usize, cols: usize| {
            let scale = (1.0 / rows as f64).sqrt();
            Tensor2::from_vec(rows, cols, normal_vec(&mut rng, rows * cols))
                .map(|t| t.scale(scale))
        };
        let mut params = ParamSet::new();
        params.insert("l1.w", init(n, config.hidden)?);
        params.insert("l1.b", Tensor2::zeros(1, config.hidden));
        params.insert("l2.w", init(config.hidden, config.embedding_dim)?);
        params.insert("l2.b", Tensor2::zeros(1, config.embedding_dim));
        params.insert("head.w", init(config.embedding_dim, classes)?);
        params.insert("head.b", Tensor2::zeros(1, classes));

        let mut model = Self {
            input_scale: 1.0 / world.data_radius().max(1e-12),
            params,
        };
        let opt = AdamW {
            weight_decay: config.weight_decay,
            ..AdamW::with_lr(config.lr)
        };
        let mut state = AdamState::new(&model.params);
        // Balanced batches: every concept appears equally often per epoch.
        let mut order: Vec<usize> = Vec::new();
        let mut order_rng = rng_from_seed(derive_seed(config.seed, 2));
        for step in 0..config.steps {
            let mut labels = Vec::with_capacity(config.batch);
            for _ in 0..config.batch {
                if order.is_empty() {
                    order = (0..classes).collect();
                    order.shuffle(&mut order_rng);
                }
                labels.push(order.pop().unwrap_or(0));
            }
            let mut rows = Tensor2::zeros(config.batch, n);
            let draw_seed = derive_seed(config.seed, 1000 + step as u64);
            let mut draw_rng = rng_from_seed(draw_seed);
            for (r, &c) in labels.iter().enumerate() {
                let spec = &world.concepts[c];
                for (j, x) in rows.row_mut(r).iter_mut().enumerate() {
                    *x = spec.mean[j]
                        + spec.variance[j].sqrt() * crate::rng::standard_normal(&mut draw_rng);
                }
            }
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, &rows, 3)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::TrainingFailure {
                    step,
                    reason: "classifier loss is not finite".into(),
                });
            }
            let grads = tape.backward(loss, &model.params)?;
            opt.step(&mut model.params, &grads, &mut state)?;
        }
        Ok(model)
    }

    pub fn output_dim(&self) -> usize {
        self.params.get("l2.w").map_or(0, Tensor2::cols)
    }

    /// Runs the first `layers` layers on the tape; tanh after the hidden
    /// layers, raw logits after the head.
    fn forward(&self, tape: &mut Tape, points: &Tensor2, layers: usize) -> Result<crate::numerics::Var> {
        let mut h = tape.constant(points.scale(self.input_scale));
        for (i, (w, b)) in LAYERS.iter().take(layers).enumerate() {
            let wv = tape.param(*w, self.params.require(w)?.clone());
            let bv = tape.param(*b, self.params.require(b)?.clone());
            let z = tape.matmul(h, wv)?;
            h = tape.add_row_bias(z, bv)?;
            if i < 2 {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn embed(&self, points: &Tensor2) -> Result<Tensor2> {
        let mut h = points.scale(self.input_scale);
        for (w, b) in LAYERS.iter().take(2) {
            h = h
                .matmul(self.params.require(w)?)?
                .add_row_bias(self.params.require(b)?)?
                .map(f64::tanh);
        }
        Ok(h)
    }

    /// Classifier accuracy on labelled points (diagnostic).
    pub fn accuracy(&self, points: &Tensor2, labels: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, points, 3)?;
        let l = tape.value(logits);
        let hits = l
            .iter_rows()
            .zip(labels)
            .filter(|(row, &y)| crate::world::argmax_lowest(row).0 == y)
            .count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldConfig;

    #[test]
    fn raw_embedder_is_identity() {
        let e = Embedder::raw(2).unwrap();
        let p = Tensor2::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(e.embed(&p).unwrap(), p);
        assert!(Embedder::raw(1).is_err());
    }

    #[test]
    fn penultimate_embedder_is_deterministic_and_accurate() {
        let world = ConceptWorld::build(&WorldConfig::default()).unwrap();
        let cfg = PenultimateConfig {
            steps: 600,
            ..PenultimateConfig::default()
        };
        let a = PenultimateEmbedder::train(&world, &cfg).unwrap();
        let b = PenultimateEmbedder::train(&world, &cfg).unwrap();
        assert_eq!(a, b);
        let s = world.sample_mixture(2000, 3).unwrap();
        let labels: Vec<usize> = s.labels.iter().map(|c| c.0).collect();
        let acc = a.accuracy(&s.points, &labels).unwrap();
        assert!(acc > 0.85, "classifier accuracy {acc}");
        let e = a.embed(&s.points).unwrap();
        assert_eq!(e.shape(), (2000, 16));
    }
}
