//! Synthetic concept universe.
//!
//! Every concept is an axis-aligned Gaussian whose mean lies on a sphere of
//! fixed radius. Each family occupies one angular sector, with its concepts
//! spaced by a small angle along an arc, and families are separated by a gap
//! wider than any family's own span. In the plane all families share one
//! circle; in higher dimensions every family gets its own orthogonal
//! direction. Per-dimension variances shrink as `2/n` so the total noise per
//! concept does not grow with the dimension.
//!
//! Because the densities are known exactly, [`ConceptWorld::bayes_classify`]
//! is the Bayes-optimal classifier and serves as the evaluation oracle.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::rng::{derive_seed, rng_from_seed, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub usize);

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub id: ConceptId,
    pub family: usize,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub variance: Vec<f64>,
    pub prior: f64,
}

/// Parameters of the angular family layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub families: usize,
    pub per_family: usize,
    pub dimension: usize,
    /// Adjacency size the world must support (`per_family > neighbors`).
    pub neighbors: usize,
    /// Distance between adjacent concepts of a family, in units of the
    /// largest per-dimension standard deviation.
    pub separation: f64,
    /// Per-dimension variances are drawn uniformly from this range, then
    /// scaled by `2/dimension`.
    pub variance_range: (f64, f64),
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            families: 4,
            per_family: 6,
            dimension: 2,
            neighbors: 5,
            separation: 6.0,
            variance_range: (0.6, 1.0),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyLayout {
    pub families: usize,
    pub per_family: usize,
    pub radius: f64,
    /// Angle between consecutive concepts of one family.
    pub intra_angle: f64,
    /// Angle between the last concept of a family and the first of the next.
    pub inter_gap_angle: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptWorld {
    pub dimension: usize,
    pub concepts: Vec<ConceptSpec>,
    pub layout: Option<FamilyLayout>,
    pub seed: u64,
}

/// Labelled points, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    pub labels: Vec<ConceptId>,
    pub points: Tensor2,
}

impl LabeledSamples {
    pub fn empty(dimension: usize) -> Self {
        Self {
            labels: Vec::new(),
            points: Tensor2::zeros(0, dimension),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn concepts(&self) -> BTreeSet<ConceptId> {
        self.labels.iter().copied().collect()
    }

    /// Concatenates several sample sets of equal dimension.
    pub fn concat(parts: Vec<LabeledSamples>, dimension: usize) -> Result<Self> {
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for p in parts {
            if p.points.cols() != dimension {
                return Err(Error::Shape {
                    op: "concat samples",
                    left: (0, dimension),
                    right: p.points.shape(),
                });
            }
            labels.extend(p.labels);
            data.extend(p.points.into_data());
        }
        let rows = labels.len();
        Ok(Self {
            labels,
            points: Tensor2::from_vec(rows, dimension, data)?,
        })
    }

    /// CSV with header `concept_id,x_0,…,x_{n-1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["concept_id".to_string()];
        header.extend((0..self.points.cols()).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(self.points.iter_rows()) {
            let mut rec = vec![label.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The three disjoint training sets used by unlearning.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub target: ConceptId,
    /// Samples of the target concept.
    pub unlearn: LabeledSamples,
    /// Samples of the adjacency concepts.
    pub adjacency: LabeledSamples,
    /// Samples of every other concept.
    pub retain: LabeledSamples,
}

fn chord(angle: f64, radius: f64) -> f64 {
    2.0 * radius * (angle / 2.0).sin()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl ConceptWorld {
    /// Builds the default angular family layout.
    pub fn build(config: &WorldConfig) -> Result<Self> {
        let WorldConfig {
            families,
            per_family,
            dimension,
            neighbors,
            separation,
            variance_range,
            seed,
        } = *config;
        if families < 2 {
            return Err(Error::config(format!("need at least 2 families, got {families}")));
        }
        if per_family <= neighbors {
            return Err(Error::config(format!(
                "concepts per family ({per_family}) must exceed the adjacency size K={neighbors}"
            )));
        }
        if per_family < 2 {
            return Err(Error::config("need at least 2 concepts per family"));
        }
        if dimension < 2 {
            return Err(Error::config(format!("dimension must be at least 2, got {dimension}")));
        }
        let (vlo, vhi) = variance_range;
        if !(vlo > 0.0 && vhi >= vlo && vhi.is_finite()) || !(separation > 0.0) {
            return Err(Error::config("invalid variance range or separation"));
        }

        // Gap between families is 1.5 slots wider than a family's span.
        let span_slots = (per_family - 1) as f64;
        let gap_slots = span_slots + 1.5;
        let intra_angle = 2.0 * PI / (families as f64 * (span_slots + gap_slots));
        let radius = separation * vhi.sqrt() / chord(intra_angle, 1.0);

        let mut rng = rng_from_seed(derive_seed(seed, 0x57_4f_52_4c_44));
        let phase = rng.random::<f64>() * 2.0 * PI;
        let prior = 1.0 / (families * per_family) as f64;

        // Beyond the plane, every family gets its own direction on the
        // sphere and its concepts lie on a great-circle arc through it.
        let arcs = if dimension > 2 {
            Some(family_arcs(families, dimension, &mut rng))
        } else {
            None
        };

        // Keeps the trace of every covariance in the same range as in the
        // plane, whatever the dimension.
        let noise_scale = 2.0 / dimension as f64;

        let mut concepts = Vec::with_capacity(families * per_family);
        for f in 0..families {
            for g in 0..per_family {
                let mean = match &arcs {
                    None => {
                        let angle =
                            phase + (f as f64 * (span_slots + gap_slots) + g as f64) * intra_angle;
                        vec![radius * angle.cos(), radius * angle.sin()]
                    }
                    Some(arcs) => {
                        let (u, w) = &arcs[f];
                        let angle = (g as f64 - span_slots / 2.0) * intra_angle;
                        u.iter()
                            .zip(w)
                            .map(|(a, b)| radius * (angle.cos() * a + angle.sin() * b))
                            .collect()
                    }
                };
                let variance = (0..dimension)
                    .map(|_| rng.random_range(vlo..=vhi) * noise_scale)
                    .collect();
                concepts.push(ConceptSpec {
                    id: ConceptId(concepts.len()),
                    family: f,
                    mean,
                    variance,
                    prior,
                });
            }
        }

        let world = Self {
            dimension,
            concepts,
            layout: Some(FamilyLayout {
                families,
                per_family,
                radius,
                intra_angle,
                inter_gap_angle: gap_slots * intra_angle,
                phase,
            }),
            seed,
        };
        world.validate()?;
        Ok(world)
    }

    /// Wraps an explicit concept list (used for hand-built test worlds).
    pub fn from_concepts(dimension: usize, concepts: Vec<ConceptSpec>) -> Result<Self> {
        let world = Self {
            dimension,
            concepts,
            layout: None,
            seed: 0,
        };
        world.validate()?;
        Ok(world)
    }

    /// Checks ids, shapes, priors, variances and the family-separation
    /// invariant.
    pub fn validate(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::config("world has no concepts"));
        }
        for (i, c) in self.concepts.iter().enumerate() {
            if c.id != ConceptId(i) {
                return Err(Error::config(format!("concept at index {i} has id {}", c.id)));
            }
            if c.mean.len() != self.dimension || c.variance.len() != self.dimension {
                return Err(Error::config(format!("concept {i} has wrong dimension")));
            }
            if c.variance.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::config(format!("concept {i} has a non-positive variance")));
            }
            if c.mean.iter().any(|v| !v.is_finite()) || !(c.prior >= 0.0) {
                return Err(Error::config(format!("concept {i} has invalid mean or prior")));
            }
        }
        let total: f64 = self.concepts.iter().map(|c| c.prior).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("priors sum to {total}, not 1")));
        }
        let (max_intra, min_inter) = self.family_distance_extremes();
        if let (Some(intra), Some(inter)) = (max_intra, min_inter) {
            if intra >= inter {
                return Err(Error::config(format!(
                    "family invariant violated: max intra-family distance {intra} >= min inter-family distance {inter}"
                )));
            }
        }
        Ok(())
    }

    /// (max intra-family, min inter-family) mean distance over all pairs.
    pub fn family_distance_extremes(&self) -> (Option<f64>, Option<f64>) {
        let mut max_intra: Option<f64> = None;
        let mut min_inter: Option<f64> = None;
        for (i, a) in self.concepts.iter().enumerate() {
            for b in &self.concepts[i + 1..] {
                let d = distance(&a.mean, &b.mean);
                if a.family == b.family {
                    max_intra = Some(max_intra.map_or(d, |m| m.max(d)));
                } else {
                    min_inter = Some(min_inter.map_or(d, |m| m.min(d)));
                }
            }
        }
        (max_intra, min_inter)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept_ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.concepts.iter().map(|c| c.id)
    }

    pub fn concept(&self, id: ConceptId) -> Result<&ConceptSpec> {
        self.concepts.get(id.0).ok_or_else(|| Error::Lookup {
            kind: "concept",
            id: id.to_string(),
        })
    }

    pub fn family_of(&self, id: ConceptId) -> Result<usize> {
        Ok(self.concept(id)?.family)
    }

    /// Largest distance of any concept mean from the origin.
    pub fn data_radius(&self) -> f64 {
        self.concepts
            .iter()
            .map(|c| c.mean.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest per-dimension standard deviation of any concept.
    pub fn max_std(&self) -> f64 {
        self.concepts
            .iter()
            .flat_map(|c| c.variance.iter())
            .fold(0.0, |m: f64, v| m.max(v.sqrt()))
    }

    /// `m` i.i.d. draws from one concept.
    pub fn sample(&self, id: ConceptId, m: usize, seed: u64) -> Result<LabeledSamples> {
        let spec = self.concept(id)?;
        if m == 0 {
            return Err(Error::contract("sample count must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        let sd: Vec<f64> = spec.variance.iter().map(|v| v.sqrt()).collect();
        let mut points = Tensor2::zeros(m, self.dimension);
        for r in 0..m {
            for (j, x) in points.row_mut(r).iter_mut().enumerate() {
                *x = spec.mean[j] + sd[j] * standard_normal(&mut rng);
            }
        }
        Ok(LabeledSamples {
            labels: vec![id; m],
            points,
        })
    }

    /// Samples with labels drawn from the priors.
    pub fn sample_mixture(&self, m: usize, seed: u64) -> Result<LabeledSamples> {
        let mut rng = rng_from_seed(seed);
        let mut labels = Vec::with_capacity(m);
        let mut points = Tensor2::zeros(m, self.dimension);
        for r in 0..m {
            let id = self.draw_concept(&mut rng);
            let spec = &self.concepts[id.0];
            for (j, x) in points.row_mut(r).iter_mut().enumerate() {
                *x = spec.mean[j] + spec.variance[j].sqrt() * standard_normal(&mut rng);
            }
            labels.push(id);
        }
        Ok(LabeledSamples { labels, points })
    }

    pub(crate) fn draw_concept(&self, rng: &mut crate::rng::LabRng) -> ConceptId {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.concepts {
            acc += c.prior;
            if u < acc {
                return c.id;
            }
        }
        // rounding: fall back to the last concept with positive prior
        self.concepts
            .iter()
            .rev()
            .find(|c| c.prior > 0.0)
            .map_or(ConceptId(0), |c| c.id)
    }

    /// Unnormalised log joint density `log P(C=c) + log N(x; μ_c, Σ_c)`.
    pub fn log_joint(&self, id: ConceptId, x: &[f64]) -> Result<f64> {
        let spec = self.concept(id)?;
        if x.len() != self.dimension {
            return Err(Error::Shape {
                op: "log_joint",
                left: (1, x.len()),
                right: (1, self.dimension),
            });
        }
        if spec.prior == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mut ll = spec.prior.ln();
        for j in 0..self.dimension {
            let v = spec.variance[j];
            let d = x[j] - spec.mean[j];
            ll -= 0.5 * (d * d / v + (2.0 * PI * v).ln());
        }
        Ok(ll)
    }

    /// Bayes-optimal label and the full posterior. Ties go to the lowest id.
    pub fn bayes_classify(&self, x: &[f64]) -> Result<(ConceptId, Vec<f64>)> {
        let logs: Vec<f64> = self
            .concept_ids()
            .map(|c| self.log_joint(c, x))
            .collect::<Result<_>>()?;
        let (best, max) = argmax_lowest(&logs);
        let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        Ok((ConceptId(best), weights.into_iter().map(|w| w / z).collect()))
    }

    /// Bayes label for every row.
    pub fn bayes_labels(&self, points: &Tensor2) -> Result<Vec<ConceptId>> {
        points
            .iter_rows()
            .map(|row| self.bayes_label(row))
            .collect()
    }

    pub fn bayes_label(&self, x: &[f64]) -> Result<ConceptId> {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for c in self.concept_ids() {
            let v = self.log_joint(c, x)?;
            if v > best_val {
                best = c.0;
                best_val = v;
            }
        }
        Ok(ConceptId(best))
    }

    /// Splits concepts into target / adjacency / retain and samples each.
    pub fn make_splits(
        &self,
        target: ConceptId,
        adjacency: &[ConceptId],
        m_per_concept: usize,
        seed: u64,
    ) -> Result<DatasetSplit> {
        self.concept(target)?;
        let adj_set: BTreeSet<ConceptId> = adjacency.iter().copied().collect();
        if adj_set.contains(&target) {
            return Err(Error::contract(format!(
                "target concept {target} appears in its own adjacency set"
            )));
        }
        if adj_set.len() != adjacency.len() {
            return Err(Error::contract("adjacency set lists a concept twice"));
        }
        for &c in &adj_set {
            self.concept(c)?;
        }
        let draw = |ids: Vec<ConceptId>| -> Result<LabeledSamples> {
            let parts = ids
                .into_iter()
                .map(|c| self.sample(c, m_per_concept, derive_seed(seed, c.0 as u64)))
                .collect::<Result<Vec<_>>>()?;
            LabeledSamples::concat(parts, self.dimension)
        };
        let retain_ids: Vec<ConceptId> = self
            .concept_ids()
            .filter(|c| *c != target && !adj_set.contains(c))
            .collect();
        Ok(DatasetSplit {
            target,
            unlearn: draw(vec![target])?,
            adjacency: draw(adjacency.to_vec())?,
            retain: draw(retain_ids)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: Self = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }
}

/// A (centre, tangent) pair of orthonormal vectors per family. Centres are
/// mutually orthogonal when `families <= dimension`, and every tangent is
/// orthogonal to all centres when there is room for it.
fn family_arcs(families: usize, dimension: usize, rng: &mut crate::rng::LabRng) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut fresh = |basis: &mut Vec<Vec<f64>>, must_avoid: &[Vec<f64>]| -> Vec<f64> {
        loop {
            let mut v: Vec<f64> = (0..dimension).map(|_| standard_normal(rng)).collect();
            let avoid: Vec<&Vec<f64>> = if basis.len() < dimension {
                basis.iter().collect()
            } else {
                must_avoid.iter().collect()
            };
            for b in avoid {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                if basis.len() < dimension {
                    basis.push(v.clone());
                }
                return v;
            }
        }
    };
    let centres: Vec<Vec<f64>> = (0..families).map(|_| fresh(&mut basis, &[])).collect();
    centres
        .iter()
        .map(|u| {
            let w = fresh(&mut basis, std::slice::from_ref(u));
            (u.clone(), w)
        })
        .collect()
}

/// Index of the first maximum, plus the maximum itself.
pub(crate) fn argmax_lowest(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    (best, best_val)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric_pair() -> ConceptWorld {
        let spec = |id, x: f64| ConceptSpec {
            id: ConceptId(id),
            family: id,
            mean: vec![x, 0.0],
            variance: vec![1.0, 1.0],
            prior: 0.5,
        };
        ConceptWorld::from_concepts(2, vec![spec(0, -3.0), spec(1, 3.0)]).unwrap()
    }

    #[test]
    fn default_world_has_24_concepts_and_family_invariant() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        assert_eq!(w.len(), 24);
        // brute force over every pair
        let mut max_intra: f64 = 0.0;
        let mut min_inter = f64::INFINITY;
        for a in &w.concepts {
            for b in &w.concepts {
                if a.id == b.id {
                    continue;
                }
                let d = distance(&a.mean, &b.mean);
                if a.family == b.family {
                    max_intra = max_intra.max(d);
                } else {
                    min_inter = min_inter.min(d);
                }
            }
        }
        assert!(max_intra < min_inter, "{max_intra} vs {min_inter}");
    }

    #[test]
    fn minimal_world_is_valid() {
        let cfg = WorldConfig {
            families: 2,
            per_family: 2,
            neighbors: 1,
            ..WorldConfig::default()
        };
        assert_eq!(ConceptWorld::build(&cfg).unwrap().len(), 4);
    }

    #[test]
    fn single_family_is_rejected() {
        let cfg = WorldConfig {
            families: 1,
            ..WorldConfig::default()
        };
        assert!(matches!(ConceptWorld::build(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn too_few_concepts_per_family_for_k_is_rejected() {
        let cfg = WorldConfig {
            per_family: 5,
            neighbors: 5,
            ..WorldConfig::default()
        };
        assert!(matches!(ConceptWorld::build(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn priors_sum_to_one() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        let total: f64 = w.concepts.iter().map(|c| c.prior).sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn sample_mean_obeys_law_of_large_numbers() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        let id = ConceptId(5);
        let s = w.sample(id, 1000, 99).unwrap();
        let spec = w.concept(id).unwrap();
        for j in 0..2 {
            let mean: f64 = s.points.iter_rows().map(|r| r[j]).sum::<f64>() / 1000.0;
            let tol = 5.0 * spec.variance[j].sqrt() / 1000f64.sqrt();
            assert!((mean - spec.mean[j]).abs() < tol);
        }
    }

    #[test]
    fn vanishing_covariance_returns_the_mean() {
        let spec = ConceptSpec {
            id: ConceptId(0),
            family: 0,
            mean: vec![3.5, -1.25],
            variance: vec![1e-300, 1e-300],
            prior: 1.0,
        };
        let w = ConceptWorld::from_concepts(2, vec![spec]).unwrap();
        let s = w.sample(ConceptId(0), 10, 1).unwrap();
        for row in s.points.iter_rows() {
            assert_eq!(row, &[3.5, -1.25]);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        assert_eq!(
            w.sample(ConceptId(3), 20, 5).unwrap(),
            w.sample(ConceptId(3), 20, 5).unwrap()
        );
    }

    #[test]
    fn unknown_concept_is_a_lookup_error() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        assert!(matches!(w.sample(ConceptId(99), 1, 0), Err(Error::Lookup { .. })));
    }

    #[test]
    fn mean_of_separated_concept_is_classified_confidently() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        for c in &w.concepts {
            let (label, post) = w.bayes_classify(&c.mean).unwrap();
            assert_eq!(label, c.id);
            assert!(post[c.id.0] > 0.99);
        }
    }

    #[test]
    fn symmetric_midpoint_has_even_posterior() {
        let w = symmetric_pair();
        let (label, post) = w.bayes_classify(&[0.0, 0.0]).unwrap();
        assert_eq!(label, ConceptId(0));
        assert!((post[0] - 0.5).abs() < 1e-12 && (post[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_concept_is_never_returned() {
        let mut w = symmetric_pair();
        w.concepts[0].prior = 0.0;
        w.concepts[1].prior = 1.0;
        let (label, post) = w.bayes_classify(&[-3.0, 0.0]).unwrap();
        assert_eq!(label, ConceptId(1));
        assert_eq!(post[0], 0.0);
    }

    #[test]
    fn splits_cover_the_right_concepts() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        let adj: Vec<ConceptId> = (1..=5).map(ConceptId).collect();
        let s = w.make_splits(ConceptId(0), &adj, 3, 1).unwrap();
        assert_eq!(s.retain.concepts().len(), 18);
        assert_eq!(s.adjacency.concepts().len(), 5);
        assert_eq!(s.unlearn.concepts().len(), 1);
        assert!(s.retain.concepts().is_disjoint(&s.adjacency.concepts()));
        assert!(!s.retain.concepts().contains(&ConceptId(0)));

        let empty = w.make_splits(ConceptId(0), &[], 3, 1).unwrap();
        assert!(empty.adjacency.is_empty());
        assert_eq!(empty.retain.concepts().len(), 23);
    }

    #[test]
    fn target_inside_adjacency_is_rejected() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        let adj = [ConceptId(0), ConceptId(1)];
        assert!(matches!(
            w.make_splits(ConceptId(0), &adj, 3, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        assert_eq!(ConceptWorld::from_json(&w.to_json().unwrap()).unwrap(), w);
    }

    #[test]
    fn csv_header() {
        let w = ConceptWorld::build(&WorldConfig::default()).unwrap();
        let mut buf = Vec::new();
        w.sample(ConceptId(2), 2, 0).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("concept_id,x_0,x_1\n2,"));
    }
}
