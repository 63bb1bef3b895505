//! Brute-force k-NN and Gaussian naive Bayes.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::world::ConceptId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Cosine,
    Euclidean,
}

/// Training set for brute-force nearest-neighbour voting.
#[derive(Debug, Clone)]
pub struct KnnClassifier {
    points: Tensor2,
    norms: Vec<f64>,
    labels: Vec<ConceptId>,
    metric: Metric,
}

impl KnnClassifier {
    pub fn fit(points: Tensor2, labels: Vec<ConceptId>, metric: Metric) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::contract("k-NN needs a non-empty training set"));
        }
        if points.rows() != labels.len() {
            return Err(Error::contract(format!(
                "{} training points but {} labels",
                points.rows(),
                labels.len()
            )));
        }
        let norms: Vec<f64> = points
            .iter_rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        if metric == Metric::Cosine && norms.iter().any(|&n| n == 0.0) {
            return Err(Error::Degenerate("zero-norm training embedding".into()));
        }
        Ok(Self {
            points,
            norms,
            labels,
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Higher is closer for both metrics.
    fn scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.points.cols() {
            return Err(Error::Shape {
                op: "knn query",
                left: (1, query.len()),
                right: (1, self.points.cols()),
            });
        }
        match self.metric {
            Metric::Cosine => {
                let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
                if qn == 0.0 {
                    return Err(Error::Degenerate("zero-norm query embedding".into()));
                }
                Ok(self
                    .points
                    .iter_rows()
                    .zip(&self.norms)
                    .map(|(r, n)| r.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / (n * qn))
                    .collect())
            }
            Metric::Euclidean => Ok(self
                .points
                .iter_rows()
                .map(|r| -r.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .collect()),
        }
    }

    /// Indices of the `k` nearest training points; equal scores keep
    /// training order.
    pub fn neighbours(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len() {
            return Err(Error::config(format!(
                "k must be in 1..={}, got {k}",
                self.len()
            )));
        }
        let scores = self.scores(query)?;
        let cmp = |a: &usize, b: &usize| {
            scores[*b]
                .partial_cmp(&scores[*a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, cmp);
            idx.truncate(k);
        }
        idx.sort_by(cmp);
        Ok(idx)
    }

    /// Majority label among the `k` nearest points; vote ties go to the
    /// lowest concept id.
    pub fn classify(&self, query: &[f64], k: usize) -> Result<ConceptId> {
        let mut votes: BTreeMap<ConceptId, usize> = BTreeMap::new();
        for i in self.neighbours(query, k)? {
            *votes.entry(self.labels[i]).or_default() += 1;
        }
        let mut best = (ConceptId(0), 0);
        for (c, n) in votes {
            if n > best.1 {
                best = (c, n);
            }
        }
        Ok(best.0)
    }
}

/// One-shot convenience wrapper around [`KnnClassifier`].
pub fn knn_classify(
    points: &Tensor2,
    labels: &[ConceptId],
    query: &[f64],
    k: usize,
) -> Result<ConceptId> {
    KnnClassifier::fit(points.clone(), labels.to_vec(), Metric::Cosine)?.classify(query, k)
}

/// Per-class log prior, per-dimension mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: ConceptId,
    pub prior: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNaiveBayes {
    classes: Vec<ClassStats>,
}

impl GaussianNaiveBayes {
    pub fn from_stats(mut classes: Vec<ClassStats>) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::contract("naive Bayes needs at least two classes"));
        }
        let d = classes[0].mean.len();
        for c in &classes {
            if c.mean.len() != d || c.variance.len() != d {
                return Err(Error::contract("class statistics have mismatched dimensions"));
            }
            if c.variance.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Degenerate(format!(
                    "class {} has zero variance in a fitted dimension",
                    c.class
                )));
            }
            if !(c.prior >= 0.0) {
                return Err(Error::contract("negative class prior"));
            }
        }
        classes.sort_by_key(|c| c.class);
        Ok(Self { classes })
    }

    /// Maximum-likelihood fit; priors are empirical class frequencies.
    pub fn fit(points: &Tensor2, labels: &[ConceptId]) -> Result<Self> {
        if points.rows() != labels.len() {
            return Err(Error::contract("points and labels differ in length"));
        }
        let d = points.cols();
        let mut groups: BTreeMap<ConceptId, Vec<&[f64]>> = BTreeMap::new();
        for (row, &y) in points.iter_rows().zip(labels) {
            groups.entry(y).or_default().push(row);
        }
        let total = labels.len() as f64;
        let stats = groups
            .into_iter()
            .map(|(class, rows)| {
                let n = rows.len() as f64;
                let mut mean = vec![0.0; d];
                for r in &rows {
                    for (m, v) in mean.iter_mut().zip(r.iter()) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut variance = vec![0.0; d];
                for r in &rows {
                    for ((s, v), m) in variance.iter_mut().zip(r.iter()).zip(&mean) {
                        *s += (v - m).powi(2);
                    }
                }
                variance.iter_mut().for_each(|s| *s /= n);
                ClassStats {
                    class,
                    prior: n / total,
                    mean,
                    variance,
                }
            })
            .collect();
        Self::from_stats(stats)
    }

    pub fn classes(&self) -> &[ClassStats] {
        &self.classes
    }

    /// `argmax_c log P(c) + Σ_j log N(x_j; μ_cj, σ²_cj)`; ties go to the
    /// lowest concept id.
    pub fn classify(&self, query: &[f64]) -> Result<ConceptId> {
        let mut best = (self.classes[0].class, f64::NEG_INFINITY);
        for c in &self.classes {
            if query.len() != c.mean.len() {
                return Err(Error::Shape {
                    op: "naive Bayes query",
                    left: (1, query.len()),
                    right: (1, c.mean.len()),
                });
            }
            if c.prior == 0.0 {
                continue;
            }
            let mut score = c.prior.ln();
            for j in 0..query.len() {
                let v = c.variance[j];
                score -= 0.5 * ((query[j] - c.mean[j]).powi(2) / v + (2.0 * PI * v).ln());
            }
            if score > best.1 {
                best = (c.class, score);
            }
        }
        Ok(best.0)
    }
}
