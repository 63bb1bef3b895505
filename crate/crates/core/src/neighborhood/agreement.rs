//! Empirical agreement between cosine k-NN and Gaussian naive Bayes as the
//! training set grows.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifiers::{GaussianNaiveBayes, KnnClassifier, Metric};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::world::{ConceptId, ConceptWorld, LabeledSamples};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KRule {
    /// `k = ⌈√N⌉`
    SqrtN,
    Fixed(usize),
}

impl KRule {
    pub fn k_for(self, n: usize) -> usize {
        match self {
            KRule::SqrtN => (n as f64).sqrt().ceil() as usize,
            KRule::Fixed(k) => k,
        }
        .clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Vec<usize>,
    pub k_rule: KRule,
    pub trials: usize,
    pub queries: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: vec![100, 1000, 10_000],
            k_rule: KRule::SqrtN,
            trials: 20,
            queries: 1000,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    pub n: usize,
    pub k: usize,
    pub mean: f64,
    pub stderr: f64,
    pub per_trial: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementCurve {
    pub points: Vec<AgreementPoint>,
}

impl AgreementCurve {
    /// Fraction of trials in which agreement never decreases along the grid.
    pub fn monotone_fraction(&self) -> f64 {
        let trials = self.points.first().map_or(0, |p| p.per_trial.len());
        if trials == 0 {
            return 0.0;
        }
        let ok = (0..trials)
            .filter(|&t| {
                self.points
                    .windows(2)
                    .all(|w| w[1].per_trial[t] >= w[0].per_trial[t])
            })
            .count();
        ok as f64 / trials as f64
    }

    /// CSV `N,mean_agreement,stderr`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["N", "mean_agreement", "stderr"])?;
        for p in &self.points {
            w.write_record([p.n.to_string(), format!("{:?}", p.mean), format!("{:?}", p.stderr)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` points with labels assigned round-robin over concepts, so every class
/// receives `⌊n/|C|⌋` or one more.
pub fn stratified_sample(world: &ConceptWorld, n: usize, seed: u64) -> Result<LabeledSamples> {
    let classes = world.len();
    let mut rng = rng_from_seed(seed);
    let mut points = Tensor2::zeros(n, world.dimension);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let spec = &world.concepts[i % classes];
        for (j, x) in points.row_mut(i).iter_mut().enumerate() {
            *x = spec.mean[j] + spec.variance[j].sqrt() * standard_normal(&mut rng);
        }
        labels.push(spec.id);
    }
    Ok(LabeledSamples { labels, points })
}

fn agreement(train: &LabeledSamples, queries: &Tensor2, k: usize) -> Result<f64> {
    let nb = GaussianNaiveBayes::fit(&train.points, &train.labels)?;
    let knn = KnnClassifier::fit(train.points.clone(), train.labels.clone(), Metric::Cosine)?;
    let mut same = 0usize;
    for q in queries.iter_rows() {
        if knn.classify(q, k)? == nb.classify(q)? {
            same += 1;
        }
    }
    Ok(same as f64 / queries.rows().max(1) as f64)
}

/// For each training size `N`, fits naive Bayes and cosine k-NN on the same
/// `N` stratified samples and measures how often they agree on held-out
/// mixture queries. Trials run in parallel with independent seeds.
pub fn agreement_sweep(world: &ConceptWorld, config: &SweepConfig) -> Result<AgreementCurve> {
    if config.grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("N grid must be strictly increasing"));
    }
    if config.trials == 0 || config.queries == 0 {
        return Err(Error::config("need at least one trial and one query"));
    }
    if let Some(&n) = config.grid.iter().find(|&&n| n < world.len()) {
        return Err(Error::config(format!(
            "N={n} is smaller than the number of classes ({})",
            world.len()
        )));
    }

    let trials: Vec<Vec<f64>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<f64>> {
            if world.len() == 1 {
                return Ok(vec![1.0; config.grid.len()]);
            }
            let trial_seed = derive_seed(config.seed, trial as u64);
            let queries = world.sample_mixture(config.queries, derive_seed(trial_seed, u64::MAX))?;
            config
                .grid
                .iter()
                .enumerate()
                .map(|(gi, &n)| {
                    let train = stratified_sample(world, n, derive_seed(trial_seed, gi as u64))?;
                    agreement(&train, &queries.points, config.k_rule.k_for(n))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let points = config
        .grid
        .iter()
        .enumerate()
        .map(|(gi, &n)| {
            let per_trial: Vec<f64> = trials.iter().map(|t| t[gi]).collect();
            let (mean, stderr) = mean_stderr(&per_trial);
            AgreementPoint {
                n,
                k: config.k_rule.k_for(n),
                mean,
                stderr,
                per_trial,
            }
        })
        .collect();
    Ok(AgreementCurve { points })
}

pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fraction of queries on which cosine k-NN and Euclidean k-NN disagree,
/// after centring training points and queries on the training mean.
pub fn metric_disagreement(
    world: &ConceptWorld,
    n_train: usize,
    n_queries: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let train = stratified_sample(world, n_train, derive_seed(seed, 1))?;
    let queries = world.sample_mixture(n_queries, derive_seed(seed, 2))?;
    let d = world.dimension;
    let mut centre = vec![0.0; d];
    for r in train.points.iter_rows() {
        for (c, v) in centre.iter_mut().zip(r) {
            *c += v / n_train as f64;
        }
    }
    let centred = |t: &Tensor2| {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (v, c) in out.row_mut(r).iter_mut().zip(&centre) {
                *v -= c;
            }
        }
        out
    };
    let train_c = centred(&train.points);
    let queries_c = centred(&queries.points);
    let cos = KnnClassifier::fit(train_c.clone(), train.labels.clone(), Metric::Cosine)?;
    let euc = KnnClassifier::fit(train_c, train.labels.clone(), Metric::Euclidean)?;
    let mut differ = 0usize;
    for q in queries_c.iter_rows() {
        if cos.classify(q, k)? != euc.classify(q, k)? {
            differ += 1;
        }
    }
    Ok(differ as f64 / n_queries.max(1) as f64)
}

/// Labels of a single-concept world are trivially unanimous; exposed for the
/// degenerate branch of the sweep.
pub fn single_class_world(dimension: usize) -> Result<ConceptWorld> {
    ConceptWorld::from_concepts(
        dimension,
        vec![crate::world::ConceptSpec {
            id: ConceptId(0),
            family: 0,
            mean: vec![1.0; dimension],
            variance: vec![1.0; dimension],
            prior: 1.0,
        }],
    )
}
