use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Linear β schedule with cumulative products. Steps are 1-based: index
/// `t` in `1..=T` refers to `beta[t - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Serialized form: only the defining parameters are stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl TryFrom<ScheduleSpec> for NoiseSchedule {
    type Error = Error;

    fn try_from(s: ScheduleSpec) -> Result<Self> {
        NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end)
    }
}

impl From<NoiseSchedule> for ScheduleSpec {
    fn from(s: NoiseSchedule) -> Self {
        s.spec()
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::config("diffusion needs at least 2 steps"));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "beta range must satisfy 0 < start < end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for b in &beta {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        Ok(Self {
            beta_start,
            beta_end,
            beta,
            alpha_bar,
        })
    }

    /// The usual 1000-step endpoints (1e-4, 0.02) stretched by `1000/steps`,
    /// so a short chain still ends close to pure noise. Needs `steps > 20`.
    pub fn scaled_linear(steps: usize) -> Result<Self> {
        let stretch = 1000.0 / steps.max(1) as f64;
        Self::linear(steps, 1e-4 * stretch, 0.02 * stretch)
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps(),
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check(t)?])
    }

    /// `ᾱ_{t-1}`, with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> Result<f64> {
        let i = self.check(t)?;
        Ok(if i == 0 { 1.0 } else { self.alpha_bar[i - 1] })
    }

    /// Variance of the true reverse posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(self.beta(t)? * (1.0 - self.alpha_bar_prev(t)?) / (1.0 - ab))
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps`, for an explicit `ᾱ`.
pub fn noise_with_alpha_bar(x0: &[f64], alpha_bar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::Shape {
            op: "forward_noise",
            left: (1, x0.len()),
            right: (1, eps.len()),
        });
    }
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Closed-form forward noising of one point at step `t`.
pub fn forward_noise(schedule: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    noise_with_alpha_bar(x0, schedule.alpha_bar(t)?, eps)
}

/// Row-wise forward noising with a per-row timestep.
pub fn forward_noise_batch(
    schedule: &NoiseSchedule,
    x0: &Tensor2,
    t: &[usize],
    eps: &Tensor2,
) -> Result<Tensor2> {
    if x0.shape() != eps.shape() || t.len() != x0.rows() {
        return Err(Error::Shape {
            op: "forward_noise_batch",
            left: x0.shape(),
            right: eps.shape(),
        });
    }
    let mut out = Tensor2::zeros(x0.rows(), x0.cols());
    for (r, &step) in t.iter().enumerate() {
        let row = forward_noise(schedule, x0.row(r), step, eps.row(r))?;
        out.row_mut(r).copy_from_slice(&row);
    }
    Ok(out)
}

/// Inverts the forward map given the noise: `(x_t − √(1−ᾱ)·eps) / √ᾱ`.
pub fn predict_x0(schedule: &NoiseSchedule, x_t: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    let ab = schedule.alpha_bar(t)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.iter().zip(eps).map(|(x, e)| (x - s * e) / a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal};

    #[test]
    fn alpha_bar_is_the_running_product_and_decreasing() {
        let s = NoiseSchedule::scaled_linear(100).unwrap();
        let mut prod = 1.0;
        for t in 1..=100 {
            prod *= 1.0 - s.beta(t).unwrap();
            assert!((s.alpha_bar(t).unwrap() - prod).abs() < 1e-12);
        }
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(1).unwrap() < 1.0 && s.alpha_bar(100).unwrap() > 0.0);
        assert!(s.alpha_bar(100).unwrap() < 1e-3);
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        assert!(matches!(forward_noise(&s, &[1.0], 0, &[0.0]), Err(Error::Contract(_))));
        assert!(matches!(forward_noise(&s, &[1.0], 11, &[0.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_noise_endpoints_and_hand_value() {
        assert_eq!(noise_with_alpha_bar(&[1.5, -2.0], 1.0, &[3.0, 4.0]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(noise_with_alpha_bar(&[1.5, -2.0], 0.0, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let x = noise_with_alpha_bar(&[1.0, 0.0], 0.25, &[0.0, 1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-15);
        assert!((x[1] - 0.75f64.sqrt()).abs() < 1e-15);
        assert!((x[1] - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn empirical_variance_matches_one_minus_alpha_bar() {
        let s = NoiseSchedule::scaled_linear(100).unwrap();
        let mut rng = rng_from_seed(3);
        let x0 = [0.7, -1.2];
        for t in [1, 10, 50, 100] {
            let n = 10_000;
            let mut sum = [0.0; 2];
            let mut sq = [0.0; 2];
            for _ in 0..n {
                let eps = [standard_normal(&mut rng), standard_normal(&mut rng)];
                let x = forward_noise(&s, &x0, t, &eps).unwrap();
                for j in 0..2 {
                    sum[j] += x[j];
                    sq[j] += x[j] * x[j];
                }
            }
            let expected = 1.0 - s.alpha_bar(t).unwrap();
            for j in 0..2 {
                let mean = sum[j] / n as f64;
                let var = sq[j] / n as f64 - mean * mean;
                assert!((var / expected - 1.0).abs() < 0.05, "t={t} dim {j}: {var} vs {expected}");
            }
        }
    }

    #[test]
    fn true_noise_recovers_x0() {
        let s = NoiseSchedule::scaled_linear(100).unwrap();
        let x0 = [0.3, -0.8, 2.0];
        let eps = [1.1, 0.4, -0.6];
        for t in [1, 37, 100] {
            let xt = forward_noise(&s, &x0, t, &eps).unwrap();
            let back = predict_x0(&s, &xt, t, &eps).unwrap();
            for (a, b) in back.iter().zip(&x0) {
                assert!((a - b).abs() < 1e-9, "t={t}");
            }
        }
    }

    #[test]
    fn serde_stores_only_the_definition() {
        let s = NoiseSchedule::scaled_linear(50).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(!text.contains("alpha_bar"));
        let back: NoiseSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<NoiseSchedule>(r#"{"steps":5,"beta_start":0.5,"beta_end":0.1}"#).is_err());
    }
}
