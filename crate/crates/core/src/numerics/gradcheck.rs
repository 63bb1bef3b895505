//! Central finite-difference checks of tape gradients.

use super::{ParamSet, Tensor2};
use crate::error::Result;
use crate::rng::{normal_vec, rng_from_seed};

/// Analytic and numeric directional derivative along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalCheck {
    pub analytic: f64,
    pub numeric: f64,
}

impl DirectionalCheck {
    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs()).max(floor);
        (self.analytic - self.numeric).abs() / scale
    }
}

/// Unit-norm random direction with the same layout as `params`.
pub fn random_direction(params: &ParamSet, seed: u64) -> Result<ParamSet> {
    let mut rng = rng_from_seed(seed);
    let mut dir = ParamSet::new();
    for (name, t) in params.iter() {
        dir.insert(name.clone(), Tensor2::from_vec(t.rows(), t.cols(), normal_vec(&mut rng, t.len()))?);
    }
    let norm = dir.flatten().iter().map(|v| v * v).sum::<f64>().sqrt();
    for (_, t) in dir.iter_mut() {
        *t = t.scale(1.0 / norm);
    }
    Ok(dir)
}

fn shifted(params: &ParamSet, dir: &ParamSet, step: f64) -> Result<ParamSet> {
    let mut out = params.clone();
    for (name, t) in out.iter_mut() {
        *t = t.add(&dir.require(name)?.scale(step))?;
    }
    Ok(out)
}

/// Compares `⟨grad, dir⟩` with `(f(p + h·dir) − f(p − h·dir)) / 2h`.
pub fn directional_check<F>(params: &ParamSet, grads: &ParamSet, dir: &ParamSet, h: f64, f: F) -> Result<DirectionalCheck>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    grads.check_same_layout(params, "gradient")?;
    let analytic = grads
        .flatten()
        .iter()
        .zip(dir.flatten())
        .map(|(g, d)| g * d)
        .sum();
    let plus = f(&shifted(params, dir, h)?)?;
    let minus = f(&shifted(params, dir, -h)?)?;
    Ok(DirectionalCheck {
        analytic,
        numeric: (plus - minus) / (2.0 * h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_directional_derivative() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor2::from_rows(&[[1.0, -2.0]]).unwrap());
        // f = Σ w², ∇f = 2w
        let mut g = ParamSet::new();
        g.insert("w", Tensor2::from_rows(&[[2.0, -4.0]]).unwrap());
        let dir = random_direction(&p, 1).unwrap();
        let c = directional_check(&p, &g, &dir, 1e-5, |q| Ok(q.require("w")?.map(|v| v * v).sum())).unwrap();
        assert!(c.relative_error(1e-12) < 1e-8, "{c:?}");
    }
}
