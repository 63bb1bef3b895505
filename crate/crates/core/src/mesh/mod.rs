//! Low-rank adapters on frozen base matrices: `W = W₀ + B·A`.
//!
//! `B` starts at zero and `A` at small Gaussian values, so an adapted model
//! reproduces its base exactly until the factors are trained. Each adapter
//! records a SHA-256 checksum of its `W₀` so base mutation is detectable.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor2};
use crate::rng::{normal_vec, rng_from_seed};

pub const DEFAULT_RANK: usize = 4;
pub const INIT_STD: f64 = 0.02;

/// Metadata for one adapted matrix; the factors live in [`AdapterSet::params`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshAdapter {
    pub base_ref: String,
    pub base_checksum: String,
    /// `(d, k)` of `W₀`.
    pub shape: (usize, usize),
    pub rank: usize,
    pub enabled: bool,
}

/// Every adapter of one model plus their trainable factors, named
/// `<matrix>.mesh_a` (`r × k`) and `<matrix>.mesh_b` (`d × r`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdapterSet {
    pub adapters: BTreeMap<String, MeshAdapter>,
    pub params: ParamSet,
}

/// `(A, B)` parameter names for a base matrix.
pub fn factor_names(base: &str) -> (String, String) {
    (format!("{base}.mesh_a"), format!("{base}.mesh_b"))
}

/// SHA-256 over the shape and little-endian values.
pub fn checksum(t: &Tensor2) -> String {
    let mut h = Sha256::new();
    h.update((t.rows() as u64).to_le_bytes());
    h.update((t.cols() as u64).to_le_bytes());
    h.update(t.to_le_bytes());
    hex::encode(h.finalize())
}

impl AdapterSet {
    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn get(&self, base: &str) -> Option<&MeshAdapter> {
        self.adapters.get(base)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn require(&self, base: &str) -> Result<&MeshAdapter> {
        self.adapters.get(base).ok_or_else(|| Error::Lookup {
            kind: "adapter",
            id: base.to_string(),
        })
    }

    /// `(A, B)` of an adapter.
    pub fn factors(&self, base: &str) -> Result<(&Tensor2, &Tensor2)> {
        self.require(base)?;
        let (a, b) = factor_names(base);
        Ok((self.params.require(&a)?, self.params.require(&b)?))
    }

    /// Dense `ΔW = B·A`.
    pub fn merge_delta(&self, base: &str) -> Result<Tensor2> {
        let (a, b) = self.factors(base)?;
        b.matmul(a)
    }

    /// `W₀ + B·A` if an enabled adapter sits on `base`, else `None`.
    pub fn effective(&self, base: &str, w0: &Tensor2) -> Result<Option<Tensor2>> {
        match self.adapters.get(base) {
            Some(ad) if ad.enabled => Ok(Some(w0.add(&self.merge_delta(base)?)?)),
            _ => Ok(None),
        }
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.adapters.values_mut().for_each(|a| a.enabled = enabled);
    }

    /// Checks every recorded checksum against the given base weights.
    pub fn verify_base(&self, base: &ParamSet) -> Result<()> {
        for (name, ad) in &self.adapters {
            let actual = checksum(base.require(name)?);
            if actual != ad.base_checksum {
                return Err(Error::Integrity(format!(
                    "base matrix {name} changed under its adapter (expected {}, found {actual})",
                    ad.base_checksum
                )));
            }
        }
        Ok(())
    }
}

/// Attaches a rank-`rank` adapter to each named base matrix.
pub fn attach(model: &mut NoisePredictor, targets: &[String], rank: usize, seed: u64) -> Result<()> {
    if rank == 0 {
        return Err(Error::config("adapter rank must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut staged = model.adapters().clone();
    for name in targets {
        if staged.adapters.contains_key(name) {
            return Err(Error::config(format!("matrix {name} already carries an adapter")));
        }
        if !model.adaptable_matrices().contains(name) {
            return Err(Error::config(format!("{name} is not an adaptable matrix")));
        }
        let w0 = model.params().require(name)?;
        let (d, k) = w0.shape();
        if 2 * rank > d.min(k) {
            return Err(Error::config(format!(
                "rank {rank} too large for {name} ({d}x{k}); need r <= min(d, k)/2"
            )));
        }
        let (a_name, b_name) = factor_names(name);
        staged
            .params
            .insert(a_name, Tensor2::from_vec(rank, k, normal_vec(&mut rng, rank * k))?.scale(INIT_STD));
        staged.params.insert(b_name, Tensor2::zeros(d, rank));
        staged.adapters.insert(
            name.clone(),
            MeshAdapter {
                base_ref: name.clone(),
                base_checksum: checksum(w0),
                shape: (d, k),
                rank,
                enabled: true,
            },
        );
    }
    model.replace_adapters(staged);
    Ok(())
}

/// Removes every adapter after checking the base weights were not touched.
/// Returns the removed adapters; a model without adapters is left as is.
pub fn detach(model: &mut NoisePredictor) -> Result<AdapterSet> {
    model.adapters().verify_base(model.params())?;
    Ok(model.replace_adapters(AdapterSet::default()))
}

/// Re-attaches stored adapters, refusing them if the base weights differ
/// from the ones they were trained against.
pub fn load_adapters(model: &mut NoisePredictor, set: AdapterSet) -> Result<()> {
    if !model.adapters().is_empty() {
        return Err(Error::config("model already carries adapters"));
    }
    set.verify_base(model.params())?;
    for (name, ad) in &set.adapters {
        let (a, b) = set.factors(name)?;
        let (d, k) = ad.shape;
        if a.shape() != (ad.rank, k) || b.shape() != (d, ad.rank) {
            return Err(Error::config(format!("adapter {name} factors have the wrong shape")));
        }
    }
    model.replace_adapters(set);
    Ok(())
}

pub const ADAPTER_FORMAT: &str = "fade-lab/mesh";
pub const ADAPTER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub format: String,
    pub version: u32,
    pub adapters: AdapterSet,
}

impl AdapterCheckpoint {
    pub fn new(adapters: AdapterSet) -> Self {
        Self {
            format: ADAPTER_FORMAT.into(),
            version: ADAPTER_VERSION,
            adapters,
        }
    }

    pub fn from_json(text: &str) -> Result<AdapterSet> {
        let ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format != ADAPTER_FORMAT || ckpt.version != ADAPTER_VERSION {
            return Err(Error::config(format!(
                "unsupported adapter checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt.adapters)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Singular values, largest first.
pub fn singular_values(t: &Tensor2) -> Vec<f64> {
    let m = DMatrix::from_row_slice(t.rows(), t.cols(), t.data());
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(t: &Tensor2, rel_tol: f64) -> usize {
    let s = singular_values(t);
    let max = s.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * max).count()
}

/// Rank of every `ΔW` in the set, by base matrix name.
pub fn delta_ranks(set: &AdapterSet, rel_tol: f64) -> Result<Vec<(String, usize, usize)>> {
    set.adapters
        .iter()
        .map(|(name, ad)| Ok((name.clone(), numerical_rank(&set.merge_delta(name)?, rel_tol), ad.rank)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_product_delta() {
        let mut set = AdapterSet::default();
        set.adapters.insert(
            "w".into(),
            MeshAdapter {
                base_ref: "w".into(),
                base_checksum: String::new(),
                shape: (2, 2),
                rank: 1,
                enabled: true,
            },
        );
        set.params.insert("w.mesh_b", Tensor2::from_rows(&[[1.0], [2.0]]).unwrap());
        set.params.insert("w.mesh_a", Tensor2::from_rows(&[[3.0, 4.0]]).unwrap());
        let delta = set.merge_delta("w").unwrap();
        assert_eq!(delta, Tensor2::from_rows(&[[3.0, 4.0], [6.0, 8.0]]).unwrap());
        assert_eq!(numerical_rank(&delta, 1e-10), 1);

        set.params.insert("w.mesh_b", Tensor2::zeros(2, 1));
        assert_eq!(set.merge_delta("w").unwrap(), Tensor2::zeros(2, 2));
    }

    #[test]
    fn singular_values_of_a_diagonal() {
        let t = Tensor2::from_rows(&[[3.0, 0.0, 0.0], [0.0, -5.0, 0.0]]).unwrap();
        let s = singular_values(&t);
        assert!((s[0] - 5.0).abs() < 1e-12 && (s[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn checksum_sees_shape_and_values() {
        let a = Tensor2::zeros(2, 3);
        assert_ne!(checksum(&a), checksum(&Tensor2::zeros(3, 2)));
        let mut b = a.clone();
        b.set(1, 1, 1e-300);
        assert_ne!(checksum(&a), checksum(&b));
        assert_eq!(checksum(&a), checksum(&a.clone()));
    }
}
