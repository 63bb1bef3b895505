use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor2;
use crate::error::{Error, Result};

/// Named trainable matrices. Ordered by name so iteration (and therefore
/// every optimizer update) is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet(BTreeMap<String, Tensor2>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) -> Option<Tensor2> {
        self.0.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.0.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor2> {
        self.0.get(name).ok_or_else(|| Error::Lookup {
            kind: "parameter",
            id: name.to_string(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor2)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    /// Total number of scalars across all entries.
    pub fn scalar_count(&self) -> usize {
        self.0.values().map(Tensor2::len).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), Tensor2::zeros(v.rows(), v.cols())))
                .collect(),
        )
    }

    /// Checks that `other` has exactly the same keys and shapes.
    pub fn check_same_layout(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::contract(format!(
                "{what}: {} entries vs {}",
                self.0.len(),
                other.0.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.0.iter().zip(other.0.iter()) {
            if ka != kb {
                return Err(Error::contract(format!("{what}: key `{ka}` vs `{kb}`")));
            }
            if va.shape() != vb.shape() {
                return Err(Error::Shape {
                    op: "param layout",
                    left: va.shape(),
                    right: vb.shape(),
                });
            }
        }
        Ok(())
    }

    /// Flattened view of every scalar in key order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }
}

impl FromIterator<(String, Tensor2)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor2)>>(iter: I) -> Self {
        ParamSet(iter.into_iter().collect())
    }
}
