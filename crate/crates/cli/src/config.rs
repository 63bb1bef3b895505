//! Run configuration: one TOML document whose every key has a default,
//! plus dotted `key=value` overrides.

use std::path::Path;

use fade_core::diffusion::BaseTrainConfig;
use fade_core::evaluation::EvalConfig;
use fade_core::fade::FadeHyper;
use fade_core::neighborhood::{PenultimateConfig, SweepConfig};
use fade_core::world::{ConceptId, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub world: WorldConfig,
    pub model: ModelSection,
    pub train: BaseTrainConfig,
    pub neighborhood: NeighborhoodSection,
    pub fade: FadeHyper,
    pub eval: EvalConfig,
    pub report: ReportSection,
    pub ablation: AblationSection,
    pub theorem1: SweepConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Seed of the denoiser's initial weights.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { seed: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    Raw,
    Penultimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborhoodSection {
    pub target: usize,
    pub k: usize,
    /// Samples per concept behind each mean embedding.
    pub samples: usize,
    pub seed: u64,
    pub embedder: EmbedderKind,
    pub penultimate: PenultimateConfig,
}

impl Default for NeighborhoodSection {
    fn default() -> Self {
        Self {
            target: 0,
            k: 5,
            samples: 256,
            seed: 5,
            embedder: EmbedderKind::Raw,
            penultimate: PenultimateConfig::default(),
        }
    }
}

impl NeighborhoodSection {
    pub fn target(&self) -> ConceptId {
        ConceptId(self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Retain concepts; empty means every concept outside the target and
    /// its adjacency set.
    pub retain: Vec<usize>,
    pub buckets: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            retain: Vec::new(),
            buckets: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2] }
    }
}

impl LabConfig {
    /// Reads `path` (or starts from defaults), applies `overrides` in order
    /// and validates the result against the schema.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::input(p, e.to_string()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::schema(p.display().to_string(), e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> CliResult<Self> {
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            CliError::schema(key, e.into_inner().to_string())
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::schema("<config>", e.to_string()))
    }
}

/// Sets a dotted key such as `fade.lr=0.01`. The value is read as a TOML
/// value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::schema(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::schema(key, "empty key segment"));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));

    let (last, parents) = parts.split_last().expect("split yields at least one segment");
    let mut node = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::schema(parts[..=i].join("."), "not a table"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = LabConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = LabConfig::from_table(text.parse().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = LabConfig::load(None, &["fade.lr=0.5".into(), "neighborhood.embedder=penultimate".into()]).unwrap();
        assert_eq!(cfg.fade.lr, 0.5);
        assert_eq!(cfg.neighborhood.embedder, EmbedderKind::Penultimate);
        assert_eq!(cfg.world, WorldConfig::default());
    }

    #[test]
    fn schema_errors_name_the_key() {
        let err = LabConfig::load(None, &["fade.lrr=1".into()]).unwrap_err();
        assert!(matches!(&err, CliError::Schema { key, .. } if key == "fade.lrr"), "{err}");
        assert!(err.to_string().contains("lrr"));

        let err = LabConfig::load(None, &["train.steps=\"many\"".into()]).unwrap_err();
        assert!(matches!(&err, CliError::Schema { key, .. } if key == "train.steps"), "{err}");

        assert!(LabConfig::load(None, &["nonsense".into()]).is_err());
        assert!(LabConfig::load(None, &["fade.lr.x=1".into()]).is_err());
    }
}
