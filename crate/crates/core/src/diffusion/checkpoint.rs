use serde::{Deserialize, Serialize};

use super::model::{DenoiserConfig, NoisePredictor};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::ParamSet;

pub const CHECKPOINT_FORMAT: &str = "fade-lab/denoiser";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint of the base weights. Adapters are stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserCheckpoint {
    pub format: String,
    pub version: u32,
    pub config: DenoiserConfig,
    pub schedule: NoiseSchedule,
    pub data_scale: f64,
    pub params: ParamSet,
}

impl NoisePredictor {
    pub fn to_checkpoint(&self) -> DenoiserCheckpoint {
        DenoiserCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config().clone(),
            schedule: self.schedule().clone(),
            data_scale: self.data_scale(),
            params: self.params().clone(),
        }
    }

    pub fn from_checkpoint(ckpt: DenoiserCheckpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        NoisePredictor::from_parts(ckpt.config, ckpt.schedule, ckpt.data_scale, ckpt.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(text)?)
    }
}
