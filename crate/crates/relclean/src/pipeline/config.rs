use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DEFAULT_HEAD_MIN, DEFAULT_TAIL_MAX};
use crate::error::{Error, Result};
use crate::neg_nsd::NegNsdConfig;
use crate::nsc::NscConfig;
use crate::pos_nsd::PosNsdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub neg_nsd: bool,
    pub pos_nsd: bool,
    pub nsc: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            neg_nsd: true,
            pos_nsd: true,
            nsc: true,
        }
    }
}

impl StageToggles {
    pub const NONE: StageToggles = StageToggles {
        neg_nsd: false,
        pos_nsd: false,
        nsc: false,
    };

    /// Applies a `name=on|off` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("stage toggle {spec:?} is not name=on|off")))?;
        let on = match value.trim() {
            "on" | "true" | "1" => true,
            "off" | "false" | "0" => false,
            v => return Err(Error::InvalidConfig(format!("stage toggle value {v:?}"))),
        };
        match name.trim().replace('-', "_").as_str() {
            "neg_nsd" => self.neg_nsd = on,
            "pos_nsd" => self.pos_nsd = on,
            "nsc" => self.nsc = on,
            other => return Err(Error::InvalidConfig(format!("unknown stage {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub head_min: u64,
    pub tail_max: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            head_min: DEFAULT_HEAD_MIN,
            tail_max: DEFAULT_TAIL_MAX,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub input: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Whole-pipeline configuration, read from a TOML file:
///
/// ```toml
/// seed = 7
///
/// [stages]
/// neg_nsd = true
/// pos_nsd = true
/// nsc = true
///
/// [partition]
/// head_min = 10000
/// tail_max = 500
///
/// [io]
/// input = "data/train.jsonl"
/// vocab = "data/predicates.txt"
/// out_dir = "out"
///
/// [neg_nsd]
/// lambda = 0.1
/// thresholds = { head = 0.95, body = 0.90, tail = 0.60 }
///
/// [pos_nsd]
/// alpha = { head = 12.5, body = 25.0, tail = 50.0 }
///
/// [nsc]
/// k = 3
/// ```
///
/// Every key is optional. A top-level `seed` overrides `neg_nsd.seed`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub stages: StageToggles,
    pub partition: PartitionConfig,
    pub io: IoConfig,
    pub neg_nsd: NegNsdConfig,
    pub pos_nsd: PosNsdConfig,
    pub nsc: NscConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.partition.tail_max > self.partition.head_min {
            return Err(Error::InvalidConfig(format!(
                "partition tail_max ({}) exceeds head_min ({})",
                self.partition.tail_max, self.partition.head_min
            )));
        }
        self.effective_neg_nsd().validate()?;
        self.pos_nsd.validate()?;
        self.nsc.validate()
    }

    /// Neg-NSD settings with the global seed applied.
    pub fn effective_neg_nsd(&self) -> NegNsdConfig {
        let mut cfg = self.neg_nsd.clone();
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg
    }

    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            stages: self.stages,
            partition: self.partition,
            neg_nsd: self.effective_neg_nsd(),
            pos_nsd: self.pos_nsd.clone(),
            nsc: self.nsc.clone(),
        }
    }
}

/// The algorithmic part of a [`PipelineConfig`]; paths are left out so that
/// reports do not depend on where files live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub stages: StageToggles,
    pub partition: PartitionConfig,
    pub neg_nsd: NegNsdConfig,
    pub pos_nsd: PosNsdConfig,
    pub nsc: NscConfig,
}
