//! Run configuration shared by every command: one JSON document with a
//! section per stage. Missing sections and fields take their defaults;
//! unknown fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SynthConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::msa::MsaConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the model and generator seeds.
    pub seed: Option<u64>,
    /// Thresholds for the standalone `msa` command.
    pub msa: MsaConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.msa.validate()?;
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Copy with the global seed pushed into every seeded section.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.synth.seed = seed;
            out.model.seed = seed;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
