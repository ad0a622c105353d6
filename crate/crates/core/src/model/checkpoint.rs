//! JSON checkpoint: config, vocabulary and named parameter tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::params::NamedTensor;

pub const CHECKPOINT_FORMAT: &str = "rvsd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            params: model.store.to_named(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck)
    }

    /// Rebuilds the model and checks every tensor against the config.
    pub fn into_model(self) -> Result<Model> {
        // Every size in the config shows up as the length of some stored
        // tensor, so a config larger than anything stored cannot match and
        // is rejected before the model is allocated.
        let longest = self.params.iter().map(|p| p.data.len()).max().unwrap_or(0);
        let c = &self.config;
        let layers = c.encoder_layers + c.decoder_layers;
        if [c.d, c.ffn_width, c.queries].iter().any(|&n| n > longest) || layers > self.params.len() {
            return Err(Error::Checkpoint("config does not match the stored tensors".into()));
        }
        let mut model = Model::new(self.config, self.vocab).map_err(|e| Error::Checkpoint(e.to_string()))?;
        model.store.load_named(&self.params)?;
        if self.params.iter().any(|p| p.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::Checkpoint("non-finite parameter value".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn save(model: &Model, path: &Path) -> Result<()> {
        std::fs::write(path, Self::from_model(model).to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)?.into_model()
    }
}
