//! One JSON document driving the whole pipeline, with a canonical hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SplitSpec;
use crate::error::{Error, Result};
use crate::graph::build::GraphBuildConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// SHA-256 of the canonical JSON form (object keys sorted).
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("serialisable value");
    let bytes = serde_json::to_vec(&canonical).expect("serialisable value");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub graphs: GraphBuildConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable config")
    }

    pub fn validate(&self) -> Result<()> {
        self.graphs.struc2vec.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()
    }

    pub fn hash(&self) -> String {
        sha256_json(self)
    }
}
