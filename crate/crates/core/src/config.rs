//! Run configuration: one JSON document with `serializer`, `model` and `train` sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::serializer::SerializerConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub serializer: SerializerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Config {
    /// Parses JSON; errors carry the dotted path of the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fills the model fields that follow from the data and the serializer:
    /// vocabulary size, the segment-embedding switch and a context at least
    /// as long as the longest accepted example.
    pub fn resolve(&mut self, vocab_size: usize) -> Result<()> {
        self.serializer.check()?;
        self.model.vocab_size = vocab_size;
        self.model.use_segment_embedding = self.serializer.features.segment_embedding;
        self.model.max_seq_len = self.model.max_seq_len.max(self.serializer.max_tokens);
        self.model.check()?;
        self.train.check()
    }
}
