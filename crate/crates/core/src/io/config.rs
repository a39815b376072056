//! JSON run configuration. Missing fields take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoders::DecoderConfig;
use crate::error::{Error, Result};
use crate::pretrain::PretrainConfig;
use crate::runtime::{SlidingWindowConfig, TrainConfig};
use crate::swin::EncoderConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub sliding: SlidingWindowConfig,
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: byte_offset(text, e.line(), e.column()) as u64,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.train.validate()?;
        self.sliding.validate()
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    start + column.saturating_sub(1)
}
