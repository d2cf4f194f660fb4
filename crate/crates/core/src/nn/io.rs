//! Versioned JSON dump of a network and the objective it was trained with.
//!
//! Floats are written in shortest round-trip form and parsed with exact
//! rounding, so save/load reproduces every parameter bit for bit.

use serde::{Deserialize, Serialize};

use super::loss::LossSpec;
use super::network::Network;
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "evtlstm-network";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub network: Network,
    pub loss: LossSpec,
}

impl ModelFile {
    pub fn new(network: Network, loss: LossSpec) -> Self {
        Self {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            network,
            loss,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        file.network.validate()?;
        Ok(file)
    }
}
