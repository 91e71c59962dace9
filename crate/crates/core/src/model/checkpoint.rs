//! JSON checkpoint container. Floats are written in shortest round-trip form
//! and read back with exact parsing, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params};
use crate::error::{DktError, Result};

const FORMAT_TAG: &str = "dkt-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub num_skills: usize,
    pub config: ModelConfig,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: Params) -> Self {
        Checkpoint {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            num_skills: params.num_skills(),
            config,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| DktError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| DktError::Checkpoint(e.to_string()))?;
        ck.check_consistency()?;
        Ok(ck)
    }

    fn check_consistency(&self) -> Result<()> {
        if self.format != FORMAT_TAG || self.version != FORMAT_VERSION {
            return Err(DktError::Checkpoint(format!(
                "unsupported container {} v{}",
                self.format, self.version
            )));
        }
        self.params.validate()?;
        if self.params.num_skills() != self.num_skills
            || self.params.hidden_size() != self.config.hidden_size
            || self.params.cell_kind() != self.config.cell_kind
        {
            return Err(DktError::Checkpoint(
                "parameters disagree with the recorded configuration".into(),
            ));
        }
        Ok(())
    }

    /// Refuses a dataset or model shape other than the one this checkpoint was
    /// trained for.
    pub fn ensure_compatible(&self, num_skills: usize, hidden: Option<usize>) -> Result<()> {
        if num_skills != self.num_skills {
            return Err(DktError::Checkpoint(format!(
                "checkpoint has M={} but the data has M={num_skills}",
                self.num_skills
            )));
        }
        if let Some(h) = hidden {
            if h != self.config.hidden_size {
                return Err(DktError::Checkpoint(format!(
                    "checkpoint has H={} but H={h} was requested",
                    self.config.hidden_size
                )));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
