//! Versioned JSON checkpoints of [`PolicyParams`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::policy::PolicyParams;

pub const CHECKPOINT_SCHEMA: &str = "varsynth.policy.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema: String,
    /// Global step count when the checkpoint was written.
    pub step: usize,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(params: PolicyParams, step: usize) -> Self {
        Self {
            schema: CHECKPOINT_SCHEMA.to_string(),
            step,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.schema != CHECKPOINT_SCHEMA {
            return Err(domain(format!(
                "unsupported checkpoint schema {:?}, expected {CHECKPOINT_SCHEMA:?}",
                ck.schema
            )));
        }
        ck.params.validate()?;
        Ok(ck)
    }
}
