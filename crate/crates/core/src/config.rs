//! Run configuration.
//!
//! Parsing is strict: unknown keys are errors, absent keys take defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::consensus::ExtractionRule;
use crate::error::{config, Error, Result};
use crate::eval::EvalConfig;
use crate::grpo::OptimizerState;
use crate::init::InitConfig;
use crate::synthesis::FilterConfig;
use crate::task::FamilyConfig;

/// Stage gates and the loop shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// First global step at which filtering, synthesis and IGE run.
    pub e_intra: usize,
    /// First global step at which CGE runs.
    pub e_cross: usize,
    pub episodes: usize,
    /// Queries per step.
    pub batch_size: usize,
    pub ige: bool,
    pub cge: bool,
    /// Within a step, run IGE before CGE.
    pub ige_before_cge: bool,
    /// Re-synthesize cached clusters at the start of every episode.
    pub regenerate_clusters: bool,
    /// Queries that fail the difficulty gate still get a plain update.
    pub train_rejected: bool,
    /// Each IGE member votes on its own rollouts. When false, variants reuse the origin's label.
    pub revote_members: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            e_intra: 40,
            e_cross: 60,
            episodes: 10,
            batch_size: 8,
            ige: true,
            cge: true,
            ige_before_cge: true,
            regenerate_clusters: false,
            train_rejected: true,
            revote_members: true,
        }
    }
}

impl TrainSchedule {
    pub fn steps_per_episode(&self, dataset_size: usize) -> usize {
        dataset_size.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, dataset_size: usize) -> usize {
        self.episodes * self.steps_per_episode(dataset_size)
    }

    /// 0 = plain updates, 1 = filter + synthesis + IGE, 2 = IGE and CGE.
    pub fn stage(&self, step: usize) -> u8 {
        if step < self.e_intra {
            0
        } else if step < self.e_cross {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Episode shuffling.
    pub data: u64,
    pub rollout: u64,
    pub init: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            data: 11,
            rollout: 23,
            init: 37,
            eval: 41,
        }
    }
}

/// Inputs of the remote audit pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    /// Inline queries, used when `dataset_path` is absent.
    pub queries: Vec<String>,
    /// JSON array of query strings, or one query per line.
    pub dataset_path: Option<PathBuf>,
    /// Synthesis prompt with `{query}` and `{answer}` placeholders. Built-in default when absent.
    pub prompt_template_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub family: FamilyConfig,
    pub filter: FilterConfig,
    pub optimizer: OptimizerState,
    pub schedule: TrainSchedule,
    /// Rollouts per group, `N`.
    pub group_size: usize,
    pub rollout_temperature: f64,
    pub eval: EvalConfig,
    pub seeds: Seeds,
    pub init: InitConfig,
    pub extraction: ExtractionRule,
    pub telemetry_path: Option<PathBuf>,
    pub audit: AuditSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            family: FamilyConfig::default(),
            filter: FilterConfig::default(),
            optimizer: OptimizerState::default(),
            schedule: TrainSchedule::default(),
            group_size: 32,
            rollout_temperature: 0.6,
            eval: EvalConfig::default(),
            seeds: Seeds::default(),
            init: InitConfig::default(),
            extraction: ExtractionRule::default(),
            telemetry_path: None,
            audit: AuditSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        self.filter.validate()?;
        self.optimizer.validate()?;
        self.eval.validate(self.family.template_count)?;
        self.init.validate()?;
        if self.group_size < 2 {
            return Err(config("group_size must be >= 2"));
        }
        if !(self.rollout_temperature > 0.0) {
            return Err(config("rollout_temperature must be > 0"));
        }
        let s = &self.schedule;
        if s.e_intra > s.e_cross {
            return Err(config("schedule.e_intra > schedule.e_cross"));
        }
        if s.batch_size == 0 {
            return Err(config("schedule.batch_size must be >= 1"));
        }
        if self.filter.k > 0 {
            let pool = self.variant_pool().len();
            // The origin template is excluded from its own variants.
            if self.filter.k + 1 > pool {
                return Err(config(format!(
                    "filter.k = {} needs at least {} non-held-out templates, have {pool}",
                    self.filter.k,
                    self.filter.k + 1
                )));
            }
        }
        if self.group_size < self.filter.k + 1 && s.cge {
            return Err(config("group_size must be >= filter.k + 1 for the mixed pool"));
        }
        let mut rule = self.extraction.clone();
        rule.compile()?;
        Ok(())
    }

    /// Templates that may be used for training variants: everything not held out.
    pub fn variant_pool(&self) -> Vec<usize> {
        (0..self.family.template_count)
            .filter(|t| !self.eval.heldout_templates.contains(t))
            .collect()
    }

    /// The config with derived values filled in for a dataset of `dataset_size` queries.
    pub fn resolved(&self, dataset_size: usize) -> Self {
        let mut c = self.clone();
        if c.optimizer.total_steps.is_none() {
            c.optimizer.total_steps = Some(self.schedule.total_steps(dataset_size).max(1));
        }
        c
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a config from JSON text and validates it.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg: TrainConfig =
        serde_json::from_str(text).map_err(|e| config(json_error_message(&e)))?;
    cfg.extraction.compile()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn json_error_message(e: &serde_json::Error) -> String {
    // serde reports unknown keys as "unknown field `name`, expected one of ...".
    let msg = e.to_string();
    match msg.split_once(", expected") {
        Some((head, _)) if head.starts_with("unknown field") => {
            format!("{head} (line {}, column {})", e.line(), e.column())
        }
        _ => msg,
    }
}
