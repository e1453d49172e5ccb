//! Experiment configuration.
//!
//! A TOML file with the sections `[task]`, `[policy]`, `[sampling]`,
//! `[scoring]`, `[sega]`, `[dpo]`, `[sft]` and `[run]`. Every key is optional
//! and unknown keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{DpoSettings, SftConfig};
use crate::error::{GemError, Result};
use crate::policy::SamplingConfig;
use crate::scoring::ScoringConfig;
use crate::sega::SegaConfig;
use crate::tasks::TaskConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sft,
    Dpo,
    Sega,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sft, Method::Dpo, Method::Sega];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Dpo => "dpo",
            Method::Sega => "sega",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = GemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Method::Sft),
            "dpo" => Ok(Method::Dpo),
            "sega" => Ok(Method::Sega),
            other => Err(GemError::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub context_length: usize,
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        // Four slots cover [d1, d2, fork, MARK] when predicting the answer.
        Self { context_length: 4, init_scale: 0.01 }
    }
}

/// Candidate generation: group size k and the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupSamplingConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
}

impl Default for GroupSamplingConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self { group_size: 5, temperature: s.temperature, top_p: s.top_p, max_len: s.max_len }
    }
}

impl GroupSamplingConfig {
    pub fn sampler(&self) -> SamplingConfig {
        SamplingConfig { temperature: self.temperature, top_p: self.top_p, max_len: self.max_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub steps: usize,
    /// Prompts per update. LLM-scale runs use 128.
    pub batch_prompts: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Record wall-clock milliseconds in metrics; off keeps outputs byte-stable.
    pub record_timing: bool,
    pub sweep_methods: Vec<Method>,
    pub sweep_budgets: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Sega,
            steps: 300,
            batch_prompts: 16,
            eval_every: 10,
            seed: 42,
            record_timing: false,
            sweep_methods: Method::ALL.to_vec(),
            sweep_budgets: vec![50, 100, 200, 400],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub policy: PolicyConfig,
    pub sampling: GroupSamplingConfig,
    pub scoring: ScoringConfig,
    pub sega: SegaConfig,
    pub dpo: DpoSettings,
    pub sft: SftConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| GemError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            GemError::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.policy.context_length == 0 {
            return Err(GemError::InvalidConfig("policy.context_length must be >= 1".into()));
        }
        if !(self.policy.init_scale >= 0.0 && self.policy.init_scale.is_finite()) {
            return Err(GemError::InvalidConfig("policy.init_scale must be >= 0".into()));
        }
        if self.sampling.group_size < 2 {
            return Err(GemError::InvalidConfig("sampling.group_size must be >= 2".into()));
        }
        self.sampling.sampler().validate()?;
        self.scoring.validate()?;
        self.sega.validate()?;
        if !(self.dpo.beta > 0.0 && self.dpo.learning_rate > 0.0) {
            return Err(GemError::InvalidConfig("dpo.beta and dpo.learning_rate must be > 0".into()));
        }
        if !(self.sft.learning_rate > 0.0) {
            return Err(GemError::InvalidConfig("sft.learning_rate must be > 0".into()));
        }
        if self.run.batch_prompts == 0 || self.run.eval_every == 0 {
            return Err(GemError::InvalidConfig(
                "run.batch_prompts and run.eval_every must be >= 1".into(),
            ));
        }
        if self.run.sweep_methods.is_empty() {
            return Err(GemError::InvalidConfig("run.sweep_methods is empty".into()));
        }
        Ok(())
    }
}
