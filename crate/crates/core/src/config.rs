//! Run configuration: a JSON file plus `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{NavError, Result};
use crate::executor::LatencyModel;
use crate::features::FeatureConfig;
use crate::memory::MergeConfig;
use crate::policy::PolicyKind;
use crate::streams::StreamKind;
use crate::world::{GenConfig, TaskKind};

/// Multiplier separating the episode streams of different base seeds.
pub const SEED_STRIDE: u64 = 1_000_003;

pub fn episode_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(SEED_STRIDE).wrapping_add(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    All,
    One(TaskKind),
}

impl TaskChoice {
    pub fn tasks(self) -> Vec<TaskKind> {
        match self {
            TaskChoice::All => TaskKind::ALL.to_vec(),
            TaskChoice::One(t) => vec![t],
        }
    }
}

impl FromStr for TaskChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(TaskChoice::All);
        }
        s.parse::<TaskKind>()
            .map(TaskChoice::One)
            .map_err(|_| format!("unknown task `{s}` (vln|objectnav|eqa|follow|all)"))
    }
}

impl fmt::Display for TaskChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskChoice::All => f.write_str("all"),
            TaskChoice::One(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for TaskChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    Blocking,
    NonBlocking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub horizon: usize,
    pub stream: StreamKind,
    /// Timed repetitions per push; the minimum is reported.
    pub reps: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            horizon: 600,
            stream: StreamKind::Constant,
            reps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    pub dagger: bool,
    pub successful_only: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            dagger: false,
            successful_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskChoice,
    pub episodes: usize,
    pub seed: u64,
    pub policy: PolicyKind,
    pub mode: ExecMode,
    /// Stream observations through the merged memory and hand prompts to the policy.
    pub perception: bool,
    pub out: PathBuf,
    pub merge: MergeConfig,
    pub features: FeatureConfig,
    pub latency: LatencyModel,
    pub generation: GenConfig,
    pub profile: ProfileConfig,
    pub collect: CollectConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskChoice::All,
            episodes: 100,
            seed: 1,
            policy: PolicyKind::Oracle,
            mode: ExecMode::Blocking,
            perception: false,
            out: PathBuf::from("out"),
            merge: MergeConfig::default(),
            features: FeatureConfig::default(),
            latency: LatencyModel::default(),
            generation: GenConfig::default(),
            profile: ProfileConfig::default(),
            collect: CollectConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| NavError::InvalidConfig(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NavError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            NavError::InvalidConfig(m) => NavError::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies a dotted `key=value` override such as `merge.tau=0.9`. Values
    /// are read as JSON, falling back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| NavError::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut tree = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| NavError::InvalidConfig(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
        *self = serde_json::from_value(tree).map_err(|e| NavError::InvalidConfig(format!("`{key}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.merge.validate(self.features.n_x)?;
        self.latency.validate()?;
        self.generation.validate()?;
        if self.profile.horizon == 0 {
            return Err(NavError::InvalidConfig("profile.horizon must be >= 1".into()));
        }
        if self.profile.reps == 0 {
            return Err(NavError::InvalidConfig("profile.reps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
