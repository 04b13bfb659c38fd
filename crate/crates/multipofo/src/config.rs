//! Run configuration: one TOML file describes the data source, split,
//! scales, model widths, training knobs and report grouping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FillPolicy, SplitSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::multiscale::{ScaleName, ScaleSpec};
use crate::synth::SynthSpec;
use crate::training::TrainConfig;

/// Where the load series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Csv {
        path: PathBuf,
        #[serde(default = "default_step_minutes")]
        step_minutes: i64,
        #[serde(default)]
        fill_policy: FillPolicy,
    },
    Synth {
        circuits: Vec<SynthSpec>,
    },
}

fn default_step_minutes() -> i64 {
    30
}

impl DataConfig {
    pub fn fill_policy(&self) -> FillPolicy {
        match self {
            DataConfig::Csv { fill_policy, .. } => *fill_policy,
            DataConfig::Synth { .. } => FillPolicy::Linear,
        }
    }
}

/// Split boundary; `test_start` defaults to `train_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_end: DateTime<Utc>,
    #[serde(default)]
    pub test_start: Option<DateTime<Utc>>,
}

impl SplitConfig {
    pub fn to_spec(&self) -> SplitSpec {
        SplitSpec {
            train_end: self.train_end,
            test_start: self.test_start.unwrap_or(self.train_end),
        }
    }
}

/// One scale block. Window length and stride default by scale name;
/// stride defaults to the window length (non-overlapping periods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub name: ScaleName,
    #[serde(default)]
    pub window_len: Option<usize>,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
    #[serde(default)]
    pub stride: Option<usize>,
}

fn default_enabled() -> bool {
    true
}

/// The full run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub scales: Vec<ScaleConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Report grouping: group name -> circuit ids. Empty means one `all`
    /// group holding every circuit.
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.enabled_scales()?;
        self.model.validate()?;
        self.train.validate()?;
        self.split.to_spec().validate()?;
        if let DataConfig::Synth { circuits } = &self.data {
            if circuits.is_empty() {
                return Err(Error::Config("synth data needs at least one circuit".to_string()));
            }
            let mut seen = std::collections::BTreeSet::new();
            for c in circuits {
                c.validate()?;
                if !seen.insert(&c.circuit_id) {
                    return Err(Error::Config(format!(
                        "duplicate synth circuit_id {}",
                        c.circuit_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// The enabled scales in config order, with one-hot indices assigned
    /// by position. At least one scale must be enabled and names must be
    /// unique.
    pub fn enabled_scales(&self) -> Result<Vec<ScaleSpec>> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.scales {
            if !seen.insert(s.name) {
                return Err(Error::Config(format!("scale {} listed twice", s.name)));
            }
        }
        let enabled: Vec<ScaleSpec> = self
            .scales
            .iter()
            .filter(|s| s.enabled)
            .enumerate()
            .map(|(i, s)| {
                let window_len = s.window_len.unwrap_or_else(|| s.name.default_window_len());
                ScaleSpec {
                    name: s.name,
                    window_len,
                    stride: s.stride.unwrap_or(window_len),
                    one_hot_index: i,
                }
            })
            .collect();
        if enabled.is_empty() {
            return Err(Error::Config("no scales enabled".to_string()));
        }
        for spec in &enabled {
            spec.validate(enabled.len())?;
        }
        Ok(enabled)
    }

    /// Report groups, defaulting to one `all` group over the circuits
    /// actually present. Declared groups must reference known circuits.
    pub fn groups_for(&self, circuits: &[String]) -> Result<BTreeMap<String, Vec<String>>> {
        if self.groups.is_empty() {
            return Ok(BTreeMap::from([("all".to_string(), circuits.to_vec())]));
        }
        for (group, ids) in &self.groups {
            if ids.is_empty() {
                return Err(Error::Config(format!("group {group} lists no circuits")));
            }
            for id in ids {
                if !circuits.contains(id) {
                    return Err(Error::Config(format!(
                        "group {group} references unknown circuit {id}; known: {}",
                        circuits.join(", ")
                    )));
                }
            }
        }
        Ok(self.groups.clone())
    }

    /// Stable hash over the canonical JSON form; identifies a run
    /// configuration in logs, reports and checkpoints.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn step_minutes(&self) -> i64 {
        match &self.data {
            DataConfig::Csv { step_minutes, .. } => *step_minutes,
            DataConfig::Synth { circuits } => {
                circuits.first().map_or(default_step_minutes(), |c| c.step_minutes)
            }
        }
    }
}
