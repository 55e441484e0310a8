use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gim_core::event_model::Vocabulary;
use gim_core::ingestion::{Schema, MAX_TRACE};
use gim_core::qnet::NetworkConfig;
use gim_core::trainer::TrainConfig;
use gim_core::valuation::Discretization;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub paths: PathsConfig,
    /// Column header overrides, field name to header.
    pub schema: BTreeMap<String, String>,
    pub simulate: SimulateConfig,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub discretization: Discretization,
    pub evaluate: EvaluateConfig,
    pub check_grad: CheckGradConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threads: 0,
            paths: PathsConfig::default(),
            schema: BTreeMap::new(),
            simulate: SimulateConfig::default(),
            network: NetworkSection::default(),
            train: TrainConfig::default(),
            discretization: Discretization::default(),
            evaluate: EvaluateConfig::default(),
            check_grad: CheckGradConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Parent of generated run directories.
    pub runs: PathBuf,
    /// Simulator spec; the built-in default when absent.
    pub sim_spec: Option<PathBuf>,
    /// One action name per line; the built-in vocabulary when absent.
    pub vocab: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            runs: PathBuf::from("runs"),
            sim_spec: None,
            vocab: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub games: usize,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { games: 200, seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub lstm_hidden: usize,
    pub dense_widths: [usize; 2],
    pub max_trace: usize,
    pub init_seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            lstm_hidden: 64,
            dense_widths: [64, 64],
            max_trace: MAX_TRACE,
            init_seed: 1,
        }
    }
}

impl NetworkSection {
    pub fn config(&self, vocab: &Vocabulary) -> NetworkConfig {
        NetworkConfig {
            input_width: vocab.encoded_width(),
            lstm_hidden: self.lstm_hidden,
            dense_widths: self.dense_widths,
            max_trace: self.max_trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    pub min_games: u32,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            min_games: gim_core::eval_harness::DEFAULT_MIN_GAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckGradConfig {
    pub lstm_hidden: usize,
    pub dense_widths: [usize; 2],
    pub trace_lengths: Vec<usize>,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for CheckGradConfig {
    fn default() -> Self {
        CheckGradConfig {
            lstm_hidden: 8,
            dense_widths: [8, 8],
            trace_lengths: vec![1, 10],
            seed: 0,
            tolerance: 1e-4,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Ok(match &self.paths.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::default(),
        })
    }

    pub fn schema(&self) -> Result<Schema> {
        let mut s = Schema::default();
        for (field, header) in &self.schema {
            s.set(field, header).map_err(|e| UsageError(format!("[schema] {e}")))?;
        }
        Ok(s)
    }
}
