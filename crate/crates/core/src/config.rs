//! Run configuration: presets plus a sectioned TOML file whose keys override them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{NetworkConfig, TrainerConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::inference::Revision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset {s:?} (desk, paper)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub dk: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Train / valid / test fractions at conversation level.
    pub split: [f64; 3],
    /// Seed of the conversation-level split; kept apart from the run seed so
    /// every subcommand sees the same partition.
    pub split_seed: u64,
    /// Count validation conversations when building the DK table.
    pub dk_include_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub conversations: usize,
    pub min_length: usize,
    pub max_length: usize,
    /// Probability of the favoured class in every transition row.
    pub max_entry: f64,
    /// Distance between class means in noise-sigma units.
    pub separation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadsConfig {
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub revision: Revision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub windows: Vec<usize>,
    /// Extra seeds beyond the run seed; an empty list means a single run.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub window: usize,
    pub paths: Paths,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub graph: GraphConfig,
    pub heads: HeadsConfig,
    pub trainer: TrainerConfig,
    pub inference: InferenceConfig,
    pub sweep: SweepSettings,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let window = 3;
        let (net, trainer) = match preset {
            Preset::Desk => (NetworkConfig::desk(window), TrainerConfig::desk()),
            Preset::Paper => (NetworkConfig::paper(window), TrainerConfig::paper()),
        };
        RunConfig {
            preset,
            seed: 0,
            window,
            paths: Paths::default(),
            data: DataConfig {
                split: [0.8, 0.1, 0.1],
                split_seed: 0,
                dk_include_valid: false,
            },
            synth: SynthConfig {
                conversations: 600,
                min_length: 20,
                max_length: 20,
                max_entry: 0.8,
                separation: 4.0,
            },
            encoder: net.encoder,
            graph: net.graph,
            heads: HeadsConfig {
                hidden: net.head_hidden,
            },
            trainer,
            inference: InferenceConfig {
                revision: Revision::Full,
            },
            sweep: SweepSettings {
                windows: vec![2, 3, 4, 5],
                seeds: Vec::new(),
            },
        }
    }

    /// Parses TOML text; keys present in the file override the named preset
    /// (`preset = "..."`, default desk).
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, None)
    }

    /// Like [`RunConfig::from_toml`], with `preset` taking precedence over the
    /// file's own `preset` key.
    pub fn from_toml_with(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = match (preset, file.get("preset")) {
            (Some(p), _) => p,
            (None, None) => Preset::Desk,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(v)) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        file.remove("preset");
        let mut base = toml::Table::try_from(RunConfig::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, file);
        let cfg: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `section.key=value` (value in TOML syntax; bare words are taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed above"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut over = toml::Table::new();
        let mut parts: Vec<&str> = key.trim().split('.').collect();
        let last = parts
            .pop()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config("empty key".into()))?;
        let mut leaf = toml::Table::new();
        leaf.insert(last.to_string(), value);
        for part in parts.into_iter().rev() {
            let mut t = toml::Table::new();
            t.insert(part.to_string(), toml::Value::Table(leaf));
            leaf = t;
        }
        over.extend(leaf);
        let mut base = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, over);
        let cfg: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, None)
    }

    pub fn load_with(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_with(&text, preset)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            window: self.window,
            encoder: self.encoder,
            graph: self.graph,
            head_hidden: self.heads.hidden,
        }
    }

    /// The run seed followed by any extra sweep seeds.
    pub fn sweep_seeds(&self) -> Vec<u64> {
        let mut s = vec![self.seed];
        s.extend(self.sweep.seeds.iter().copied().filter(|&x| x != self.seed));
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        self.trainer.validate()?;
        let sum: f64 = self.data.split.iter().sum();
        if self.data.split.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split {:?} must be non-negative and sum to 1",
                self.data.split
            )));
        }
        let s = &self.synth;
        if s.min_length > s.max_length || s.min_length <= self.window {
            return Err(Error::Config(format!(
                "synthetic lengths ({}, {}) must exceed the window {}",
                s.min_length, s.max_length, self.window
            )));
        }
        if !(s.max_entry > 0.0 && s.max_entry <= 1.0) {
            return Err(Error::Config("synth.max_entry must lie in (0, 1]".into()));
        }
        for &w in &self.sweep.windows {
            crate::dk::check_window(w)?;
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
