use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ettag_core::decoding::DecodeConfig;
use ettag_core::model::{OrderStrategy, TrainConfig};
use ettag_core::synthetic::CorpusSpec;
use serde::{Deserialize, Serialize};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Everything a run depends on besides its input files. Loaded from
/// `--config`, overridden by flags, and written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    /// Command line that produced the run.
    pub invocation: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub convert: ConvertConfig,
    pub ablation: AblationConfig,
    pub synthetic: CorpusSpec,
    pub reference: ReferenceSetup,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            invocation: Vec::new(),
            seed: 0,
            threads: 0,
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            convert: ConvertConfig::default(),
            ablation: AblationConfig::default(),
            synthetic: CorpusSpec::default(),
            reference: ReferenceSetup::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertConfig {
    pub keep_empty: bool,
    pub drop_invalid: bool,
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub beams: Vec<usize>,
    pub strategies: Vec<OrderStrategy>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            beams: vec![1, 5, 10, 20, 30],
            strategies: vec![OrderStrategy::Shuffle, OrderStrategy::MentionOrder, OrderStrategy::Lexicographic],
            seeds: vec![0, 1, 2],
        }
    }
}

/// Hyperparameters of the full-size pretrained setup. Recorded for reference;
/// the toy model does not read them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSetup {
    pub backbone: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beam_size: usize,
}

impl Default for ReferenceSetup {
    fn default() -> Self {
        ReferenceSetup { backbone: "t5-base".into(), epochs: 30, batch_size: 5, lr: 2e-4, beam_size: 20 }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(ettag_core::Error::from)?;
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Write into `dir/run_config.json`.
    pub fn write_into(&self, dir: &Path) -> Result<()> {
        self.write(&dir.join(RUN_CONFIG_FILE))
    }

    /// Write beside an output file as `<file>.run_config.json`.
    pub fn write_beside(&self, file: &Path) -> Result<()> {
        let mut name = file.file_name().unwrap_or_default().to_os_string();
        name.push(".");
        name.push(RUN_CONFIG_FILE);
        self.write(&file.with_file_name(name))
    }
}
