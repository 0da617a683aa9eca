use std::path::{Path, PathBuf};

use anyhow::Context;
use eurnet::graphbuild::{ImageGraphConfig, ProteinGraphConfig};
use eurnet::training::KgTrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlopsConfig {
    pub resolution: u64,
    pub k_min: u64,
    pub k_max: u64,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        Self { resolution: 224, k_min: 1, k_max: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub transforms: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { transforms: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub people: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { people: 100 }
    }
}

/// Everything a run depends on, after merging defaults, the config file and
/// command-line flags (in increasing priority).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime choose.
    pub threads: usize,
    pub f64: bool,
    pub inputs: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub image_graph: ImageGraphConfig,
    pub protein_graph: ProteinGraphConfig,
    pub kg: KgTrainConfig,
    pub flops: FlopsConfig,
    pub verify: VerifyConfig,
    pub toy: ToyConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| eurnet::Error::Config(format!("{}: {e}", path.display())).into())
    }

    /// Writes the resolved configuration as `config.toml` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), toml::to_string(self)?)?;
        Ok(())
    }
}
