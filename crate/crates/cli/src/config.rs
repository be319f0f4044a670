//! The TOML configuration file shared by every subcommand.
//!
//! Each section mirrors a library config; missing keys take the defaults
//! printed by `kanok show-config`, unknown keys are rejected.

use std::path::{Path, PathBuf};

use kanok::corpus::fetch::DEFAULT_BASE_URL;
use kanok::corpus::CorpusConfig;
use kanok::harness::RunConfig;
use kanok::synth::{SynthConfig, DEFAULT_TEST, DEFAULT_TRAIN};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub synth: SynthSection,
    pub corpus: CorpusSection,
    pub run: RunConfig,
    pub sweep: SweepSection,
}

/// `gen-style` settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    pub train: usize,
    pub test: usize,
    pub out: PathBuf,
    pub style: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            seed: 0,
            train: DEFAULT_TRAIN,
            test: DEFAULT_TEST,
            out: PathBuf::from("data/style"),
            style: SynthConfig::default(),
        }
    }
}

/// `fetch-corpus` settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub taxon: String,
    /// Generate offline blobs instead of downloading.
    pub synthetic: bool,
    /// Master seed for synthetic silhouettes.
    pub seed: u64,
    pub out: PathBuf,
    pub api_url: String,
    pub cache_dir: PathBuf,
    /// Minimum spacing between API requests.
    pub request_interval_ms: u64,
    pub image: CorpusConfig,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            taxon: "bird".into(),
            synthetic: false,
            seed: 0,
            out: PathBuf::from("data/silhouettes"),
            api_url: DEFAULT_BASE_URL.into(),
            cache_dir: PathBuf::from("cache/phylopic"),
            request_interval_ms: 500,
            image: CorpusConfig::default(),
        }
    }
}

/// `sweep` settings. Runs land in `run.output_dir/<variant>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Variant arguments, e.g. `"2xCycleLoss=cycle:2"` or `"0.5xGenLoss"`.
    /// Empty means baseline plus 2x and 0.5x of every term.
    pub variants: Vec<String>,
    pub jobs: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { variants: Vec::new(), jobs: 1 }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, String> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }
}
