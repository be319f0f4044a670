//! Dataset manifests and per-image seed splitting.
//!
//! A dataset directory holds PNG files plus `manifest.json`, which records the
//! generating configuration, the master seed, the seed-splitting rule and a
//! CRC-32 of every file's bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::synth::SynthConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Identifier of [`image_seed`], recorded in every manifest.
pub const SEED_RULE: &str = "splitmix64-v1";

/// Largest image count the seed rule supports (indices are 32-bit).
pub const MAX_IMAGES: u64 = 1 << 32;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for image `index`: the `(index + 1)`-th output of a SplitMix64
/// generator started at `master`. Train images take indices `0..n_train`,
/// test images continue at `n_train..n_train + n_test`.
pub fn image_seed(master: u64, index: u32) -> u64 {
    splitmix64(master.wrapping_add((index as u64 + 1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Checks that `n_train + n_test` fits the seed rule's index space.
pub fn check_counts(n_train: usize, n_test: usize) -> Result<()> {
    let total = n_train as u64 + n_test as u64;
    if total > MAX_IMAGES {
        return Err(Error::invalid(format!(
            "{total} images exceed the {SEED_RULE} index space of {MAX_IMAGES}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "A_silhouette")]
    Silhouette,
    #[serde(rename = "B_style")]
    Style,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub license: Option<String>,
    /// CRC-32 of the file bytes, lowercase hex.
    pub crc32: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_rule: Option<String>,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusConfig>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(domain: Domain, n_train: usize, n_test: usize) -> Self {
        Self {
            version: MANIFEST_VERSION,
            domain,
            seed: None,
            seed_rule: None,
            n_train,
            n_test,
            synth: None,
            corpus: None,
            entries: Vec::new(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn path_in(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// Writes `manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = Self::path_in(dir);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e))?;
        text.push('\n');
        fsutil::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    /// Loads a manifest from a file path or a dataset directory.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { Self::path_in(path) } else { path.to_path_buf() };
        let text = fsutil::read_to_string(&path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    /// Checks declared split sizes and every file checksum under `dir`.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        let manifest_path = Self::path_in(dir);
        for (split, want) in [(Split::Train, self.n_train), (Split::Test, self.n_test)] {
            let have = self.count(split);
            if have != want {
                return Err(Error::format(
                    &manifest_path,
                    format!("{} split declares {want} entries but lists {have}", split.name()),
                ));
            }
        }
        for e in &self.entries {
            let path = dir.join(&e.file);
            let found = fsutil::crc32_hex(&fsutil::read(&path)?);
            if found != e.crc32 {
                return Err(Error::Checksum { path, expected: e.crc32.clone(), found });
            }
        }
        Ok(())
    }

    /// Absolute paths of one split's files, in manifest order.
    pub fn files(&self, dir: &Path, split: Split) -> Vec<PathBuf> {
        self.split(split).map(|e| dir.join(&e.file)).collect()
    }
}

/// File name for image `index` of a split, zero-padded to at least five digits.
pub fn image_file_name(prefix: &str, split: Split, index: usize) -> String {
    format!("{prefix}_{}_{index:05}.png", split.name())
}
