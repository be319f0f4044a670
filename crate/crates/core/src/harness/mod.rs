//! Training runs, inference, loss-weight sweeps and comparison grids.
//!
//! A run directory looks like:
//!
//! ```text
//! <output_dir>/
//!   run_config.toml      configuration snapshot
//!   loss_log.csv         one row per step
//!   checkpoints/epoch_NNNN.ckpt
//!   samples/a2b_NN.png   test silhouettes stylized at the end of the run
//!   summary.toml         status and per-epoch loss means
//! ```

mod grid;
mod font;
mod stylize;
mod sweep;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use grid::{compose_grid, render_grid, GridLayout};
pub use stylize::{fit_to_size, stylize, Direction, Stylizer};
pub use sweep::{default_variants, parse_variant, run_sweep, SweepOutcome, SweepSpec, Variant, SWEEP_SUMMARY_FILE};

use crate::engine::{
    init_models, load_checkpoint, save_checkpoint, to_tensor, AdamConfig, LossReport, LossWeights, Tensor,
    TrainState,
};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::manifest::{image_seed, DatasetManifest, Split};
use crate::raster::RasterImage;

pub const CONFIG_FILE: &str = "run_config.toml";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SAMPLE_DIR: &str = "samples";

/// Everything that defines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Domain A dataset directory (silhouettes).
    pub data_a: PathBuf,
    /// Domain B dataset directory (style images).
    pub data_b: PathBuf,
    pub image_size: usize,
    pub epochs: usize,
    pub base_filters: usize,
    pub weights: LossWeights,
    pub init_seed: u64,
    /// Seeds the per-epoch pairing shuffle and dropout.
    pub data_seed: u64,
    /// Checkpoint cadence in epochs; the final epoch is always saved.
    pub checkpoint_every: usize,
    /// Recorded for reproducibility. Training has no nondeterministic
    /// reductions, so runs are reproducible either way.
    pub deterministic: bool,
    pub output_dir: PathBuf,
    /// Test silhouettes stylized into `samples/` at the end.
    pub samples: usize,
    pub adam: AdamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_a: PathBuf::from("data/silhouettes"),
            data_b: PathBuf::from("data/style"),
            image_size: 256,
            epochs: 200,
            base_filters: 64,
            weights: LossWeights::BASELINE,
            init_seed: 0,
            data_seed: 0,
            checkpoint_every: 10,
            deterministic: true,
            output_dir: PathBuf::from("runs/baseline"),
            samples: 10,
            adam: AdamConfig::default(),
        }
    }
}

impl RunConfig {
    /// The small configuration used for smoke tests: 64 px, 5 epochs.
    pub fn desk(data_a: impl Into<PathBuf>, data_b: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_a: data_a.into(),
            data_b: data_b.into(),
            image_size: 64,
            epochs: 5,
            base_filters: 16,
            checkpoint_every: 1,
            output_dir: output_dir.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be at least 1"));
        }
        self.weights.validate()?;
        crate::engine::ModelConfig::new(self.image_size, self.base_filters)?;
        Ok(())
    }
}

/// One loss-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// Global step index, counted from 0.
    pub step: u64,
    pub report: LossReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Diverged,
}

/// Contents of `summary.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub status: RunStatus,
    pub epochs_completed: usize,
    pub steps_completed: u64,
    pub steps_per_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<String>,
    /// Mean of every loss column per completed epoch.
    pub epoch_means: Vec<LossReport>,
    /// Checkpoint paths relative to the run directory.
    pub checkpoints: Vec<String>,
}

impl RunSummary {
    pub fn first_epoch_mean(&self) -> Option<&LossReport> {
        self.epoch_means.first()
    }

    pub fn last_epoch_mean(&self) -> Option<&LossReport> {
        self.epoch_means.last()
    }
}

/// What a run leaves behind.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub config: RunConfig,
    pub rows: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
    pub samples: Vec<PathBuf>,
    pub summary: RunSummary,
}

impl RunArtifacts {
    pub fn loss_log(&self) -> PathBuf {
        self.output_dir.join(LOSS_LOG_FILE)
    }

    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.checkpoints.last().map(PathBuf::as_path)
    }

    pub fn diverged(&self) -> bool {
        self.summary.status == RunStatus::Diverged
    }

    /// Display name: the run directory's last component.
    pub fn name(&self) -> String {
        self.output_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    }

    /// Reads a finished (or diverged) run directory back.
    pub fn load(dir: &Path) -> Result<Self> {
        let config: RunConfig = read_toml(&dir.join(CONFIG_FILE))?;
        let summary: RunSummary = read_toml(&dir.join(SUMMARY_FILE))?;
        let rows = read_loss_log(&dir.join(LOSS_LOG_FILE))?;
        let checkpoints = summary.checkpoints.iter().map(|c| dir.join(c)).collect();
        let mut samples: Vec<PathBuf> = match std::fs::read_dir(dir.join(SAMPLE_DIR)) {
            Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).collect(),
            Err(_) => Vec::new(),
        };
        samples.sort();
        Ok(Self { output_dir: dir.to_path_buf(), config, rows, checkpoints, samples, summary })
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&fsutil::read_to_string(path)?).map_err(|e| Error::format(path, e))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    fsutil::write_atomic(path, text.as_bytes())
}

/// Loaded training images of one domain.
struct Domain {
    train: Vec<Tensor<f32>>,
    test: Vec<RasterImage>,
}

fn load_domain(dir: &Path, size: usize) -> Result<Domain> {
    let manifest = DatasetManifest::load(dir)?;
    manifest.validate(dir)?;
    let load = |split| -> Result<Vec<RasterImage>> {
        manifest
            .files(dir, split)
            .iter()
            .map(|p| {
                let img = RasterImage::load_png(p)?;
                if (img.width(), img.height()) != (size, size) {
                    return Err(Error::invalid(format!(
                        "{}: {}×{} image in a {size}-px run",
                        p.display(),
                        img.width(),
                        img.height()
                    )));
                }
                Ok(img)
            })
            .collect()
    };
    let train: Vec<Tensor<f32>> = load(Split::Train)?.iter().map(to_tensor).collect();
    if train.is_empty() {
        return Err(Error::Insufficient { need: 1, have: 0 });
    }
    Ok(Domain { train, test: load(Split::Test)? })
}

/// Index pairs for one epoch: both domains shuffled independently, then
/// zipped, dropping the longer tail.
pub fn epoch_pairs(data_seed: u64, epoch: usize, n_a: usize, n_b: usize) -> Vec<(usize, usize)> {
    let shuffled = |n: usize, stream: u32| {
        let mut idx: Vec<usize> = (0..n).collect();
        let seed = image_seed(data_seed ^ 0xD1B5_4A32_D192_ED03, 2 * epoch as u32 + stream);
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    };
    shuffled(n_a, 0).into_iter().zip(shuffled(n_b, 1)).collect()
}

fn dropout_seed(data_seed: u64) -> u64 {
    image_seed(data_seed, u32::MAX)
}

const LOG_HEADER: [&str; 2] = ["epoch", "step"];

fn write_log_header(out: &mut impl Write) -> std::io::Result<()> {
    let cols: Vec<&str> = LOG_HEADER.iter().chain(LossReport::COLUMNS.iter()).copied().collect();
    writeln!(out, "{}", cols.join(","))
}

fn write_log_row(out: &mut impl Write, row: &LogRow) -> std::io::Result<()> {
    write!(out, "{},{}", row.epoch, row.step)?;
    for v in row.report.values() {
        write!(out, ",{v:?}")?;
    }
    writeln!(out)
}

/// Parses a loss log written by a run.
pub fn read_loss_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        if rec.len() != 2 + LossReport::COLUMNS.len() {
            return Err(Error::format(path, format!("row with {} fields", rec.len())));
        }
        let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|e| Error::format(path, e)) };
        let mut vals = [0.0; 10];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = num(k + 2)?;
        }
        rows.push(LogRow {
            epoch: rec[0].parse().map_err(|e| Error::format(path, e))?,
            step: rec[1].parse().map_err(|e| Error::format(path, e))?,
            report: LossReport::from_values(vals),
        });
    }
    Ok(rows)
}

/// Column-wise mean of the reports of each epoch, in epoch order.
pub fn epoch_means(rows: &[LogRow]) -> Vec<LossReport> {
    let mut out: Vec<(usize, [f64; 10], usize)> = Vec::new();
    for r in rows {
        if out.last().map(|l| l.0) != Some(r.epoch) {
            out.push((r.epoch, [0.0; 10], 0));
        }
        let last = out.last_mut().expect("pushed above");
        for (acc, v) in last.1.iter_mut().zip(r.report.values()) {
            *acc += v;
        }
        last.2 += 1;
    }
    out.into_iter().map(|(_, sums, n)| LossReport::from_values(sums.map(|s| s / n as f64))).collect()
}

fn checkpoint_name(epoch: usize) -> String {
    format!("{CHECKPOINT_DIR}/epoch_{epoch:04}.ckpt")
}

/// Trains from scratch.
pub fn run_training(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let bundle = init_models::<f32>(config.image_size, config.base_filters, config.init_seed)?;
    let state = TrainState::new(bundle, config.adam, dropout_seed(config.data_seed));
    train_from(config, state, Vec::new())
}

/// Continues the run a checkpoint belongs to, up to `epochs` (default: the
/// configured count). Loss-log rows after the checkpoint are replaced.
pub fn resume_training(checkpoint: &Path, epochs: Option<usize>) -> Result<RunArtifacts> {
    let ck = load_checkpoint::<f32>(checkpoint)?;
    let mut config: RunConfig =
        serde_json::from_value(ck.extra).map_err(|e| Error::format(checkpoint, format!("run config: {e}")))?;
    if let Some(e) = epochs {
        config.epochs = e;
    }
    config.validate()?;
    let done = ck.state.epoch;
    let rows: Vec<LogRow> = match read_loss_log(&config.output_dir.join(LOSS_LOG_FILE)) {
        Ok(rows) => rows.into_iter().filter(|r| r.epoch < done).collect(),
        Err(_) => Vec::new(),
    };
    if rows.len() as u64 != ck.state.global_step {
        return Err(Error::invalid(format!(
            "loss log has {} rows before epoch {done}, checkpoint is at step {}",
            rows.len(),
            ck.state.global_step
        )));
    }
    train_from(&config, ck.state, rows)
}

fn train_from(config: &RunConfig, mut state: TrainState<f32>, prior: Vec<LogRow>) -> Result<RunArtifacts> {
    let out = &config.output_dir;
    let a = load_domain(&config.data_a, config.image_size)?;
    let b = load_domain(&config.data_b, config.image_size)?;
    fsutil::create_dir_all(&out.join(CHECKPOINT_DIR))?;
    write_toml(&out.join(CONFIG_FILE), config)?;
    let snapshot = serde_json::to_value(config).map_err(|e| Error::invalid(format!("run config: {e}")))?;

    let log_path = out.join(LOSS_LOG_FILE);
    let mut log = std::io::BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let io = |e| Error::io(&log_path, e);
    write_log_header(&mut log).map_err(io)?;
    for r in &prior {
        write_log_row(&mut log, r).map_err(io)?;
    }
    let mut rows = prior;
    let steps_per_epoch = a.train.len().min(b.train.len());
    let mut checkpoints: Vec<String> = (1..=state.epoch)
        .filter(|e| e % config.checkpoint_every == 0)
        .map(checkpoint_name)
        .filter(|c| out.join(c).exists())
        .collect();
    let mut divergence = None;

    'epochs: while state.epoch < config.epochs {
        let epoch = state.epoch;
        for (i, j) in epoch_pairs(config.data_seed, epoch, a.train.len(), b.train.len()) {
            let step = state.global_step;
            match state.train_step(&a.train[i], &b.train[j], &config.weights) {
                Ok(report) => {
                    let row = LogRow { epoch, step, report };
                    write_log_row(&mut log, &row).map_err(io)?;
                    rows.push(row);
                }
                Err(e) if e.is_divergence() => {
                    log::error!("{e}");
                    divergence = Some(e.to_string());
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        state.epoch += 1;
        log.flush().map_err(io)?;
        let m = epoch_means(&rows[rows.len() - steps_per_epoch..]);
        log::info!("epoch {}/{}: total_G {:.4} total_D {:.4}", state.epoch, config.epochs, m[0].total_g, m[0].total_d);
        if state.epoch % config.checkpoint_every == 0 || state.epoch == config.epochs {
            let name = checkpoint_name(state.epoch);
            save_checkpoint(&out.join(&name), &state, &snapshot)?;
            if !checkpoints.contains(&name) {
                checkpoints.push(name);
            }
        }
    }
    log.flush().map_err(io)?;
    drop(log);

    let mut samples = Vec::new();
    if divergence.is_none() {
        let stylizer = Stylizer::from_bundle(&state.bundle);
        let sources = if a.test.is_empty() { Vec::new() } else { a.test };
        fsutil::create_dir_all(&out.join(SAMPLE_DIR))?;
        for (k, img) in sources.iter().take(config.samples).enumerate() {
            let path = out.join(SAMPLE_DIR).join(format!("a2b_{k:02}.png"));
            stylizer.apply(img, Direction::AToB)?.save_png(&path)?;
            samples.push(path);
        }
    }

    let summary = RunSummary {
        status: if divergence.is_some() { RunStatus::Diverged } else { RunStatus::Complete },
        epochs_completed: state.epoch,
        steps_completed: state.global_step,
        steps_per_epoch,
        divergence,
        epoch_means: epoch_means(&rows),
        checkpoints: checkpoints.clone(),
    };
    write_toml(&out.join(SUMMARY_FILE), &summary)?;
    Ok(RunArtifacts {
        output_dir: out.clone(),
        config: config.clone(),
        rows,
        checkpoints: checkpoints.iter().map(|c| out.join(c)).collect(),
        samples,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_is_a_seeded_permutation() {
        let p = epoch_pairs(3, 0, 30, 50);
        assert_eq!(p.len(), 30);
        let mut a: Vec<usize> = p.iter().map(|x| x.0).collect();
        a.sort_unstable();
        assert_eq!(a, (0..30).collect::<Vec<_>>());
        assert!(p.iter().all(|x| x.1 < 50));
        assert_eq!(p, epoch_pairs(3, 0, 30, 50));
        assert_ne!(p, epoch_pairs(3, 1, 30, 50));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::desk("a", "b", "out");
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
        assert!(toml::from_str::<RunConfig>("epochz = 3").is_err());
    }

    #[test]
    fn means_group_by_epoch() {
        let row = |epoch, v: f64| LogRow { epoch, step: 0, report: LossReport { total_g: v, ..Default::default() } };
        let m = epoch_means(&[row(0, 1.0), row(0, 3.0), row(1, 5.0)]);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].total_g, m[1].total_g), (2.0, 5.0));
    }
}
