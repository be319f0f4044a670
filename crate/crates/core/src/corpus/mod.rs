//! Domain A: silhouettes with one prominent object.
//!
//! Payloads come from the remote silhouette API (see [`fetch`]) or from the
//! offline blob generator [`synth_silhouette`]. Either way they end up as
//! square grayscale canvases with a black object, scaled so its longer side
//! spans the inner region, centered.

pub mod fetch;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geom::{pt, Affine, CubicBezier, VectorPath};
use crate::manifest::{self, DatasetManifest, Domain, ManifestEntry, Split, SEED_RULE};
use crate::raster::RasterImage;
use crate::rasterize::fill_paths;
use crate::synth::DEFAULT_MARGIN_FRAC;

pub use fetch::{fetch_silhouettes, FetchOutcome, PhylopicClient, RemoteImage, SilhouetteApi, SourceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub canvas_px: usize,
    /// Matches the style domain's margin by default.
    pub margin_frac: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Gray level below which a pixel counts as object.
    pub binarize_threshold: u8,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { canvas_px: 256, margin_frac: DEFAULT_MARGIN_FRAC, n_train: 300, n_test: 50, binarize_threshold: 128 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_px < 8 {
            return Err(Error::invalid(format!("canvas_px {} too small", self.canvas_px)));
        }
        if !(0.0..0.5).contains(&self.margin_frac) {
            return Err(Error::invalid(format!("margin_frac {} outside [0, 0.5)", self.margin_frac)));
        }
        if self.binarize_threshold == 0 {
            return Err(Error::invalid("binarize_threshold must be positive"));
        }
        manifest::check_counts(self.n_train, self.n_test)
    }

    fn inner_px(&self) -> (f64, f64) {
        let n = self.canvas_px as f64;
        (self.margin_frac * n, (1.0 - 2.0 * self.margin_frac) * n)
    }
}

/// Normalizes a raw raster or vector payload into a corpus image.
///
/// Raster payloads are flattened onto white, polarity-corrected, cropped to
/// the object and area-resampled into the inner region. Vector payloads (the
/// plain-text Bézier format of [`VectorPath::to_text`]) are filled at twice
/// the target resolution and downsampled.
pub fn preprocess(raw: &[u8], config: &CorpusConfig) -> Result<RasterImage> {
    config.validate()?;
    let out = match RasterImage::decode(raw) {
        Ok(img) => normalize_raster(&img, config)?,
        Err(raster_err) => {
            let paths = std::str::from_utf8(raw)
                .ok()
                .and_then(|t| VectorPath::parse_text(t).ok())
                .ok_or_else(|| Error::invalid(format!("undecodable payload ({raster_err})")))?;
            rasterize_vector(&paths, config)?
        }
    };
    if out.pixels().iter().all(|&p| p >= config.binarize_threshold) {
        return Err(Error::invalid("preprocessed image is empty (no object pixels)"));
    }
    Ok(out)
}

/// Picks the polarity with the smaller, non-zero object fraction and returns
/// the image with the object dark. An image without any dark pixel is empty
/// rather than a white object filling the frame.
pub fn normalize_polarity(img: &RasterImage, threshold: u8) -> Result<RasterImage> {
    let dark = img.pixels().iter().filter(|&&p| p < threshold).count();
    let light = img.pixels().iter().filter(|&&p| 255 - p < threshold).count();
    match (dark, light) {
        (0, _) => Err(Error::invalid("payload has no dark pixels (empty silhouette)")),
        (_, 0) => Ok(img.clone()),
        (d, l) if l < d => Ok(img.inverted()),
        _ => Ok(img.clone()),
    }
}

fn normalize_raster(img: &RasterImage, config: &CorpusConfig) -> Result<RasterImage> {
    let img = normalize_polarity(img, config.binarize_threshold)?;
    let t = config.binarize_threshold;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if img.get(x, y) < t {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    let mut crop = RasterImage::blank(x1 - x0, y1 - y0)?;
    for y in y0..y1 {
        for x in x0..x1 {
            crop.set(x - x0, y - y0, img.get(x, y));
        }
    }
    let (margin, inner) = config.inner_px();
    let scale = inner / (crop.width().max(crop.height()) as f64);
    let off_x = margin + (inner - crop.width() as f64 * scale) / 2.0;
    let off_y = margin + (inner - crop.height() as f64 * scale) / 2.0;
    let n = config.canvas_px;
    crop.place_scaled(scale, off_x, off_y, n, n, 255)
}

/// Fills vector outlines fitted to the inner region at 2× and downsamples.
pub fn rasterize_vector(paths: &[VectorPath], config: &CorpusConfig) -> Result<RasterImage> {
    let mut b = paths
        .first()
        .ok_or_else(|| Error::invalid("no vector paths"))?
        .curve_bbox();
    for p in &paths[1..] {
        let q = p.curve_bbox();
        b.min.x = b.min.x.min(q.min.x);
        b.min.y = b.min.y.min(q.min.y);
        b.max.x = b.max.x.max(q.max.x);
        b.max.y = b.max.y.max(q.max.y);
    }
    if !(b.long_side() > 0.0) {
        return Err(Error::invalid("degenerate vector payload"));
    }
    let (margin, inner) = config.inner_px();
    let hi = 2.0;
    let k = hi * inner / b.long_side();
    let c = b.center();
    let mid = hi * (margin + inner / 2.0);
    let to_px = Affine::translate(pt(mid, mid)).after(&Affine::scale(k)).after(&Affine::translate(pt(-c.x, -c.y)));
    let n = config.canvas_px * 2;
    fill_paths(paths, &to_px, n, n).downsample(2)
}

/// Offline stand-in for a fetched silhouette: an ellipse whose radius is
/// perturbed by a few low-frequency harmonics, which keeps it star-shaped
/// and therefore a single connected blob.
pub fn synth_silhouette(seed: u64, config: &CorpusConfig) -> Result<RasterImage> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aspect: f64 = rng.random_range(0.45..=1.0);
    let tilt: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|k| {
            let amp = rng.random_range(0.0..=0.18) / k as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (k as f64, amp, phase)
        })
        .collect();
    const VERTICES: usize = 192;
    let pts: Vec<_> = (0..VERTICES)
        .map(|i| {
            let th = i as f64 / VERTICES as f64 * std::f64::consts::TAU;
            let r = 1.0 + harmonics.iter().map(|&(k, a, ph)| a * (k * th + ph).cos()).sum::<f64>();
            pt(r * th.cos(), r * aspect * th.sin()).rotated(tilt)
        })
        .collect();
    let segs = (0..VERTICES).map(|i| CubicBezier::line(pts[i], pts[(i + 1) % VERTICES])).collect();
    rasterize_vector(&[VectorPath::closed(segs)?], config)
}

/// Where corpus images come from.
pub enum CorpusInput<'a> {
    /// Cached remote payloads; read through `cache_dir` with checksum checks.
    Records { records: &'a [SourceRecord], cache_dir: &'a Path },
    /// Offline synthetic blobs, one per seed.
    Seeds(&'a [u64]),
}

/// Derives `count` synthetic seeds from a master seed with the manifest rule.
pub fn synthetic_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count).map(|i| manifest::image_seed(master, i as u32)).collect()
}

/// Preprocesses inputs and writes a split dataset plus `manifest.json`.
///
/// Inputs are ordered by source id (or seed); the first `n_train` go to the
/// train split, the next `n_test` to test.
pub fn build_corpus(input: CorpusInput<'_>, config: &CorpusConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let need = config.n_train + config.n_test;
    enum Item<'r> {
        Record(&'r SourceRecord),
        Seed(u64),
    }
    let mut items: Vec<Item> = match &input {
        CorpusInput::Records { records, .. } => {
            let mut r: Vec<&SourceRecord> = records.iter().collect();
            r.sort_by(|a, b| a.source_id.cmp(&b.source_id));
            r.dedup_by(|a, b| a.source_id == b.source_id);
            r.into_iter().map(Item::Record).collect()
        }
        CorpusInput::Seeds(seeds) => {
            let mut s = seeds.to_vec();
            s.sort_unstable();
            s.dedup();
            s.into_iter().map(Item::Seed).collect()
        }
    };
    if items.len() < need {
        return Err(Error::Insufficient { need, have: items.len() });
    }
    items.truncate(need);
    fsutil::create_dir_all(out_dir)?;
    let entries = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let (split, local) = if i < config.n_train { (Split::Train, i) } else { (Split::Test, i - config.n_train) };
            let file = manifest::image_file_name("silhouette", split, local);
            let (img, seed, source_id, license) = match item {
                Item::Record(r) => {
                    let CorpusInput::Records { cache_dir, .. } = &input else { unreachable!() };
                    let raw = fetch::read_cached(cache_dir, r)?;
                    (preprocess(&raw, config)?, None, Some(r.source_id.clone()), Some(r.license.clone()))
                }
                Item::Seed(s) => (synth_silhouette(*s, config)?, Some(*s), None, None),
            };
            let bytes = img.encode_png()?;
            fsutil::write_atomic(&out_dir.join(&file), &bytes)?;
            Ok(ManifestEntry { file, split, seed, source_id, license, crc32: fsutil::crc32_hex(&bytes) })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = DatasetManifest::new(Domain::Silhouette, config.n_train, config.n_test);
    if matches!(input, CorpusInput::Seeds(_)) {
        m.seed_rule = Some(SEED_RULE.to_string());
    }
    m.corpus = Some(config.clone());
    m.entries = entries;
    m.write(out_dir)?;
    Ok(m)
}
