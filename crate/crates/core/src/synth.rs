//! Style-domain image synthesis: seeded random compositions of the 32 elements.

use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::geom::{pt, Affine, BBox};
use crate::manifest::{self, DatasetManifest, Domain, ManifestEntry, Split, SEED_RULE};
use crate::motif::{list_elements, ElementSpec, ELEMENT_COUNT, NORMALIZED_LONG_SIDE};
use crate::raster::RasterImage;
use crate::rasterize::fill_paths;

/// Scale draws attempted before a placement is declared impossible.
pub const MAX_SCALE_ATTEMPTS: usize = 100;

pub const DEFAULT_CANVAS_PX: usize = 256;
pub const DEFAULT_MARGIN_FRAC: f64 = 0.08;
pub const DEFAULT_TRAIN: usize = 2900;
pub const DEFAULT_TEST: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Square canvas side in pixels.
    pub canvas_px: usize,
    /// Fraction of the canvas kept empty on each side.
    pub margin_frac: f64,
    /// Inclusive range of elements per image.
    pub elements_per_image: [usize; 2],
    /// Inclusive range of the placed element's long axis, as a canvas fraction.
    pub scale_range: [f64; 2],
    pub mirror_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas_px: DEFAULT_CANVAS_PX,
            margin_frac: DEFAULT_MARGIN_FRAC,
            elements_per_image: [8, 24],
            scale_range: [0.08, 0.30],
            mirror_prob: 0.5,
        }
    }
}

impl SynthConfig {
    /// Default settings at a smaller canvas.
    pub fn with_canvas(canvas_px: usize) -> Self {
        Self { canvas_px, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.margin_frac;
        if self.canvas_px == 0 {
            return Err(Error::invalid("canvas_px must be positive"));
        }
        if !(0.0..0.5).contains(&m) {
            return Err(Error::invalid(format!("margin_frac {m} outside [0, 0.5)")));
        }
        let [kmin, kmax] = self.elements_per_image;
        if kmin > kmax {
            return Err(Error::invalid(format!("elements_per_image [{kmin}, {kmax}] is empty")));
        }
        let [smin, smax] = self.scale_range;
        let inner = 1.0 - 2.0 * m;
        if !(smin > 0.0) || smin > smax || smax > inner {
            return Err(Error::invalid(format!(
                "scale_range [{smin}, {smax}] must lie within (0, {inner}] to fit the inner region"
            )));
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return Err(Error::invalid("mirror_prob must be a probability"));
        }
        Ok(())
    }

    /// Requires at least one element per image, as production datasets do.
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        if self.elements_per_image[0] < 1 {
            return Err(Error::invalid("elements_per_image minimum must be at least 1"));
        }
        Ok(())
    }

    /// Inner region `[margin, 1 - margin]` on both axes, canvas fractions.
    pub fn inner_region(&self) -> (f64, f64) {
        (self.margin_frac, 1.0 - self.margin_frac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub element_id: usize,
    /// Long axis of the placed element as a fraction of the canvas.
    pub scale: f64,
    pub rotation_deg: f64,
    pub mirrored: bool,
    /// Bounding-box center in canvas-fraction coordinates.
    pub center: (f64, f64),
}

impl Placement {
    /// Element outline coordinates → canvas-fraction coordinates. Mirroring is
    /// applied before rotation.
    pub fn to_canvas(&self) -> Affine {
        let k = self.scale / NORMALIZED_LONG_SIDE;
        let mut m = Affine::scale(k).after(&Affine::translate(pt(-0.5, -0.5)));
        if self.mirrored {
            m = Affine::mirror_x().after(&m);
        }
        Affine::translate(pt(self.center.0, self.center.1))
            .after(&Affine::rotate(self.rotation_deg.to_radians()))
            .after(&m)
    }

    /// Control-point box of the placed outline, canvas fractions.
    pub fn bbox(&self) -> BBox {
        let spec = &elements()[self.element_id];
        self.to_canvas().apply_path(&spec.path).control_bbox()
    }

    pub fn fits(&self, config: &SynthConfig) -> bool {
        let (lo, hi) = config.inner_region();
        let b = self.bbox();
        b.min.x >= lo && b.min.y >= lo && b.max.x <= hi && b.max.y <= hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleRecipe {
    pub seed: u64,
    pub config: SynthConfig,
    pub placements: Vec<Placement>,
}

/// Canonical elements, built once per process.
pub fn elements() -> &'static [ElementSpec] {
    static ELEMENTS: OnceLock<Vec<ElementSpec>> = OnceLock::new();
    ELEMENTS.get_or_init(list_elements)
}

/// Draws a recipe. Every draw comes from a ChaCha8 stream seeded with `seed`:
/// element count, then per placement the element id, rotation, mirror flag,
/// and scale/center pairs until the rotated box fits the inner region.
///
/// Centers are drawn uniformly from the set of positions where the box fits,
/// which is the distribution rejection sampling over the inner region gives.
pub fn sample_recipe(seed: u64, config: &SynthConfig) -> Result<StyleRecipe> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [kmin, kmax] = config.elements_per_image;
    let count = rng.random_range(kmin..=kmax);
    let (lo, hi) = config.inner_region();
    let [smin, smax] = config.scale_range;
    let mut placements = Vec::with_capacity(count);
    for _ in 0..count {
        let element_id = rng.random_range(0..ELEMENT_COUNT);
        let rotation_deg = rng.random::<f64>() * 360.0;
        let mirrored = rng.random_bool(config.mirror_prob);
        let mut placed = None;
        for _ in 0..MAX_SCALE_ATTEMPTS {
            let scale = if smax > smin { rng.random_range(smin..=smax) } else { smin };
            let mut p = Placement { element_id, scale, rotation_deg, mirrored, center: (0.0, 0.0) };
            let b = p.bbox();
            // Feasible centers: box offset by the center must stay inside [lo, hi].
            let (x0, x1) = (lo - b.min.x, hi - b.max.x);
            let (y0, y1) = (lo - b.min.y, hi - b.max.y);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let cx = if x1 > x0 { rng.random_range(x0..=x1) } else { x0 };
            let cy = if y1 > y0 { rng.random_range(y0..=y1) } else { y0 };
            p.center = (cx, cy);
            placed = Some(p);
            break;
        }
        let p = placed.ok_or_else(|| {
            Error::invalid(format!(
                "element {element_id} at {rotation_deg:.1}° never fit the inner region in {MAX_SCALE_ATTEMPTS} scale draws"
            ))
        })?;
        placements.push(p);
    }
    Ok(StyleRecipe { seed, config: config.clone(), placements })
}

/// Renders one placement as a layer on a white canvas of side `canvas_px`.
pub fn render_placement(p: &Placement, canvas_px: usize) -> Result<RasterImage> {
    let mut canvas = RasterImage::blank(canvas_px, canvas_px)?;
    composite_placement(&mut canvas, p)?;
    Ok(canvas)
}

fn composite_placement(canvas: &mut RasterImage, p: &Placement) -> Result<()> {
    let spec = elements()
        .get(p.element_id)
        .ok_or_else(|| Error::invalid(format!("element id {} out of range", p.element_id)))?;
    let n = canvas.width() as f64;
    let to_px = Affine::scale(n).after(&p.to_canvas());
    let placed = to_px.apply_path(&spec.path);
    let b = placed.control_bbox();
    // Render only the pixel window the element can touch, then darken-composite.
    let x0 = b.min.x.floor().max(0.0) as usize;
    let y0 = b.min.y.floor().max(0.0) as usize;
    let x1 = (b.max.x.ceil().max(0.0) as usize).min(canvas.width());
    let y1 = (b.max.y.ceil().max(0.0) as usize).min(canvas.height());
    if x1 <= x0 || y1 <= y0 {
        return Ok(());
    }
    let shift = Affine::translate(pt(-(x0 as f64), -(y0 as f64)));
    let layer = fill_paths(std::slice::from_ref(&placed), &shift, x1 - x0, y1 - y0);
    for y in 0..layer.height() {
        for x in 0..layer.width() {
            let v = layer.get(x, y);
            if v < canvas.get(x0 + x, y0 + y) {
                canvas.set(x0 + x, y0 + y, v);
            }
        }
    }
    Ok(())
}

/// Ink-union composite of every placement over a white canvas.
pub fn render_recipe(recipe: &StyleRecipe) -> Result<RasterImage> {
    recipe.config.validate()?;
    let n = recipe.config.canvas_px;
    let mut canvas = RasterImage::blank(n, n)?;
    for p in &recipe.placements {
        if p.element_id >= ELEMENT_COUNT {
            return Err(Error::invalid(format!("element id {} out of range", p.element_id)));
        }
        composite_placement(&mut canvas, p)?;
    }
    Ok(canvas)
}

/// Renders image `index` of a dataset seeded with `master`.
pub fn render_indexed(master: u64, index: u32, config: &SynthConfig) -> Result<(u64, RasterImage)> {
    let seed = manifest::image_seed(master, index);
    let recipe = sample_recipe(seed, config)?;
    Ok((seed, render_recipe(&recipe)?))
}

/// Writes `n_train + n_test` style images and `manifest.json` into `out_dir`.
///
/// Image `i` (train first, then test) uses seed `image_seed(seed, i)`; output
/// bytes do not depend on the number of worker threads.
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate_strict()?;
    manifest::check_counts(n_train, n_test)?;
    fsutil::create_dir_all(out_dir)?;
    let total = n_train + n_test;
    let entries = (0..total)
        .into_par_iter()
        .map(|i| {
            let (split, local) = if i < n_train { (Split::Train, i) } else { (Split::Test, i - n_train) };
            let (image_seed, img) = render_indexed(seed, i as u32, config)?;
            let file = manifest::image_file_name("style", split, local);
            let bytes = img.encode_png()?;
            fsutil::write_atomic(&out_dir.join(&file), &bytes)?;
            Ok(ManifestEntry {
                file,
                split,
                seed: Some(image_seed),
                source_id: None,
                license: None,
                crc32: fsutil::crc32_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = DatasetManifest::new(Domain::Style, n_train, n_test);
    m.seed = Some(seed);
    m.seed_rule = Some(SEED_RULE.to_string());
    m.synth = Some(config.clone());
    m.entries = entries;
    m.write(out_dir)?;
    Ok(m)
}

/// True when `out_dir` already holds a valid dataset for exactly these inputs.
pub fn dataset_up_to_date(seed: u64, n_train: usize, n_test: usize, config: &SynthConfig, out_dir: &Path) -> bool {
    let Ok(m) = DatasetManifest::load(out_dir) else {
        return false;
    };
    m.domain == Domain::Style
        && m.seed == Some(seed)
        && m.seed_rule.as_deref() == Some(SEED_RULE)
        && m.n_train == n_train
        && m.n_test == n_test
        && m.synth.as_ref() == Some(config)
        && m.validate(out_dir).is_ok()
}
