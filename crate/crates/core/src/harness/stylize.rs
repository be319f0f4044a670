use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::engine::{from_tensor, load_checkpoint, to_tensor, Generator, ModelBundle};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Translation direction. `AToB` turns a silhouette into a styled image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    AToB,
    BToA,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AToB => "a2b",
            Direction::BToA => "b2a",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2b" | "a-to-b" | "a_to_b" | "atob" => Ok(Direction::AToB),
            "b2a" | "b-to-a" | "b_to_a" | "btoa" => Ok(Direction::BToA),
            _ => Err(Error::invalid(format!("unknown direction {s:?} (use a2b or b2a)"))),
        }
    }
}

/// Inference-only pair of generators.
#[derive(Clone, Debug)]
pub struct Stylizer {
    g_a: Generator<f32>,
    g_b: Generator<f32>,
}

impl Stylizer {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        Ok(Self::from_bundle(&load_checkpoint::<f32>(checkpoint)?.state.bundle))
    }

    pub fn from_bundle(bundle: &ModelBundle<f32>) -> Self {
        Self { g_a: bundle.g_a.clone(), g_b: bundle.g_b.clone() }
    }

    pub fn image_size(&self) -> usize {
        self.g_a.config.image_size
    }

    /// Translates one image; inputs of another size are fitted first and the
    /// output has the model's size.
    pub fn apply(&self, image: &RasterImage, direction: Direction) -> Result<RasterImage> {
        let input = fit_to_size(image, self.image_size())?;
        let net = match direction {
            Direction::AToB => &self.g_b,
            Direction::BToA => &self.g_a,
        };
        Ok(from_tensor(&net.apply(&to_tensor::<f32>(&input))?))
    }
}

/// Loads a checkpoint and translates a single image.
pub fn stylize(checkpoint: &Path, image: &RasterImage, direction: Direction) -> Result<RasterImage> {
    Stylizer::load(checkpoint)?.apply(image, direction)
}

/// Scales an image to fit a `size`×`size` square, preserving aspect ratio,
/// and centers it on white.
pub fn fit_to_size(image: &RasterImage, size: usize) -> Result<RasterImage> {
    let (w, h) = (image.width(), image.height());
    if (w, h) == (size, size) {
        return Ok(image.clone());
    }
    let scale = size as f64 / w.max(h) as f64;
    let off_x = (size as f64 - w as f64 * scale) / 2.0;
    let off_y = (size as f64 - h as f64 * scale) / 2.0;
    image.place_scaled(scale, off_x, off_y, size, size, 255)
}
