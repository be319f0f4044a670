//! 8-bit grayscale canvases: 0 is black ink, 255 is white background.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::error::{Error, Result};

/// Pixels below this level count as ink when measuring ink fraction.
pub const INK_THRESHOLD: u8 = 128;

#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("crc32", &format_args!("{:08x}", self.checksum()))
            .finish()
    }
}

impl RasterImage {
    /// A canvas filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("raster must be non-empty, got {width}x{height}")));
        }
        Ok(Self { width, height, pixels: vec![value; width * height] })
    }

    /// A white canvas.
    pub fn blank(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 255)
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Fraction of pixels darker than [`INK_THRESHOLD`].
    pub fn ink_fraction(&self) -> f64 {
        let ink = self.pixels.iter().filter(|&&p| p < INK_THRESHOLD).count();
        ink as f64 / self.pixels.len() as f64
    }

    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| 255 - p).collect(),
        }
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            out.pixels[y * self.width..(y + 1) * self.width].reverse();
        }
        out
    }

    /// Ink-union composite: keeps the darker of the two samples.
    pub fn darken_with(&mut self, layer: &RasterImage) -> Result<()> {
        self.ensure_same_size(layer)?;
        for (d, &s) in self.pixels.iter_mut().zip(&layer.pixels) {
            *d = (*d).min(s);
        }
        Ok(())
    }

    /// Copies `src` into this canvas with its top-left corner at (`x0`, `y0`), clipped.
    pub fn blit(&mut self, src: &RasterImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            let ty = y0 + y;
            if ty >= self.height {
                break;
            }
            for x in 0..src.width {
                let tx = x0 + x;
                if tx >= self.width {
                    break;
                }
                self.set(tx, ty, src.get(x, y));
            }
        }
    }

    /// Area-averaging downsample by an integer factor in both axes.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let area = (factor * factor) as u32;
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0u32;
                for dy in 0..factor {
                    let row = (y * factor + dy) * self.width + x * factor;
                    sum += self.pixels[row..row + factor].iter().map(|&p| p as u32).sum::<u32>();
                }
                out[y * w + x] = ((sum + area / 2) / area) as u8;
            }
        }
        Self::from_pixels(w, h, out)
    }

    /// Resamples to `width`×`height` by exact box-filter area coverage.
    ///
    /// Works for both shrinking and enlarging and is fully deterministic.
    pub fn resize_area(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("resize target must be non-empty"));
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let xs = box_weights(self.width, width, sx);
        let ys = box_weights(self.height, height, sy);
        let mut out = vec![0u8; width * height];
        for (oy, wy) in ys.iter().enumerate() {
            for (ox, wx) in xs.iter().enumerate() {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for &(iy, fy) in wy {
                    for &(ix, fx) in wx {
                        let w = fy * fx;
                        acc += w * self.get(ix, iy) as f64;
                        norm += w;
                    }
                }
                out[oy * width + ox] = (acc / norm).round().clamp(0.0, 255.0) as u8;
            }
        }
        Self::from_pixels(width, height, out)
    }

    /// Draws this image scaled by `scale` with its top-left corner at the
    /// fractional position (`off_x`, `off_y`) onto a `width`×`height` canvas
    /// of `background`. Each output pixel averages the source area it covers;
    /// uncovered area counts as background.
    pub fn place_scaled(
        &self,
        scale: f64,
        off_x: f64,
        off_y: f64,
        width: usize,
        height: usize,
        background: u8,
    ) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("placement scale {scale} must be positive")));
        }
        let xs = placed_weights(self.width, width, scale, off_x);
        let ys = placed_weights(self.height, height, scale, off_y);
        let bg = background as f64;
        let mut out = vec![background; width * height];
        for (oy, wy) in ys.iter().enumerate() {
            if wy.is_empty() {
                continue;
            }
            for (ox, wx) in xs.iter().enumerate() {
                if wx.is_empty() {
                    continue;
                }
                let mut acc = 0.0;
                let mut covered = 0.0;
                for &(iy, fy) in wy {
                    for &(ix, fx) in wx {
                        let w = fy * fx;
                        acc += w * self.get(ix, iy) as f64;
                        covered += w;
                    }
                }
                let v = acc + (1.0 - covered).max(0.0) * bg;
                out[oy * width + ox] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        Self::from_pixels(width, height, out)
    }

    pub fn mean_abs_diff(&self, other: &RasterImage) -> Result<f64> {
        self.ensure_same_size(other)?;
        let total: u64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64)
            .sum();
        Ok(total as f64 / self.pixels.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &RasterImage) -> Result<u8> {
        self.ensure_same_size(other)?;
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u8)
            .max()
            .unwrap_or(0))
    }

    /// CRC-32 of width, height and pixel bytes.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.width as u32).to_le_bytes());
        h.update(&(self.height as u32).to_le_bytes());
        h.update(&self.pixels);
        h.finalize()
    }

    fn ensure_same_size(&self, other: &RasterImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("pixel count checked at construction");
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Decodes any supported raster payload, flattening alpha onto white.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        let rgba = img.to_luma_alpha8();
        let (w, h) = rgba.dimensions();
        let pixels = rgba
            .pixels()
            .map(|p| {
                let [l, a] = p.0;
                let a = a as u32;
                ((l as u32 * a + 255 * (255 - a) + 127) / 255) as u8
            })
            .collect();
        Self::from_pixels(w as usize, h as usize, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        crate::fsutil::write_atomic(path, &bytes)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

// For each output cell, the input cells it overlaps and the overlap length.
fn box_weights(in_len: usize, out_len: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    (0..out_len)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = lo + scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(in_len);
            let mut cells = Vec::new();
            for i in first..last.max(first + 1).min(in_len) {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((i, overlap));
                }
            }
            if cells.is_empty() {
                cells.push((first.min(in_len - 1), 1.0));
            }
            cells
        })
        .collect()
}

// Source cells overlapping each output cell, weighted by the overlap as a
// fraction of the output cell. Output cell o spans source [(o - off)/s, (o + 1 - off)/s).
fn placed_weights(in_len: usize, out_len: usize, scale: f64, off: f64) -> Vec<Vec<(usize, f64)>> {
    (0..out_len)
        .map(|o| {
            let lo = (o as f64 - off) / scale;
            let hi = (o as f64 + 1.0 - off) / scale;
            let first = lo.floor().max(0.0);
            let last = hi.ceil().min(in_len as f64);
            let mut cells = Vec::new();
            if last <= first {
                return cells;
            }
            for i in first as usize..last as usize {
                let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                if overlap > 0.0 {
                    cells.push((i, overlap * scale));
                }
            }
            cells
        })
        .collect()
}
