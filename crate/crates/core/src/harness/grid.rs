use std::path::PathBuf;

use super::font;
use super::stylize::{fit_to_size, Direction, Stylizer};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

const PAD: usize = 4;
const LINE_H: usize = font::GLYPH_H + 2;
const MAX_LINES: usize = 3;
const INK: u8 = 0;
const BACKGROUND: u8 = 255;

/// Pixel geometry of a labeled grid of square cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub cell: usize,
    pub labels: Vec<Vec<String>>,
}

impl GridLayout {
    pub fn new(labels: &[String], rows: usize, cell: usize) -> Result<Self> {
        if labels.is_empty() || rows == 0 || cell == 0 {
            return Err(Error::invalid("a grid needs at least one column, one row and a non-empty cell"));
        }
        let per_line = (cell / font::ADVANCE).max(1);
        let labels: Vec<Vec<String>> = labels
            .iter()
            .map(|l| {
                let mut lines = font::wrap(l, per_line);
                lines.truncate(MAX_LINES);
                lines
            })
            .collect();
        Ok(Self { rows, cols: labels.len(), cell, labels })
    }

    pub fn header_height(&self) -> usize {
        let lines = self.labels.iter().map(Vec::len).max().unwrap_or(1);
        PAD + lines * LINE_H
    }

    pub fn width(&self) -> usize {
        PAD + self.cols * (self.cell + PAD)
    }

    pub fn height(&self) -> usize {
        self.header_height() + self.rows * (self.cell + PAD)
    }

    /// Top-left pixel of cell (`row`, `col`).
    pub fn cell_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (PAD + col * (self.cell + PAD), self.header_height() + row * (self.cell + PAD))
    }
}

fn draw_text(canvas: &mut RasterImage, text: &str, x0: usize, y0: usize, max_w: usize) {
    for (k, c) in text.chars().enumerate() {
        let gx = x0 + k * font::ADVANCE;
        if gx + font::GLYPH_W > x0 + max_w {
            break;
        }
        for y in 0..font::GLYPH_H {
            for x in 0..font::GLYPH_W {
                if font::pixel(c, x, y) && gx + x < canvas.width() && y0 + y < canvas.height() {
                    canvas.set(gx + x, y0 + y, INK);
                }
            }
        }
    }
}

/// Lays out `rows` of images under one label per column. Every image must
/// be a square of the same size.
pub fn compose_grid(labels: &[String], rows: &[Vec<RasterImage>]) -> Result<RasterImage> {
    let cell = rows.first().and_then(|r| r.first()).map(RasterImage::width).unwrap_or(0);
    let layout = GridLayout::new(labels, rows.len(), cell)?;
    let mut canvas = RasterImage::filled(layout.width(), layout.height(), BACKGROUND)?;
    for (c, lines) in layout.labels.iter().enumerate() {
        let (x0, _) = layout.cell_origin(0, c);
        for (k, line) in lines.iter().enumerate() {
            draw_text(&mut canvas, line, x0, PAD / 2 + k * LINE_H, cell);
        }
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != layout.cols {
            return Err(Error::ShapeMismatch(format!("grid row {r} has {} cells, expected {}", row.len(), layout.cols)));
        }
        for (c, img) in row.iter().enumerate() {
            if (img.width(), img.height()) != (cell, cell) {
                return Err(Error::ShapeMismatch(format!(
                    "grid cell ({r}, {c}) is {}×{}, expected {cell}×{cell}",
                    img.width(),
                    img.height()
                )));
            }
            let (x, y) = layout.cell_origin(r, c);
            canvas.blit(img, x, y);
        }
    }
    Ok(canvas)
}

/// Comparison grid: one row per source silhouette, a "source" column and
/// one column per labeled checkpoint, each translating A to B.
pub fn render_grid(columns: &[(String, PathBuf)], sources: &[RasterImage]) -> Result<RasterImage> {
    if columns.is_empty() || sources.is_empty() {
        return Err(Error::invalid("a grid needs at least one run and one test image"));
    }
    let stylizers = columns.iter().map(|(_, p)| Stylizer::load(p)).collect::<Result<Vec<_>>>()?;
    let cell = stylizers[0].image_size();
    let mut labels = vec!["source".to_string()];
    labels.extend(columns.iter().map(|(l, _)| l.clone()));
    let rows = sources
        .iter()
        .map(|src| {
            let mut row = vec![fit_to_size(src, cell)?];
            for s in &stylizers {
                row.push(fit_to_size(&s.apply(src, Direction::AToB)?, cell)?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    compose_grid(&labels, &rows)
}
