//! Scanline filling of Bézier paths with supersampled anti-aliasing.
//!
//! Paths are flattened to polylines, then every sample row is scanned with
//! the nonzero winding rule. Each output pixel averages `S×S` samples (box
//! filter), so edges come out as intermediate gray levels.

use crate::geom::{Affine, Point, VectorPath};
use crate::raster::RasterImage;

/// Samples per pixel along each axis.
pub const SUPERSAMPLE: usize = 4;

struct Edge {
    x0: f64,
    y0: f64,
    dxdy: f64,
    winding: i32,
    first_row: usize,
    last_row: usize,
}

/// Flattening density: about one polyline piece per two pixels of hull length.
fn pieces_for(hull_px: f64) -> usize {
    ((hull_px / 2.0).ceil() as usize).clamp(4, 256)
}

fn build_edges(paths: &[VectorPath], to_px: &Affine, rows: usize, s: usize) -> Vec<Edge> {
    let mut edges = Vec::new();
    let sf = s as f64;
    for path in paths {
        let mut poly: Vec<Point> = Vec::new();
        for seg in &path.segments {
            let seg = seg.map(|p| to_px.apply(p));
            let pts = seg.flatten(pieces_for(seg.hull_length()));
            let skip = usize::from(!poly.is_empty());
            poly.extend_from_slice(&pts[skip..]);
        }
        if poly.len() < 3 {
            continue;
        }
        let n = poly.len();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if a.y == b.y {
                continue;
            }
            let (top, bot, winding) = if a.y < b.y { (a, b, 1) } else { (b, a, -1) };
            // Sample row r has its center at y = (r + 0.5) / s. An edge covers the
            // rows whose centers fall in [top.y, bot.y).
            let first = (top.y * sf - 0.5).ceil().max(0.0);
            let last = (bot.y * sf - 0.5).ceil() - 1.0;
            if last < first || first >= rows as f64 || last < 0.0 {
                continue;
            }
            edges.push(Edge {
                x0: top.x,
                y0: top.y,
                dxdy: (bot.x - top.x) / (bot.y - top.y),
                winding,
                first_row: first as usize,
                last_row: (last as usize).min(rows - 1),
            });
        }
    }
    edges.sort_by_key(|e| e.first_row);
    edges
}

/// Fills `paths` (given in their own coordinates and mapped to pixels by
/// `to_px`) onto a white `width`×`height` canvas.
pub fn fill_paths(paths: &[VectorPath], to_px: &Affine, width: usize, height: usize) -> RasterImage {
    fill_paths_with(paths, to_px, width, height, SUPERSAMPLE)
}

pub fn fill_paths_with(
    paths: &[VectorPath],
    to_px: &Affine,
    width: usize,
    height: usize,
    s: usize,
) -> RasterImage {
    let coverage = coverage(paths, to_px, width, height, s);
    let full = (s * s) as u32;
    let pixels = coverage
        .into_iter()
        .map(|c| 255 - ((255 * c as u32 + full / 2) / full) as u8)
        .collect();
    RasterImage::from_pixels(width, height, pixels).expect("canvas dimensions are non-zero")
}

/// Per-pixel count of covered samples, `0..=s*s`.
pub fn coverage(paths: &[VectorPath], to_px: &Affine, width: usize, height: usize, s: usize) -> Vec<u16> {
    assert!(width > 0 && height > 0 && s > 0);
    let rows = height * s;
    let cols = width * s;
    let sf = s as f64;
    let edges = build_edges(paths, to_px, rows, s);
    let mut cov = vec![0u16; width * height];
    let mut active: Vec<usize> = Vec::new();
    let mut next = 0;
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for row in 0..rows {
        while next < edges.len() && edges[next].first_row <= row {
            active.push(next);
            next += 1;
        }
        active.retain(|&e| edges[e].last_row >= row);
        if active.is_empty() {
            if next >= edges.len() {
                break;
            }
            continue;
        }
        let y = (row as f64 + 0.5) / sf;
        crossings.clear();
        for &e in &active {
            let e = &edges[e];
            crossings.push((e.x0 + (y - e.y0) * e.dxdy, e.winding));
        }
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        let py = row / s;
        let mut wind = 0;
        for w in 0..crossings.len() {
            wind += crossings[w].1;
            if wind == 0 || w + 1 == crossings.len() {
                continue;
            }
            let xa = crossings[w].0;
            let xb = crossings[w + 1].0;
            // Columns whose sample center (c + 0.5) / s lies in [xa, xb).
            let c0 = (xa * sf - 0.5).ceil().max(0.0);
            let c1 = ((xb * sf - 0.5).ceil()).min(cols as f64);
            if c1 <= c0 {
                continue;
            }
            for c in c0 as usize..c1 as usize {
                cov[py * width + c / s] += 1;
            }
        }
    }
    cov
}
