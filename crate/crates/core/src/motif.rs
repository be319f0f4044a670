//! The 32 basic decorative elements.
//!
//! Eight motif families (flame, leaf, vine and curl forms) each come in four
//! parameter variations. Every element is a single closed outline of cubic
//! Bézier segments in unit coordinates, y pointing down, normalized so its
//! curve bounding box is centered at (0.5, 0.5) with a long side of
//! [`NORMALIZED_LONG_SIDE`].
//!
//! Outlines are built around a spine running from the base to the tip with a
//! half-width profile. The contour starts at the tip, runs down the right
//! flank, around the base and back up the left flank. The last segment always
//! arrives at the tip and is the "tip segment": its start tangent is rotated
//! by `tip_curl` radians away from the chord, so `tip_curl = 0` makes it a
//! straight line.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Range, RangeInclusive};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{pt, Affine, CubicBezier, Point, VectorPath};
use crate::raster::RasterImage;
use crate::rasterize::fill_paths;

pub const ELEMENT_COUNT: usize = 32;
pub const VARIATIONS_PER_FAMILY: usize = 4;
pub const NORMALIZED_LONG_SIDE: f64 = 0.9;
pub const MIN_RENDER_PX: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FlameTongue,
    SerratedFlame,
    CurlSpiral,
    TeardropLeaf,
    VineSCurve,
    TripleFlame,
    Hook,
    LanceolateLeaf,
}

impl Family {
    pub const ALL: [Family; 8] = [
        Family::FlameTongue,
        Family::SerratedFlame,
        Family::CurlSpiral,
        Family::TeardropLeaf,
        Family::VineSCurve,
        Family::TripleFlame,
        Family::Hook,
        Family::LanceolateLeaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::FlameTongue => "flame_tongue",
            Family::SerratedFlame => "serrated_flame",
            Family::CurlSpiral => "curl_spiral",
            Family::TeardropLeaf => "teardrop_leaf",
            Family::VineSCurve => "vine_s_curve",
            Family::TripleFlame => "triple_flame",
            Family::Hook => "hook",
            Family::LanceolateLeaf => "lanceolate_leaf",
        }
    }

    /// Documented parameter ranges; [`element_path`] rejects anything outside.
    pub fn ranges(self) -> VariationRanges {
        let (aspect, curvature) = match self {
            Family::FlameTongue => (2.0..=3.5, 0.0..=1.0),
            Family::SerratedFlame => (2.0..=3.5, 0.0..=1.0),
            Family::CurlSpiral => (4.0..=7.0, 0.6..=1.2),
            Family::TeardropLeaf => (1.3..=2.2, 0.0..=0.8),
            Family::VineSCurve => (3.0..=5.0, 0.3..=0.9),
            Family::TripleFlame => (1.2..=2.0, 0.0..=0.6),
            Family::Hook => (3.0..=5.0, 0.5..=1.0),
            Family::LanceolateLeaf => (3.0..=4.5, 0.0..=0.6),
        };
        let serrations = if self == Family::SerratedFlame { 2..=8 } else { 0..=0 };
        VariationRanges { aspect, curvature, serrations, tip_curl: 0.0..=1.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationRanges {
    pub aspect: RangeInclusive<f64>,
    pub curvature: RangeInclusive<f64>,
    pub serrations: RangeInclusive<u32>,
    pub tip_curl: RangeInclusive<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    /// Spine length over maximum width.
    pub aspect: f64,
    /// Family-specific bend amount.
    pub curvature: f64,
    /// Teeth on the serrated flank (serrated flames only).
    pub serrations: u32,
    /// Turning angle of the tip segment, radians.
    pub tip_curl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementSpec {
    pub id: usize,
    pub family: Family,
    pub variation: Variation,
    pub path: VectorPath,
}

impl ElementSpec {
    /// Builds a spec outside the canonical table, validating the variation.
    pub fn custom(id: usize, family: Family, variation: Variation) -> Result<Self> {
        let path = build_path(family, &variation)?;
        Ok(Self { id, family, variation, path })
    }

    /// Segment indices of the serrated flank, for serrated flames.
    pub fn serrated_edge(&self) -> Option<Range<usize>> {
        (self.family == Family::SerratedFlame).then(|| 0..self.variation.serrations as usize)
    }
}

// Positions of the four variations inside each family range.
const ASPECT_STEPS: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
const CURVATURE_STEPS: [f64; 4] = [0.5, 1.0, 0.0, 0.75];
const TIP_CURLS: [f64; 4] = [0.0, 0.4, 0.8, 1.2];
const SERRATIONS: [u32; 4] = [3, 4, 5, 6];

fn canonical_variation(family: Family, v: usize) -> Variation {
    let r = family.ranges();
    let lerp = |range: &RangeInclusive<f64>, f: f64| range.start() * (1.0 - f) + range.end() * f;
    Variation {
        aspect: lerp(&r.aspect, ASPECT_STEPS[v]),
        curvature: lerp(&r.curvature, CURVATURE_STEPS[v]),
        serrations: if family == Family::SerratedFlame { SERRATIONS[v] } else { 0 },
        tip_curl: TIP_CURLS[v],
    }
}

/// The 32 canonical elements, `id = family_index * 4 + variation_index`.
pub fn list_elements() -> Vec<ElementSpec> {
    Family::ALL
        .iter()
        .enumerate()
        .flat_map(|(fi, &family)| {
            (0..VARIATIONS_PER_FAMILY).map(move |v| {
                let variation = canonical_variation(family, v);
                let path = build_path(family, &variation).expect("canonical variations are in range");
                ElementSpec { id: fi * VARIATIONS_PER_FAMILY + v, family, variation, path }
            })
        })
        .collect()
}

pub fn element(id: usize) -> Result<ElementSpec> {
    if id >= ELEMENT_COUNT {
        return Err(Error::invalid(format!("element id {id} out of range 0..{ELEMENT_COUNT}")));
    }
    let family = Family::ALL[id / VARIATIONS_PER_FAMILY];
    let variation = canonical_variation(family, id % VARIATIONS_PER_FAMILY);
    ElementSpec::custom(id, family, variation)
}

/// Rebuilds the outline from the spec's family and variation.
pub fn element_path(spec: &ElementSpec) -> Result<VectorPath> {
    build_path(spec.family, &spec.variation)
}

pub fn render_element(spec: &ElementSpec, size_px: usize) -> Result<RasterImage> {
    if size_px < MIN_RENDER_PX {
        return Err(Error::invalid(format!("render size {size_px} below minimum {MIN_RENDER_PX}")));
    }
    Ok(fill_paths(
        std::slice::from_ref(&spec.path),
        &Affine::scale(size_px as f64),
        size_px,
        size_px,
    ))
}

/// Writes `element_NN.png` and `element_NN.txt` (control points) into `dir`.
pub fn export_element(spec: &ElementSpec, size_px: usize, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    crate::fsutil::create_dir_all(dir)?;
    let png = dir.join(format!("element_{:02}.png", spec.id));
    let txt = dir.join(format!("element_{:02}.txt", spec.id));
    render_element(spec, size_px)?.save_png(&png)?;
    let header = format!("# element {} {} {:?}\n", spec.id, spec.family.name(), spec.variation);
    crate::fsutil::write_atomic(&txt, (header + &spec.path.to_text()).as_bytes())?;
    Ok((png, txt))
}

fn validate(family: Family, v: &Variation) -> Result<()> {
    let r = family.ranges();
    let bad = |what: &str| {
        Err(Error::invalid(format!("{what} out of range for {}: {v:?}", family.name())))
    };
    if !v.aspect.is_finite() || !r.aspect.contains(&v.aspect) {
        return bad("aspect");
    }
    if !v.curvature.is_finite() || !r.curvature.contains(&v.curvature) {
        return bad("curvature");
    }
    if !r.serrations.contains(&v.serrations) {
        return bad("serrations");
    }
    if !v.tip_curl.is_finite() || !r.tip_curl.contains(&v.tip_curl) {
        return bad("tip_curl");
    }
    Ok(())
}

/// Spine sampled by integrating a heading function over arc length.
struct Spine {
    points: Vec<Point>,
    headings: Vec<f64>,
}

const SPINE_STEPS: usize = 512;

impl Spine {
    fn new(length: f64, heading: impl Fn(f64) -> f64) -> Self {
        let dt = 1.0 / SPINE_STEPS as f64;
        let mut points = Vec::with_capacity(SPINE_STEPS + 1);
        let mut headings = Vec::with_capacity(SPINE_STEPS + 1);
        let mut p = pt(0.0, 0.0);
        points.push(p);
        headings.push(heading(0.0));
        for i in 0..SPINE_STEPS {
            let mid = heading((i as f64 + 0.5) * dt);
            p = p + pt(mid.cos(), mid.sin()) * (length * dt);
            points.push(p);
            headings.push(heading((i + 1) as f64 * dt));
        }
        Self { points, headings }
    }

    fn at(&self, t: f64) -> (Point, Point) {
        let i = ((t * SPINE_STEPS as f64).round() as usize).min(SPINE_STEPS);
        let h = self.headings[i];
        (self.points[i], pt(h.cos(), h.sin()))
    }

    /// Left and right flank points at `t` for half-width `w`.
    fn flanks(&self, t: f64, w: f64) -> (Point, Point) {
        let (p, dir) = self.at(t);
        let n = dir.perp();
        (p + n * w, p - n * w)
    }
}

#[derive(Clone, Copy)]
struct Knot {
    p: Point,
    corner: bool,
}

fn smooth(p: Point) -> Knot {
    Knot { p, corner: false }
}

fn corner(p: Point) -> Knot {
    Knot { p, corner: true }
}

/// Open Catmull-Rom chain through `knots[from..=to]`, using neighbours for
/// end tangents; corner knots get chord-aligned handles.
fn catmull_rom(knots: &[Knot], prev: Option<Point>, next: Option<Point>) -> Vec<CubicBezier> {
    let n = knots.len();
    let tangent_out = |i: usize| -> Point {
        let k = knots[i];
        let before = if i > 0 { Some(knots[i - 1].p) } else { prev };
        let after = if i + 1 < n { Some(knots[i + 1].p) } else { next };
        match (k.corner, before, after) {
            (false, Some(b), Some(a)) => (a - b) * 0.5,
            (_, _, Some(a)) => a - k.p,
            (_, Some(b), None) => k.p - b,
            _ => pt(0.0, 0.0),
        }
    };
    let tangent_in = |i: usize| -> Point {
        let k = knots[i];
        let before = if i > 0 { Some(knots[i - 1].p) } else { prev };
        let after = if i + 1 < n { Some(knots[i + 1].p) } else { next };
        match (k.corner, before, after) {
            (false, Some(b), Some(a)) => (a - b) * 0.5,
            (_, Some(b), _) => k.p - b,
            (_, None, Some(a)) => a - k.p,
            _ => pt(0.0, 0.0),
        }
    };
    (0..n.saturating_sub(1))
        .map(|i| {
            let a = knots[i].p;
            let b = knots[i + 1].p;
            CubicBezier::new(a, a + tangent_out(i) * (1.0 / 3.0), b - tangent_in(i + 1) * (1.0 / 3.0), b)
        })
        .collect()
}

/// Outward-bulging arch from `a` to `b`; `outward` points away from the body.
fn scallop(a: Point, b: Point, outward: Point, depth: f64) -> CubicBezier {
    let chord = b - a;
    let n = outward * (depth * chord.norm());
    CubicBezier::new(a, a + chord * (1.0 / 3.0) + n, a + chord * (2.0 / 3.0) + n, b)
}

fn tip_segment(from: Point, tip: Point, curl: f64) -> CubicBezier {
    let chord = tip - from;
    CubicBezier::new(from, from + (chord * (1.0 / 3.0)).rotated(curl), from + chord * (2.0 / 3.0), tip)
}

const STATIONS: usize = 8;
const TIP_STATION: usize = 6;

/// Ribbon outline around a spine: smooth flanks, rounded base, curled tip.
/// With `serrations > 0` the right flank becomes a chain of scallops.
fn ribbon(spine: &Spine, half_width: impl Fn(f64) -> f64, serrations: u32, tip_curl: f64) -> Vec<CubicBezier> {
    let (tip, _) = spine.at(1.0);
    let station = |i: usize| i as f64 / STATIONS as f64;
    let mut segs = Vec::new();

    // Right flank, tip to base.
    let base_right = spine.flanks(0.0, half_width(0.0)).1;
    if serrations > 0 {
        let n = serrations as usize;
        let mut pts = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let t = 1.0 - j as f64 / n as f64;
            pts.push(if j == 0 { tip } else { spine.flanks(t, half_width(t)).1 });
        }
        for j in 0..n {
            let (a, b) = (pts[j], pts[j + 1]);
            // Travelling tip→base on the right flank, the body lies to the right of travel.
            let outward = (b - a).perp();
            segs.push(scallop(a, b, outward, 0.35));
        }
    } else {
        let mut knots = vec![corner(tip)];
        for i in (1..STATIONS).rev() {
            let t = station(i);
            knots.push(smooth(spine.flanks(t, half_width(t)).1));
        }
        knots.push(smooth(base_right));
        let after = spine.flanks(0.0, half_width(0.0)).0;
        segs.extend(catmull_rom(&knots, None, Some(after)));
    }

    // Base cap and left flank up to the tip station.
    let (base, dir0) = spine.at(0.0);
    let w0 = half_width(0.0);
    let base_left = spine.flanks(0.0, w0).0;
    let mut knots = vec![smooth(base_right)];
    if w0 > 1e-3 {
        knots.push(smooth(base - dir0 * (0.8 * w0)));
        knots.push(smooth(base_left));
    }
    for i in 1..=TIP_STATION {
        let t = station(i);
        knots.push(smooth(spine.flanks(t, half_width(t)).0));
    }
    let before = spine.flanks(station(1), half_width(station(1))).1;
    let mut left = catmull_rom(&knots, Some(before), Some(tip));
    if w0 <= 1e-3 {
        // Degenerate base: base_right and base_left coincide; drop the empty piece.
        left.retain(|s| s.p0.dist(s.p3) > 1e-12);
    }
    segs.extend(left);
    let last = segs.last().expect("ribbon has flank segments").p3;
    segs.push(tip_segment(last, tip, -tip_curl));
    segs
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn triple_flame(v: &Variation) -> Vec<CubicBezier> {
    let h = v.aspect;
    let spread = 0.35 + v.curvature;
    let side_tip = |s: f64| pt(s * (0.45 + 0.25 * spread), 0.72 * h);
    let tip = pt(0.0, h);
    let knots = vec![
        corner(tip),
        smooth(pt(0.12, 0.72 * h)),
        corner(pt(0.22, 0.5 * h)),
        smooth(pt(0.42, 0.58 * h)),
        corner(side_tip(1.0)),
        smooth(pt(0.5, 0.3 * h)),
        smooth(pt(0.32, 0.05 * h)),
        smooth(pt(0.0, -0.08 * h)),
        smooth(pt(-0.32, 0.05 * h)),
        smooth(pt(-0.5, 0.3 * h)),
        corner(side_tip(-1.0)),
        smooth(pt(-0.42, 0.58 * h)),
        corner(pt(-0.22, 0.5 * h)),
        smooth(pt(-0.12, 0.72 * h)),
    ];
    let mut segs = catmull_rom(&knots, None, Some(tip));
    let last = segs.last().expect("triple flame has segments").p3;
    segs.push(tip_segment(last, tip, -v.tip_curl));
    segs
}

fn build_path(family: Family, v: &Variation) -> Result<VectorPath> {
    validate(family, v)?;
    let c = v.curvature;
    let len = v.aspect;
    let segs = match family {
        Family::FlameTongue | Family::SerratedFlame => {
            let spine = Spine::new(len, |t| FRAC_PI_2 - c * 1.4 * t.powf(1.5));
            let w = |t: f64| 0.5 * (PI * (0.35 + 0.65 * t)).sin().max(0.0).powf(0.9);
            let serr = if family == Family::SerratedFlame { v.serrations } else { 0 };
            ribbon(&spine, w, serr, v.tip_curl)
        }
        Family::CurlSpiral => {
            let spine = Spine::new(len, |t| FRAC_PI_2 + c * 2.0 * PI * t.powf(1.6));
            ribbon(&spine, |t| 0.5 * (1.0 - t).powf(0.7), 0, v.tip_curl)
        }
        Family::TeardropLeaf => {
            let spine = Spine::new(len, |t| FRAC_PI_2 + c * 0.6 * (t - 0.5));
            ribbon(&spine, |t| 0.5 * (PI * (0.25 + 0.75 * t)).sin().max(0.0), 0, v.tip_curl)
        }
        Family::VineSCurve => {
            let spine = Spine::new(len, |t| FRAC_PI_2 + c * (2.0 * PI * t).sin());
            ribbon(&spine, |t| 0.5 * (0.6 + 0.4 * (1.0 - t)) * (1.0 - t.powi(4)), 0, v.tip_curl)
        }
        Family::TripleFlame => triple_flame(v),
        Family::Hook => {
            let spine = Spine::new(len, |t| FRAC_PI_2 + c * PI * smoothstep(0.4, 1.0, t));
            ribbon(&spine, |t| 0.45 * (1.0 - t).powf(0.5), 0, v.tip_curl)
        }
        Family::LanceolateLeaf => {
            let spine = Spine::new(len, |t| FRAC_PI_2 + c * 0.5 * t);
            ribbon(&spine, |t| 0.5 * (PI * t).sin().max(0.0).powf(0.7), 0, v.tip_curl)
        }
    };
    normalize(VectorPath::closed(segs)?)
}

/// Flips to y-down and fits the curve box to a centered square of side 0.9.
fn normalize(path: VectorPath) -> Result<VectorPath> {
    let flipped = path.map(|p| pt(p.x, -p.y));
    let bbox = flipped.curve_bbox();
    let long = bbox.long_side();
    if !(long > 0.0) {
        return Err(Error::invalid("degenerate element outline"));
    }
    let k = NORMALIZED_LONG_SIDE / long;
    let c = bbox.center();
    let to_unit = Affine::translate(pt(0.5, 0.5)).after(&Affine::scale(k)).after(&Affine::translate(pt(-c.x, -c.y)));
    let mut out = to_unit.apply_path(&flipped);
    // Re-snap the seam so closure holds exactly after the transform.
    if let (Some(first), Some(last)) = (out.segments.first().map(|s| s.p0), out.segments.last_mut()) {
        last.p3 = first;
    }
    VectorPath::closed(out.segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_two_ids_in_order() {
        let all = list_elements();
        assert_eq!(all.len(), ELEMENT_COUNT);
        for (i, e) in all.iter().enumerate() {
            assert_eq!(e.id, i);
            assert_eq!(e.family, Family::ALL[i / 4]);
        }
        assert_eq!(all, list_elements());
    }

    #[test]
    fn element_lookup_matches_table() {
        let all = list_elements();
        for id in [0, 13, 31] {
            assert_eq!(element(id).unwrap(), all[id]);
        }
        assert!(element(32).is_err());
    }

    #[test]
    fn every_variation_is_distinct() {
        let all = list_elements();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i].path, all[j].path, "{i} vs {j}");
            }
        }
    }

    #[test]
    fn out_of_range_variation_rejected() {
        let mut v = canonical_variation(Family::Hook, 0);
        v.aspect = 10.0;
        assert!(ElementSpec::custom(0, Family::Hook, v).is_err());
        let mut v = canonical_variation(Family::FlameTongue, 0);
        v.serrations = 3;
        assert!(ElementSpec::custom(0, Family::FlameTongue, v).is_err());
        let mut v = canonical_variation(Family::SerratedFlame, 0);
        v.tip_curl = f64::NAN;
        assert!(ElementSpec::custom(0, Family::SerratedFlame, v).is_err());
    }

    #[test]
    fn small_render_rejected() {
        assert!(render_element(&element(0).unwrap(), 15).is_err());
        assert!(render_element(&element(0).unwrap(), 16).is_ok());
    }

    #[test]
    fn export_writes_png_and_text() {
        let dir = tempfile::tempdir().unwrap();
        let spec = element(5).unwrap();
        let (png, txt) = export_element(&spec, 32, dir.path()).unwrap();
        assert_eq!(RasterImage::load_png(&png).unwrap(), render_element(&spec, 32).unwrap());
        let parsed = VectorPath::parse_text(&std::fs::read_to_string(txt).unwrap()).unwrap();
        assert_eq!(parsed[0].segments.len(), spec.path.segments.len());
    }
}
