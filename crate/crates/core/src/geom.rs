//! Cubic Bézier paths and affine placement transforms.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the closed-path endpoint check.
pub const CLOSE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

pub const fn pt(x: f64, y: f64) -> Point {
    Point { x, y }
}

impl Point {
    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        self + (o - self) * t
    }

    pub fn rotated(self, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        pt(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Unit normal to the left of direction `self`.
    pub fn perp(self) -> Point {
        let n = self.norm();
        if n == 0.0 {
            pt(0.0, 0.0)
        } else {
            pt(-self.y / n, self.x / n)
        }
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        pt(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        pt(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        pt(self.x * k, self.y * k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicBezier {
    pub p0: Point,
    pub p1: Point,
    pub p2: Point,
    pub p3: Point,
}

impl CubicBezier {
    pub fn new(p0: Point, p1: Point, p2: Point, p3: Point) -> Self {
        Self { p0, p1, p2, p3 }
    }

    /// Straight segment with control points at thirds.
    pub fn line(a: Point, b: Point) -> Self {
        Self::new(a, a.lerp(b, 1.0 / 3.0), a.lerp(b, 2.0 / 3.0), b)
    }

    pub fn eval(&self, t: f64) -> Point {
        let u = 1.0 - t;
        let (b0, b1, b2, b3) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
        pt(
            b0 * self.p0.x + b1 * self.p1.x + b2 * self.p2.x + b3 * self.p3.x,
            b0 * self.p0.y + b1 * self.p1.y + b2 * self.p2.y + b3 * self.p3.y,
        )
    }

    pub fn control_points(&self) -> [Point; 4] {
        [self.p0, self.p1, self.p2, self.p3]
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self::new(f(self.p0), f(self.p1), f(self.p2), f(self.p3))
    }

    /// Length of the control polygon, an upper bound on the arc length.
    pub fn hull_length(&self) -> f64 {
        self.p0.dist(self.p1) + self.p1.dist(self.p2) + self.p2.dist(self.p3)
    }

    /// Uniform-parameter polyline with `n` pieces, including both endpoints.
    pub fn flatten(&self, n: usize) -> Vec<Point> {
        let n = n.max(1);
        (0..=n).map(|i| self.eval(i as f64 / n as f64)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn long_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn center(&self) -> Point {
        self.min.lerp(self.max, 0.5)
    }

    fn of(points: impl IntoIterator<Item = Point>) -> Option<BBox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox { min: first, max: first };
        for p in it {
            b.min.x = b.min.x.min(p.x);
            b.min.y = b.min.y.min(p.y);
            b.max.x = b.max.x.max(p.x);
            b.max.y = b.max.y.max(p.y);
        }
        Some(b)
    }
}

/// A sequence of cubic segments, normally closed, in unit coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorPath {
    pub segments: Vec<CubicBezier>,
    pub closed: bool,
}

impl VectorPath {
    /// Builds a closed path, checking segment continuity and closure.
    pub fn closed(segments: Vec<CubicBezier>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::invalid("path needs at least one segment"));
        }
        for w in segments.windows(2) {
            if w[0].p3.dist(w[1].p0) > CLOSE_TOLERANCE {
                return Err(Error::invalid("path segments are not contiguous"));
            }
        }
        let path = Self { segments, closed: true };
        if path.closure_gap() > CLOSE_TOLERANCE {
            return Err(Error::invalid(format!("path is not closed (gap {})", path.closure_gap())));
        }
        Ok(path)
    }

    /// Distance between the last endpoint and the first start point.
    pub fn closure_gap(&self) -> f64 {
        match (self.segments.first(), self.segments.last()) {
            (Some(f), Some(l)) => l.p3.dist(f.p0),
            _ => 0.0,
        }
    }

    pub fn control_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.segments.iter().flat_map(|s| s.control_points())
    }

    /// Box around every control point; contains the curve.
    pub fn control_bbox(&self) -> BBox {
        BBox::of(self.control_points()).unwrap_or(BBox { min: Point::default(), max: Point::default() })
    }

    /// Box around a dense sampling of the curve.
    pub fn curve_bbox(&self) -> BBox {
        BBox::of(self.segments.iter().flat_map(|s| s.flatten(64)))
            .unwrap_or(BBox { min: Point::default(), max: Point::default() })
    }

    pub fn map(&self, f: impl Fn(Point) -> Point + Copy) -> Self {
        Self { segments: self.segments.iter().map(|s| s.map(f)).collect(), closed: self.closed }
    }

    /// Rotation by `angle` radians about `center`.
    pub fn rotated(&self, angle: f64, center: Point) -> Self {
        self.map(|p| (p - center).rotated(angle) + center)
    }

    /// Negates every x coordinate (mirror about the line x = 0). Applying it
    /// twice reproduces the original bit for bit.
    pub fn mirrored(&self) -> Self {
        self.map(|p| pt(-p.x, p.y))
    }

    pub fn translated(&self, d: Point) -> Self {
        self.map(|p| p + d)
    }

    pub fn scaled(&self, k: f64) -> Self {
        self.map(|p| p * k)
    }

    /// Polyline through every segment, `per_segment` pieces each; the shared
    /// endpoints between segments appear once.
    pub fn polyline(&self, per_segment: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.segments.len() * per_segment + 1);
        for (i, s) in self.segments.iter().enumerate() {
            let pts = s.flatten(per_segment);
            let skip = usize::from(i > 0);
            out.extend_from_slice(&pts[skip..]);
        }
        out
    }

    /// Signed area of the polygonal approximation (positive for
    /// counter-clockwise in a y-up frame).
    pub fn signed_area(&self) -> f64 {
        let poly = self.polyline(32);
        let n = poly.len();
        let mut a = 0.0;
        for i in 0..n {
            let p = poly[i];
            let q = poly[(i + 1) % n];
            a += p.cross(q);
        }
        0.5 * a
    }

    /// Plain-text dump: one segment per line, eight coordinates each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# cubic segments: x0 y0 x1 y1 x2 y2 x3 y3");
        let _ = writeln!(s, "closed {}", self.closed);
        for seg in &self.segments {
            let c = seg.control_points();
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y
            );
        }
        s
    }

    /// Parses the format written by [`VectorPath::to_text`]. Several paths may
    /// be concatenated; each `closed` line starts a new one.
    pub fn parse_text(text: &str) -> Result<Vec<VectorPath>> {
        let mut paths: Vec<VectorPath> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(flag) = line.strip_prefix("closed") {
                let closed = flag.trim().parse::<bool>().map_err(|_| {
                    Error::invalid(format!("line {}: bad closed flag", lineno + 1))
                })?;
                paths.push(VectorPath { segments: Vec::new(), closed });
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("line {}: expected numbers", lineno + 1)))?;
            if nums.len() != 8 || nums.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("line {}: expected 8 finite coordinates", lineno + 1)));
            }
            let seg = CubicBezier::new(
                pt(nums[0], nums[1]),
                pt(nums[2], nums[3]),
                pt(nums[4], nums[5]),
                pt(nums[6], nums[7]),
            );
            match paths.last_mut() {
                Some(p) => p.segments.push(seg),
                None => paths.push(VectorPath { segments: vec![seg], closed: true }),
            }
        }
        paths.retain(|p| !p.segments.is_empty());
        if paths.is_empty() {
            return Err(Error::invalid("no path segments found"));
        }
        Ok(paths)
    }
}

/// Row-major 2×3 affine map `p ↦ A·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { a: 1.0, b: 0.0, c: 0.0, d: 1.0, tx: 0.0, ty: 0.0 };

    pub fn scale(k: f64) -> Self {
        Affine { a: k, d: k, ..Self::IDENTITY }
    }

    pub fn translate(d: Point) -> Self {
        Affine { tx: d.x, ty: d.y, ..Self::IDENTITY }
    }

    pub fn rotate(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Affine { a: c, b: -s, c: s, d: c, tx: 0.0, ty: 0.0 }
    }

    pub fn mirror_x() -> Self {
        Affine { a: -1.0, ..Self::IDENTITY }
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &Affine) -> Affine {
        Affine {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
            tx: self.a * first.tx + self.b * first.ty + self.tx,
            ty: self.c * first.tx + self.d * first.ty + self.ty,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        pt(self.a * p.x + self.b * p.y + self.tx, self.c * p.x + self.d * p.y + self.ty)
    }

    pub fn apply_path(&self, path: &VectorPath) -> VectorPath {
        let m = *self;
        path.map(move |p| m.apply(p))
    }
}
