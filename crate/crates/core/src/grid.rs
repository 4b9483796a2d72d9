//! Regular-grid fields, masks and the polyline geometry used by every stage.
//!
//! Grid points are addressed by integer `(x, y)` with `x` along the width; values are stored
//! row-major. Continuous coordinates share the same frame, so grid point `(i, j)` sits at
//! `Point2 { x: i, y: j }`. The grid spacing is fixed to one grid unit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Distance below which two intersection points are considered the same.
pub const INTERSECTION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 2]", into = "[T; 2]")]
#[serde(bound = "T: Real")]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T> From<[T; 2]> for Point2<T> {
    fn from([x, y]: [T; 2]) -> Self {
        Point2 { x, y }
    }
}

impl<T> From<Point2<T>> for [T; 2] {
    fn from(p: Point2<T>) -> Self {
        [p.x, p.y]
    }
}

impl<T: Real> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Point2 { x, y }
    }

    /// Continuous location of grid point `(i, j)`.
    pub fn grid(i: usize, j: usize) -> Self {
        Point2::new(T::from_usize_lossy(i), T::from_usize_lossy(j))
    }

    pub fn dist(self, o: Self) -> T {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn sub(self, o: Self) -> Self {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Self) -> Self {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: T) -> Self {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Nearest grid point, if the point lies inside a `width × height` grid.
    pub fn snap(self, width: usize, height: usize) -> Option<(usize, usize)> {
        let half = T::lit(0.5);
        let (fx, fy) = ((self.x + half).floor(), (self.y + half).floor());
        if !self.is_finite() || fx < T::zero() || fy < T::zero() {
            return None;
        }
        let (i, j) = (fx.to_usize()?, fy.to_usize()?);
        (i < width && j < height).then_some((i, j))
    }
}

/// Real values sampled on a `width × height` grid. Distance maps and indicator fields may
/// carry `+∞`; every other field is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField2D<T> {
    width: usize,
    height: usize,
    values: Vec<T>,
}

impl<T: Real> ScalarField2D<T> {
    /// Builds a finite field.
    pub fn new(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field values must be finite"));
        }
        Self::new_extended(width, height, values)
    }

    /// Builds a field that may hold `+∞` (but never NaN or `-∞`).
    pub fn new_extended(width: usize, height: usize, values: Vec<T>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::domain(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::domain(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v == T::neg_infinity()) {
            return Err(Error::domain("field values must not be NaN or -inf"));
        }
        Ok(ScalarField2D {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new_extended(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new_extended(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Grid spacing. Always one grid unit.
    pub fn spacing(&self) -> T {
        T::one()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> T {
        self.values[idx]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new_extended(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        p.is_finite()
            && p.x >= T::zero()
            && p.y >= T::zero()
            && p.x <= T::from_usize_lossy(self.width - 1)
            && p.y <= T::from_usize_lossy(self.height - 1)
    }

    /// Bilinear interpolation of the four grid values around `p`.
    pub fn bilinear_sample(&self, p: Point2<T>) -> Result<T> {
        if !self.contains(p) {
            return Err(Error::domain(format!(
                "sample point ({}, {}) outside {}x{} grid",
                p.x, p.y, self.width, self.height
            )));
        }
        let x0 = p.x.floor().to_usize().unwrap_or(0).min(self.width - 2);
        let y0 = p.y.floor().to_usize().unwrap_or(0).min(self.height - 2);
        let fx = p.x - T::from_usize_lossy(x0);
        let fy = p.y - T::from_usize_lossy(y0);
        let (one, zero) = (T::one(), T::zero());
        let mut acc = zero;
        for (dx, dy, w) in [
            (0, 0, (one - fx) * (one - fy)),
            (1, 0, fx * (one - fy)),
            (0, 1, (one - fx) * fy),
            (1, 1, fx * fy),
        ] {
            // Zero-weight corners must not poison the sum with inf * 0.
            if w > zero {
                acc = acc + w * self.get(x0 + dx, y0 + dy);
            }
        }
        Ok(acc)
    }
}

/// One bit per grid point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl GridMask {
    pub fn new(width: usize, height: usize) -> Self {
        GridMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::domain("mask size does not match dimensions"));
        }
        Ok(GridMask {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    #[inline]
    pub fn at(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    #[inline]
    pub fn set_at(&mut self, idx: usize, v: bool) {
        self.bits[idx] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Row-major iterator over set grid points.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn intersects(&self, other: &GridMask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(a, b)| *a && *b)
    }

    pub fn and_count(&self, other: &GridMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Number of set 8-neighbours of `(x, y)`.
    pub fn neighbours8(&self, x: usize, y: usize) -> usize {
        let (x, y) = (x as isize, y as isize);
        NEIGHBOURS_8
            .iter()
            .filter(|(dx, dy)| self.get_signed(x + dx, y + dy))
            .count()
    }
}

pub(crate) const NEIGHBOURS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Ordered point sequence; `closed` joins the last vertex back to the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Polyline<T> {
    pub points: Vec<Point2<T>>,
    pub closed: bool,
}

impl<T: Real> Polyline<T> {
    /// Builds a polyline, dropping consecutive duplicate vertices (and a duplicated closing
    /// vertex when `closed`). A single remaining point is allowed for degenerate open paths.
    pub fn new(points: Vec<Point2<T>>, closed: bool) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("polyline vertices must be finite"));
        }
        let mut pts: Vec<Point2<T>> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        if closed {
            while pts.len() > 1 && pts.first() == pts.last() {
                pts.pop();
            }
            if pts.len() < 3 {
                return Err(Error::domain("closed polyline needs at least 3 distinct vertices"));
            }
        }
        if pts.is_empty() {
            return Err(Error::domain("polyline needs at least one vertex"));
        }
        Ok(Polyline {
            points: pts,
            closed,
        })
    }

    pub fn open(points: Vec<Point2<T>>) -> Result<Self> {
        Self::new(points, false)
    }

    pub fn closed(points: Vec<Point2<T>>) -> Result<Self> {
        Self::new(points, true)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2<T> {
        self.points[0]
    }

    pub fn last(&self) -> Point2<T> {
        self.points[self.points.len() - 1]
    }

    /// Segments as vertex pairs, including the closing segment when closed.
    pub fn segments(&self) -> impl Iterator<Item = (Point2<T>, Point2<T>)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Euclidean length in grid units.
    pub fn length(&self) -> T {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Polyline {
            points,
            closed: self.closed,
        }
    }

    fn bbox(&self) -> (Point2<T>, Point2<T>) {
        bbox_of(&self.points)
    }

    /// Unsigned Menger curvature at every vertex.
    ///
    /// Open polylines copy the neighbouring interior value to their endpoints; collinear or
    /// degenerate triples give zero.
    pub fn discrete_curvature(&self) -> Result<Vec<T>> {
        let n = self.points.len();
        if n < 3 {
            return Err(Error::domain("curvature needs at least 3 vertices"));
        }
        let mut k = vec![T::zero(); n];
        let menger = |a: Point2<T>, b: Point2<T>, c: Point2<T>| {
            let denom = a.dist(b) * b.dist(c) * c.dist(a);
            if denom <= T::zero() {
                T::zero()
            } else {
                T::lit(2.0) * (b.sub(a)).cross(c.sub(a)).abs() / denom
            }
        };
        if self.closed {
            for i in 0..n {
                k[i] = menger(self.points[(i + n - 1) % n], self.points[i], self.points[(i + 1) % n]);
            }
        } else {
            for i in 1..n - 1 {
                k[i] = menger(self.points[i - 1], self.points[i], self.points[i + 1]);
            }
            k[0] = k[1];
            k[n - 1] = k[n - 2];
        }
        Ok(k)
    }

    /// Even-odd inclusion test; points on the boundary count as inside.
    pub fn contains_point(&self, p: Point2<T>) -> Result<bool> {
        if !self.closed {
            return Err(Error::domain("point_in_polygon needs a closed polyline"));
        }
        let tol = T::lit(1e-9);
        if self.segments().any(|(a, b)| point_segment_distance(p, a, b) <= tol) {
            return Ok(true);
        }
        let mut inside = false;
        for (a, b) in self.segments() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x > p.x {
                    inside = !inside;
                }
            }
        }
        Ok(inside)
    }

    /// True when no two non-adjacent segments meet (and adjacent ones only share their vertex).
    pub fn is_simple(&self) -> bool {
        self_intersections(self) == 0
    }

    /// Grid points of a `width × height` grid whose location satisfies [`Self::contains_point`].
    pub fn rasterize(&self, width: usize, height: usize) -> Result<GridMask> {
        if !self.closed {
            return Err(Error::domain("rasterize_polygon needs a closed polyline"));
        }
        if !self.is_simple() {
            return Err(Error::domain("polygon is self-intersecting"));
        }
        let mut mask = GridMask::new(width, height);
        if width == 0 || height == 0 {
            return Ok(mask);
        }
        let (lo, hi) = self.bbox();
        let clamp_row = |v: T| v.max(T::zero()).min(T::from_usize_lossy(height - 1));
        let y_start = clamp_row(lo.y.ceil()).to_usize().unwrap_or(0);
        let y_end = clamp_row(hi.y.floor()).to_usize().unwrap_or(0);
        let mut xs: Vec<T> = Vec::new();
        if lo.y <= T::from_usize_lossy(height - 1) && hi.y >= T::zero() {
            for row in y_start..=y_end {
                let py = T::from_usize_lossy(row);
                xs.clear();
                for (a, b) in self.segments() {
                    if (a.y > py) != (b.y > py) {
                        xs.push(a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y));
                    }
                }
                xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                // Grid point x is inside iff an odd number of crossings lie strictly right of it.
                for pair in xs.chunks(2) {
                    if pair.len() < 2 {
                        break;
                    }
                    let x0 = pair[0].max(T::zero()).floor();
                    let x1 = pair[1].min(T::from_usize_lossy(width - 1));
                    let mut x = x0;
                    while x <= x1 {
                        if x >= pair[0] && x < pair[1] {
                            if let Some(xi) = x.to_usize() {
                                mask.set(xi, row, true);
                            }
                        }
                        x = x + T::one();
                    }
                }
            }
        }
        for (a, b) in self.segments() {
            mark_lattice_points_on_segment(&mut mask, a, b);
        }
        Ok(mask)
    }
}

fn bbox_of<T: Real>(pts: &[Point2<T>]) -> (Point2<T>, Point2<T>) {
    let mut lo = Point2::new(T::infinity(), T::infinity());
    let mut hi = Point2::new(T::neg_infinity(), T::neg_infinity());
    for p in pts {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (lo, hi)
}

fn mark_lattice_points_on_segment<T: Real>(mask: &mut GridMask, a: Point2<T>, b: Point2<T>) {
    let tol = T::lit(1e-9);
    let (w, h) = (mask.width(), mask.height());
    let (lo, hi) = bbox_of(&[a, b]);
    let x0 = lo.x.ceil().max(T::zero());
    let x1 = hi.x.floor().min(T::from_usize_lossy(w - 1));
    let y0 = lo.y.ceil().max(T::zero());
    let y1 = hi.y.floor().min(T::from_usize_lossy(h - 1));
    let mut y = y0;
    while y <= y1 {
        let mut x = x0;
        while x <= x1 {
            let p = Point2::new(x, y);
            if point_segment_distance(p, a, b) <= tol {
                if let (Some(xi), Some(yi)) = (x.to_usize(), y.to_usize()) {
                    mask.set(xi, yi, true);
                }
            }
            x = x + T::one();
        }
        y = y + T::one();
    }
}

pub fn point_segment_distance<T: Real>(p: Point2<T>, a: Point2<T>, b: Point2<T>) -> T {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 <= T::zero() {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len2).max(T::zero()).min(T::one());
    p.dist(a.add(ab.scale(t)))
}

/// Intersection points of two segments: one transversal point, the overlap endpoints for
/// collinear overlaps, or none.
pub fn segment_intersections<T: Real>(
    p1: Point2<T>,
    p2: Point2<T>,
    q1: Point2<T>,
    q2: Point2<T>,
) -> Vec<Point2<T>> {
    let tol = T::lit(INTERSECTION_TOL);
    let r = p2.sub(p1);
    let s = q2.sub(q1);
    let rl = r.norm();
    let sl = s.norm();
    let denom = r.cross(s);
    let qp = q1.sub(p1);
    if rl <= T::zero() || sl <= T::zero() {
        // Degenerate segment: treat as a point.
        let (pt, a, b) = if rl <= T::zero() { (p1, q1, q2) } else { (q1, p1, p2) };
        return if point_segment_distance(pt, a, b) <= tol { vec![pt] } else { vec![] };
    }
    if denom.abs() > tol * rl * sl {
        let t = qp.cross(s) / denom;
        let u = qp.cross(r) / denom;
        let (et, eu) = (tol / rl, tol / sl);
        if t >= -et && t <= T::one() + et && u >= -eu && u <= T::one() + eu {
            return vec![p1.add(r.scale(t.max(T::zero()).min(T::one())))];
        }
        return vec![];
    }
    // Parallel: only collinear overlaps produce points.
    if (qp.cross(r) / rl).abs() > tol {
        return vec![];
    }
    let mut out = Vec::new();
    for (pt, a, b) in [(p1, q1, q2), (p2, q1, q2), (q1, p1, p2), (q2, p1, p2)] {
        if point_segment_distance(pt, a, b) <= tol && !out.iter().any(|o: &Point2<T>| o.dist(pt) <= tol) {
            out.push(pt);
        }
    }
    out
}

fn bboxes_overlap<T: Real>(a: (Point2<T>, Point2<T>), b: (Point2<T>, Point2<T>), pad: T) -> bool {
    a.0.x <= b.1.x + pad && b.0.x <= a.1.x + pad && a.0.y <= b.1.y + pad && b.0.y <= a.1.y + pad
}

/// All intersection points between two polylines, deduplicated within [`INTERSECTION_TOL`].
pub fn polylines_intersect<T: Real>(a: &Polyline<T>, b: &Polyline<T>) -> Vec<Point2<T>> {
    let tol = T::lit(INTERSECTION_TOL);
    let mut out: Vec<Point2<T>> = Vec::new();
    if a.len() == 1 || b.len() == 1 {
        let (pt, other) = if a.len() == 1 { (a.first(), b) } else { (b.first(), a) };
        if other.len() == 1 {
            if pt.dist(other.first()) <= tol {
                out.push(pt);
            }
        } else if other.segments().any(|(s0, s1)| point_segment_distance(pt, s0, s1) <= tol) {
            out.push(pt);
        }
        return out;
    }
    if !bboxes_overlap(a.bbox(), b.bbox(), tol) {
        return out;
    }
    let bsegs: Vec<_> = b
        .segments()
        .map(|(q1, q2)| (q1, q2, bbox_of(&[q1, q2])))
        .collect();
    for (p1, p2) in a.segments() {
        let pb = bbox_of(&[p1, p2]);
        for &(q1, q2, qb) in &bsegs {
            if !bboxes_overlap(pb, qb, tol) {
                continue;
            }
            for x in segment_intersections(p1, p2, q1, q2) {
                if !out.iter().any(|o| o.dist(x) <= tol) {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Number of offending segment pairs: non-adjacent segments that meet, or adjacent ones that
/// overlap beyond their shared vertex.
pub fn self_intersections<T: Real>(c: &Polyline<T>) -> usize {
    let segs: Vec<_> = c.segments().collect();
    let n = segs.len();
    if n < 2 {
        return 0;
    }
    let tol = T::lit(INTERSECTION_TOL);
    // Bucket segments on a coarse grid so long contours stay near-linear.
    let cell = T::lit(4.0);
    let key = |p: Point2<T>| {
        (
            (p.x / cell).floor().to_i64().unwrap_or(0),
            (p.y / cell).floor().to_i64().unwrap_or(0),
        )
    };
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
    for (i, (a, b)) in segs.iter().enumerate() {
        let (lo, hi) = bbox_of(&[*a, *b]);
        let (k0, k1) = (key(lo), key(hi));
        for gx in k0.0..=k1.0 {
            for gy in k0.1..=k1.1 {
                buckets.entry((gx, gy)).or_default().push(i);
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut count = 0;
    for members in buckets.values() {
        for (ai, &i) in members.iter().enumerate() {
            for &j in &members[ai + 1..] {
                let (i, j) = (i.min(j), i.max(j));
                if !seen.insert((i, j)) {
                    continue;
                }
                let (p1, p2) = segs[i];
                let (q1, q2) = segs[j];
                let hits = segment_intersections(p1, p2, q1, q2);
                if hits.is_empty() {
                    continue;
                }
                let adjacent_fwd = j == i + 1;
                let adjacent_wrap = c.closed && i == 0 && j == n - 1;
                if adjacent_fwd || adjacent_wrap {
                    let shared = if adjacent_fwd { p2 } else { p1 };
                    if hits.iter().any(|h| h.dist(shared) > tol) {
                        count += 1;
                    }
                } else {
                    count += 1;
                }
            }
        }
    }
    count
}
