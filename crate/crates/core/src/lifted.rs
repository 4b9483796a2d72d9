//! Orientation-lifted, curvature-penalised minimal paths on `Ω × S¹`.
//!
//! States are grid points paired with one of `n_theta` headings. A move combines a forward
//! physical step with a heading change of at most one sample. The physical step is one of
//! the two stencil directions bracketing the mean heading of the move, taken from the
//! primitive offsets of Chebyshev radius 4, so the step never deviates from the heading by
//! more than about 14°. Reeds–Shepp forward also allows rotation in place.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::eikonal::HeapItem;
use crate::error::{Error, Result};
use crate::grid::{GridMask, Point2, Polyline, ScalarField2D};
use crate::scalar::Real;

const STENCIL_RADIUS: i32 = 4;
const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Isotropic,
    #[serde(rename = "rs")]
    ReedsSheppForward,
    Elastica,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isotropic" => Ok(MetricKind::Isotropic),
            "rs" | "reeds-shepp" | "reeds-shepp-forward" => Ok(MetricKind::ReedsSheppForward),
            "elastica" => Ok(MetricKind::Elastica),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::Isotropic => "isotropic",
            MetricKind::ReedsSheppForward => "rs",
            MetricKind::Elastica => "elastica",
        })
    }
}

/// Metric on the lifted space with a data term multiplying every move.
#[derive(Clone, Copy, Debug)]
pub struct MetricSpec<'a, T> {
    pub kind: MetricKind,
    pub beta: T,
    pub cost: &'a ScalarField2D<T>,
}

impl<T: Real> MetricSpec<'_, T> {
    fn validate(&self) -> Result<()> {
        if self.kind == MetricKind::Isotropic {
            return Err(Error::Config("lifted solve needs a curvature-penalised metric".into()));
        }
        if !(self.beta > T::zero()) || !self.beta.is_finite() {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(())
    }

    /// Cost of a move with physical length `len` and heading change `nu`, before the data term.
    fn move_cost(&self, len: T, nu: T) -> T {
        let b2 = self.beta * self.beta;
        match self.kind {
            MetricKind::ReedsSheppForward => (len * len + b2 * nu * nu).sqrt(),
            MetricKind::Elastica if len > T::zero() => len + b2 * nu * nu / len,
            _ => T::infinity(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftedGrid {
    pub width: usize,
    pub height: usize,
    pub n_theta: usize,
}

impl LiftedGrid {
    pub fn new(width: usize, height: usize, n_theta: usize) -> Result<Self> {
        if n_theta < 16 || n_theta % 2 != 0 {
            return Err(Error::Config(format!("n_theta must be even and at least 16, got {n_theta}")));
        }
        if width < 2 || height < 2 {
            return Err(Error::domain("lifted grid needs at least 2×2 points"));
        }
        Ok(LiftedGrid {
            width,
            height,
            n_theta,
        })
    }

    pub fn theta<T: Real>(&self, k: usize) -> T {
        T::TAU() * T::from_usize_lossy(k) / T::from_usize_lossy(self.n_theta)
    }

    /// Nearest heading sample of `theta`.
    pub fn heading_index<T: Real>(&self, theta: T) -> usize {
        let n = self.n_theta as i64;
        let k = (theta / T::TAU() * T::from_usize_lossy(self.n_theta))
            .round()
            .to_i64()
            .unwrap_or(0);
        k.rem_euclid(n) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LiftedState<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Real> LiftedState<T> {
    /// `theta` is wrapped into `[0, 2π)`.
    pub fn new(x: T, y: T, theta: T) -> Self {
        LiftedState {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn point(&self) -> Point2<T> {
        Point2::new(self.x, self.y)
    }
}

pub fn wrap_angle<T: Real>(a: T) -> T {
    let tau = T::TAU();
    let r = a - tau * (a / tau).floor();
    if r >= tau {
        T::zero()
    } else {
        r
    }
}

/// Principal value of `a` in `(-π, π]`.
fn principal<T: Real>(a: T) -> T {
    let pi = T::PI();
    let r = wrap_angle(a + pi) - pi;
    if r <= -pi {
        r + T::TAU()
    } else {
        r
    }
}

/// Unwrapped tangent angles at every vertex, from central differences (one-sided at the ends
/// of open polylines).
pub fn tangent_angles<T: Real>(c: &Polyline<T>) -> Result<Vec<T>> {
    let n = c.len();
    if n < 2 {
        return Err(Error::domain("tangent angles need at least 2 vertices"));
    }
    let p = &c.points;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = if c.closed {
            (p[(i + n - 1) % n], p[(i + 1) % n])
        } else {
            (p[i.saturating_sub(1)], p[(i + 1).min(n - 1)])
        };
        let d = b.sub(a);
        raw.push((d.norm() > T::zero()).then(|| d.y.atan2(d.x)));
    }
    // Fill skipped (zero-length) tangents from the previous valid one.
    let first = raw
        .iter()
        .flatten()
        .copied()
        .next()
        .ok_or_else(|| Error::domain("polyline has no non-degenerate segment"))?;
    let mut out = Vec::with_capacity(n);
    let mut prev = first;
    for r in raw {
        let a = match r {
            Some(a) => prev + principal(a - prev),
            None => prev,
        };
        out.push(a);
        prev = a;
    }
    Ok(out)
}

/// Lifts a polyline to `Ω × S¹` using its tangent angles.
pub fn lift_polyline<T: Real>(c: &Polyline<T>) -> Result<Vec<LiftedState<T>>> {
    let ang = tangent_angles(c)?;
    Ok(c.points
        .iter()
        .zip(ang)
        .map(|(p, a)| LiftedState::new(p.x, p.y, a))
        .collect())
}

/// Discrete curvature-penalised length `sum sqrt(ds² + β² dη²)` over the segments of `path`,
/// with `angles` the unwrapped heading at each vertex. The closing segment of a closed path
/// uses the principal angle difference.
pub fn curvature_cost_along<T: Real>(path: &Polyline<T>, angles: &[T], beta: T) -> Result<T> {
    if angles.len() != path.len() {
        return Err(Error::domain(format!(
            "{} angles for a path with {} vertices",
            angles.len(),
            path.len()
        )));
    }
    let n = path.len();
    let b2 = beta * beta;
    let mut acc = T::zero();
    for (i, (a, b)) in path.segments().enumerate() {
        let ds = a.dist(b);
        let j = (i + 1) % n;
        let deta = if j == 0 {
            principal(angles[0] - angles[n - 1])
        } else {
            angles[j] - angles[i]
        };
        acc = acc + (ds * ds + b2 * deta * deta).sqrt();
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug)]
struct Move {
    dx: i32,
    dy: i32,
    dk: i32,
}

/// Primitive offsets of Chebyshev radius at most [`STENCIL_RADIUS`], sorted by angle.
fn primitive_directions() -> Vec<(i32, i32, f64)> {
    fn gcd(a: i32, b: i32) -> i32 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let r = STENCIL_RADIUS;
    let mut dirs: Vec<(i32, i32, f64)> = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) != (0, 0) && gcd(dx, dy) == 1 {
                let a = (dy as f64).atan2(dx as f64).rem_euclid(std::f64::consts::TAU);
                dirs.push((dx, dy, a));
            }
        }
    }
    dirs.sort_by(|a, b| a.2.total_cmp(&b.2));
    dirs
}

/// The one or two directions bracketing heading `theta` (radians in `[0, 2π)`).
fn bracket(dirs: &[(i32, i32, f64)], theta: f64) -> Vec<(i32, i32)> {
    let n = dirs.len();
    for i in 0..n {
        let lo = dirs[i];
        let hi = dirs[(i + 1) % n];
        let span = (hi.2 - lo.2).rem_euclid(std::f64::consts::TAU);
        let off = (theta - lo.2).rem_euclid(std::f64::consts::TAU);
        if off.abs() < 1e-12 {
            return vec![(lo.0, lo.1)];
        }
        if off < span {
            return vec![(lo.0, lo.1), (hi.0, hi.1)];
        }
    }
    unreachable!("directions cover the circle")
}

fn build_moves(n_theta: usize, rotations: bool) -> Vec<Vec<Move>> {
    let dirs = primitive_directions();
    let step = std::f64::consts::TAU / n_theta as f64;
    (0..n_theta)
        .map(|k| {
            let mut moves = Vec::new();
            for dk in -1i32..=1 {
                let mid = ((k as f64 + 0.5 * dk as f64) * step).rem_euclid(std::f64::consts::TAU);
                for (dx, dy) in bracket(&dirs, mid) {
                    moves.push(Move { dx, dy, dk });
                }
            }
            if rotations {
                moves.push(Move { dx: 0, dy: 0, dk: -1 });
                moves.push(Move { dx: 0, dy: 0, dk: 1 });
            }
            moves
        })
        .collect()
}

/// Lifted minimal action map over a compact set of grid points.
#[derive(Clone, Debug)]
pub struct LiftedDistanceMap<T> {
    pub grid: LiftedGrid,
    slot: Vec<u32>,
    pixels: Vec<u32>,
    values: Vec<T>,
    pred: Vec<u32>,
}

impl<T: Real> LiftedDistanceMap<T> {
    fn state(&self, x: usize, y: usize, k: usize) -> Option<usize> {
        if x >= self.grid.width || y >= self.grid.height || k >= self.grid.n_theta {
            return None;
        }
        let s = self.slot[y * self.grid.width + x];
        (s != NONE).then(|| s as usize * self.grid.n_theta + k)
    }

    fn decode(&self, s: usize) -> (usize, usize, usize) {
        let n = self.grid.n_theta;
        let p = self.pixels[s / n] as usize;
        (p % self.grid.width, p / self.grid.width, s % n)
    }

    /// Distance at grid point `(x, y)` and heading sample `k`; `+∞` when unreached.
    pub fn value(&self, x: usize, y: usize, k: usize) -> T {
        self.state(x, y, k)
            .map(|s| self.values[s])
            .unwrap_or_else(T::infinity)
    }

    /// Distance at the state nearest to `s`.
    pub fn value_at(&self, s: &LiftedState<T>) -> T {
        match s.point().snap(self.grid.width, self.grid.height) {
            Some((x, y)) => self.value(x, y, self.grid.heading_index(s.theta)),
            None => T::infinity(),
        }
    }

    /// Smallest distance over all headings at `(x, y)`, with its heading sample.
    pub fn best_heading(&self, x: usize, y: usize) -> Option<(usize, T)> {
        (0..self.grid.n_theta)
            .map(|k| (k, self.value(x, y, k)))
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| crate::scalar::total_cmp(a.1, b.1).then(a.0.cmp(&b.0)))
    }

    /// Argmin over `cells × headings`, first in cell order and then heading order on ties.
    pub fn argmin_over(&self, cells: &[(usize, usize)]) -> Option<(usize, usize, usize, T)> {
        let mut best: Option<(usize, usize, usize, T)> = None;
        for &(x, y) in cells {
            if let Some((k, v)) = self.best_heading(x, y) {
                if best.is_none_or(|b| v < b.3) {
                    best = Some((x, y, k, v));
                }
            }
        }
        best
    }
}

/// Front propagation on the lifted graph from `src`, optionally restricted to `domain` and
/// halted once the smallest tentative value exceeds `stop`.
pub fn lifted_fast_march<T: Real>(
    spec: &MetricSpec<'_, T>,
    src: &[LiftedState<T>],
    grid: LiftedGrid,
    stop: Option<T>,
    domain: Option<&GridMask>,
) -> Result<LiftedDistanceMap<T>> {
    spec.validate()?;
    let (w, h, n) = (grid.width, grid.height, grid.n_theta);
    if spec.cost.width() != w || spec.cost.height() != h {
        return Err(Error::domain("cost field does not match the lifted grid"));
    }
    if src.is_empty() {
        return Err(Error::domain("empty lifted source set"));
    }
    let mut slot = vec![NONE; w * h];
    let mut pixels = Vec::new();
    for i in 0..w * h {
        let inside = domain.is_none_or(|d| d.at(i));
        let c = spec.cost.at(i);
        if inside && c.is_finite() && c > T::zero() {
            slot[i] = pixels.len() as u32;
            pixels.push(i as u32);
        }
    }
    let total = pixels.len() * n;
    let mut dm = LiftedDistanceMap {
        grid,
        slot,
        pixels,
        values: vec![T::infinity(); total],
        pred: vec![NONE; total],
    };
    let mut done = vec![false; total];
    let mut heap = BinaryHeap::new();
    for s in src {
        let (x, y) = s
            .point()
            .snap(w, h)
            .ok_or_else(|| Error::domain("lifted source outside grid"))?;
        let k = grid.heading_index(s.theta);
        let id = dm
            .state(x, y, k)
            .ok_or_else(|| Error::domain(format!("lifted source ({x}, {y}) is not passable")))?;
        dm.values[id] = T::zero();
        heap.push(HeapItem { key: T::zero(), idx: id });
    }
    let moves = build_moves(n, spec.kind == MetricKind::ReedsSheppForward);
    let dtheta = T::TAU() / T::from_usize_lossy(n);
    let half = T::lit(0.5);
    while let Some(HeapItem { key, idx }) = heap.pop() {
        if done[idx] || key > dm.values[idx] {
            continue;
        }
        if stop.is_some_and(|s| key > s) {
            break;
        }
        done[idx] = true;
        let (x, y, k) = dm.decode(idx);
        for m in &moves[k] {
            let (nx, ny) = (x as i64 + m.dx as i64, y as i64 + m.dy as i64);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let nk = (k as i64 + m.dk as i64).rem_euclid(n as i64) as usize;
            let Some(j) = dm.state(nx as usize, ny as usize, nk) else {
                continue;
            };
            if done[j] {
                continue;
            }
            let len = T::from_f64((m.dx as f64).hypot(m.dy as f64)).unwrap_or_else(T::one);
            let nu = T::from_f64(m.dk as f64).unwrap_or_else(T::zero) * dtheta;
            let mid = Point2::new(
                (T::from_usize_lossy(x) + T::from_usize_lossy(nx as usize)) * half,
                (T::from_usize_lossy(y) + T::from_usize_lossy(ny as usize)) * half,
            );
            let data = spec.cost.bilinear_sample(mid)?;
            let c = spec.move_cost(len, nu) * data;
            if !c.is_finite() {
                continue;
            }
            let cand = key + c;
            if cand < dm.values[j] {
                dm.values[j] = cand;
                dm.pred[j] = idx as u32;
                heap.push(HeapItem { key: cand, idx: j });
            }
        }
    }
    for (v, d) in dm.values.iter_mut().zip(&done) {
        if !d {
            *v = T::infinity();
        }
    }
    Ok(dm)
}

/// Physical projection of the minimal lifted path from the sources to `start`, with the
/// unwrapped heading at every vertex.
pub fn lifted_backtrack<T: Real>(
    dm: &LiftedDistanceMap<T>,
    start: &LiftedState<T>,
) -> Result<(Polyline<T>, Vec<T>)> {
    let (x, y) = start
        .point()
        .snap(dm.grid.width, dm.grid.height)
        .ok_or_else(|| Error::domain("lifted start outside grid"))?;
    let k = dm.grid.heading_index(start.theta);
    backtrack_state(dm, x, y, k)
}

/// [`lifted_backtrack`] from grid point `(x, y)` at heading sample `k`.
pub fn backtrack_state<T: Real>(
    dm: &LiftedDistanceMap<T>,
    x: usize,
    y: usize,
    k: usize,
) -> Result<(Polyline<T>, Vec<T>)> {
    let id = dm
        .state(x, y, k)
        .filter(|&s| dm.values[s].is_finite())
        .ok_or_else(|| Error::domain(format!("lifted state ({x}, {y}, {k}) was not reached")))?;
    let mut chain = vec![id];
    let mut cur = id;
    while dm.pred[cur] != NONE {
        cur = dm.pred[cur] as usize;
        chain.push(cur);
    }
    chain.reverse();
    let n = dm.grid.n_theta as i64;
    let mut pts: Vec<Point2<T>> = Vec::new();
    let mut angles: Vec<T> = Vec::new();
    let mut unwrapped = 0i64;
    let mut last_k: Option<i64> = None;
    for s in chain {
        let (px, py, pk) = dm.decode(s);
        let pk = pk as i64;
        unwrapped = match last_k {
            None => pk,
            Some(lk) => {
                let mut d = (pk - lk).rem_euclid(n);
                if d > n / 2 {
                    d -= n;
                }
                unwrapped + d
            }
        };
        last_k = Some(pk);
        let p = Point2::grid(px, py);
        let theta = T::TAU() * T::from_f64(unwrapped as f64).unwrap_or_else(T::zero)
            / T::from_usize_lossy(dm.grid.n_theta);
        // Rotations in place keep the point; the heading of the departing move wins.
        if pts.last() == Some(&p) {
            *angles.last_mut().expect("non-empty") = theta;
        } else {
            pts.push(p);
            angles.push(theta);
        }
    }
    Ok((Polyline::open(pts)?, angles))
}
