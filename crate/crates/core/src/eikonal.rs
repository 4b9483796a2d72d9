//! Isotropic fast marching on the 8-neighbour grid, with early stopping and geodesic
//! backtracking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{GridMask, Point2, Polyline, ScalarField2D, NEIGHBOURS_8};
use crate::scalar::{total_cmp, Real};

/// Where the front starts.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceSet<T> {
    /// A single point, snapped to the nearest grid point.
    Point(Point2<T>),
    /// Explicit grid points.
    Cells(Vec<(usize, usize)>),
}

/// Solution of the Eikonal equation. Values are `+∞` off the accepted set.
#[derive(Clone, Debug)]
pub struct DistanceMap<T> {
    pub values: ScalarField2D<T>,
    pub accepted: GridMask,
    pub sources: GridMask,
    /// Points the front may never enter.
    pub blocked: GridMask,
    /// Grid indices in acceptance order.
    pub order: Vec<usize>,
}

impl<T: Real> DistanceMap<T> {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.values.get(x, y)
    }

    pub fn is_accepted(&self, x: usize, y: usize) -> bool {
        self.accepted.get(x, y)
    }
}

#[derive(Clone, Copy)]
pub(crate) struct HeapItem<T> {
    pub key: T,
    pub idx: usize,
}

impl<T: Real> PartialEq for HeapItem<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Real> Eq for HeapItem<T> {}

impl<T: Real> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for HeapItem<T> {
    // Reversed so `BinaryHeap` pops the smallest key; ties go to the smaller index.
    fn cmp(&self, other: &Self) -> Ordering {
        total_cmp(other.key, self.key).then_with(|| other.idx.cmp(&self.idx))
    }
}

fn passable<T: Real>(v: T) -> bool {
    v.is_finite() && v > T::zero()
}

/// True when a diagonal move from `(x, y)` by `(dx, dy)` does not slip between two impassable
/// points.
#[inline]
fn corner_open<T: Real>(psi: &ScalarField2D<T>, x: usize, y: usize, dx: isize, dy: isize) -> bool {
    let ax = (x as isize + dx) as usize;
    let by = (y as isize + dy) as usize;
    passable(psi.get(ax, y)) || passable(psi.get(x, by))
}

/// Arrival at a point from the segment joining `a` (one axis step away) and `b` (one diagonal
/// step away). The cost per unit length is the mean of `px` and the potential interpolated
/// along the segment, so both endpoints reproduce the graph edge costs exactly. The interior
/// optimum comes from one fixed-point refinement of the constant-cost solution.
#[inline]
fn triangle_update<T: Real>(ua: T, ub: T, px: T, pa: T, pb: T) -> T {
    let half = T::lit(0.5);
    let sqrt2 = T::SQRT_2();
    let one = T::one();
    let cost = |t: T| half * (px + pa + (pb - pa) * t);
    let end_a = ua + cost(T::zero());
    let end_b = ub + cost(one) * sqrt2;
    let mut best = end_a.min(end_b);
    let d = ub - ua;
    if d < T::zero() {
        let solve = |f: T| {
            let s = -d / f;
            (s < one / sqrt2).then(|| s / (one - s * s).sqrt())
        };
        if let Some(t0) = solve(cost(half)) {
            let t = solve(cost(t0)).unwrap_or(t0);
            let g = ua + d * t + cost(t) * (one + t * t).sqrt();
            best = best.min(g.max(ua));
        }
    }
    best
}

/// Semi-Lagrangian update of grid point `(x, y)` from its accepted 8-neighbours. Every
/// candidate is bounded by the matching graph relaxation with edge cost
/// `(psi(x) + psi(n)) / 2 * |x - n|`.
#[inline]
fn local_update<T: Real>(
    psi: &ScalarField2D<T>,
    u: &[T],
    accepted: &[bool],
    x: usize,
    y: usize,
) -> T {
    let (w, h) = (psi.width() as isize, psi.height() as isize);
    let half = T::lit(0.5);
    let sqrt2 = T::SQRT_2();
    let h_sp = psi.spacing();
    let px = psi.get(x, y);
    let (xi, yi) = (x as isize, y as isize);
    let inside = |dx: isize, dy: isize| xi + dx >= 0 && yi + dy >= 0 && xi + dx < w && yi + dy < h;
    let idx = |dx: isize, dy: isize| ((yi + dy) * w + xi + dx) as usize;
    let mut best = T::infinity();
    for (ex, ey) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
        if !inside(ex, ey) {
            continue;
        }
        let ia = idx(ex, ey);
        let a_ok = accepted[ia];
        if a_ok {
            best = best.min(u[ia] + half * (px + psi.at(ia)) * h_sp);
        }
        for sgn in [1isize, -1] {
            let (dx, dy) = if ex != 0 { (ex, sgn) } else { (sgn, ey) };
            if !inside(dx, dy) {
                continue;
            }
            let ib = idx(dx, dy);
            if !accepted[ib] {
                continue;
            }
            if a_ok {
                let v = triangle_update(u[ia], u[ib], px * h_sp, psi.at(ia) * h_sp, psi.at(ib) * h_sp);
                best = best.min(v);
            } else if corner_open(psi, x, y, dx, dy) {
                best = best.min(u[ib] + half * (px + psi.at(ib)) * sqrt2 * h_sp);
            }
        }
    }
    best
}

/// First-order upwind solution of `|grad U| = psi` from `src`.
///
/// Points with infinite potential are never entered. With `stop`, the front halts once the
/// smallest tentative value exceeds it, leaving every value at or below `stop` identical to the
/// unstopped solve.
pub fn fast_march<T: Real>(
    psi: &ScalarField2D<T>,
    src: &SourceSet<T>,
    stop: Option<T>,
) -> Result<DistanceMap<T>> {
    fast_march_masked(psi, src, stop, None)
}

/// [`fast_march`] restricted to the grid points set in `domain`.
pub fn fast_march_masked<T: Real>(
    psi: &ScalarField2D<T>,
    src: &SourceSet<T>,
    stop: Option<T>,
    domain: Option<&GridMask>,
) -> Result<DistanceMap<T>> {
    let (w, h) = (psi.width(), psi.height());
    if psi.values().iter().any(|v| *v <= T::zero()) {
        return Err(Error::domain("potential must be positive"));
    }
    let cells: Vec<(usize, usize)> = match src {
        SourceSet::Point(p) => vec![p
            .snap(w, h)
            .ok_or_else(|| Error::domain(format!("source ({}, {}) outside grid", p.x, p.y)))?],
        SourceSet::Cells(c) => c.clone(),
    };
    if cells.is_empty() {
        return Err(Error::domain("empty source set"));
    }
    let inside = |i: usize| domain.is_none_or(|d| d.at(i));
    let n = w * h;
    let mut u = vec![T::infinity(); n];
    let mut accepted = vec![false; n];
    let mut sources = GridMask::new(w, h);
    let mut heap = BinaryHeap::new();
    for &(x, y) in &cells {
        if x >= w || y >= h {
            return Err(Error::domain(format!("source ({x}, {y}) outside grid")));
        }
        if !passable(psi.get(x, y)) {
            return Err(Error::domain(format!("source ({x}, {y}) lies on an impassable point")));
        }
        let i = y * w + x;
        if !inside(i) {
            return Err(Error::domain(format!("source ({x}, {y}) outside the solve domain")));
        }
        sources.set_at(i, true);
        u[i] = T::zero();
        heap.push(HeapItem { key: T::zero(), idx: i });
    }
    let mut order = Vec::new();
    while let Some(HeapItem { key, idx }) = heap.pop() {
        if accepted[idx] || key > u[idx] {
            continue;
        }
        if let Some(s) = stop {
            if key > s {
                break;
            }
        }
        accepted[idx] = true;
        order.push(idx);
        let (x, y) = (idx % w, idx / w);
        for (dx, dy) in NEIGHBOURS_8 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if accepted[j] || !passable(psi.at(j)) || !inside(j) {
                continue;
            }
            let cand = local_update(psi, &u, &accepted, nx as usize, ny as usize);
            if cand < u[j] {
                u[j] = cand;
                heap.push(HeapItem { key: cand, idx: j });
            }
        }
    }
    for i in 0..n {
        if !accepted[i] {
            u[i] = T::infinity();
        }
    }
    Ok(DistanceMap {
        values: ScalarField2D::new_extended(w, h, u)?,
        accepted: GridMask::from_bits(w, h, accepted)?,
        sources,
        blocked: GridMask::from_bits(w, h, psi.values().iter().map(|v| !passable(*v)).collect())?,
        order,
    })
}

/// Argmin of the distance over the domain-boundary grid points, first in row-major order on
/// ties.
pub fn min_boundary_point<T: Real>(dm: &DistanceMap<T>) -> Result<Point2<T>> {
    let (w, h) = (dm.width(), dm.height());
    let mut best: Option<(T, usize, usize)> = None;
    for y in 0..h {
        let xs: Vec<usize> = if y == 0 || y + 1 == h {
            (0..w).collect()
        } else {
            vec![0, w - 1]
        };
        for x in xs {
            if !dm.is_accepted(x, y) {
                continue;
            }
            let v = dm.get(x, y);
            if best.is_none_or(|(b, _, _)| v < b) {
                best = Some((v, x, y));
            }
        }
    }
    best.map(|(_, x, y)| Point2::grid(x, y))
        .ok_or(Error::BoundaryUnreachable)
}

/// Gradient of `U` at a grid point: central differences where both neighbours are accepted,
/// one-sided otherwise.
fn grid_gradient<T: Real>(dm: &DistanceMap<T>, x: usize, y: usize) -> Option<Point2<T>> {
    let (w, h) = (dm.width(), dm.height());
    if !dm.is_accepted(x, y) {
        return None;
    }
    let c = dm.get(x, y);
    let val = |xx: isize, yy: isize| -> Option<T> {
        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
            return None;
        }
        let (xx, yy) = (xx as usize, yy as usize);
        dm.is_accepted(xx, yy).then(|| dm.get(xx, yy))
    };
    let diff = |m: Option<T>, p: Option<T>| -> T {
        match (m, p) {
            (Some(a), Some(b)) => (b - a) / T::lit(2.0),
            (Some(a), None) => c - a,
            (None, Some(b)) => b - c,
            (None, None) => T::zero(),
        }
    };
    let (xi, yi) = (x as isize, y as isize);
    Some(Point2::new(
        diff(val(xi - 1, yi), val(xi + 1, yi)),
        diff(val(xi, yi - 1), val(xi, yi + 1)),
    ))
}

/// Cell corners of `p` as `(x, y, bilinear weight)`.
fn cell_corners<T: Real>(p: Point2<T>, w: usize, h: usize) -> [(usize, usize, T); 4] {
    let x0 = p.x.floor().to_usize().unwrap_or(0).min(w - 2);
    let y0 = p.y.floor().to_usize().unwrap_or(0).min(h - 2);
    let fx = p.x - T::from_usize_lossy(x0);
    let fy = p.y - T::from_usize_lossy(y0);
    let one = T::one();
    [
        (x0, y0, (one - fx) * (one - fy)),
        (x0 + 1, y0, fx * (one - fy)),
        (x0, y0 + 1, (one - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ]
}

/// Interpolated value and descent direction at `p`, using accepted corners only.
fn probe<T: Real>(dm: &DistanceMap<T>, p: Point2<T>) -> Option<(T, Point2<T>)> {
    let (w, h) = (dm.width(), dm.height());
    if !dm.values.contains(p) {
        return None;
    }
    let mut wsum = T::zero();
    let mut val = T::zero();
    let mut grad = Point2::new(T::zero(), T::zero());
    for (x, y, wt) in cell_corners(p, w, h) {
        if wt <= T::zero() {
            continue;
        }
        if let Some(gr) = grid_gradient(dm, x, y) {
            wsum = wsum + wt;
            val = val + wt * dm.get(x, y);
            grad = grad.add(gr.scale(wt));
        }
    }
    if wsum <= T::zero() {
        return None;
    }
    Some((val / wsum, grad.scale(T::one() / wsum)))
}

/// True when every grid point within `radius` of segment `a-b` is accepted.
fn segment_clear<T: Real>(dm: &DistanceMap<T>, a: Point2<T>, b: Point2<T>, radius: T) -> bool {
    let (w, h) = (dm.width() as isize, dm.height() as isize);
    let lo_x = (a.x.min(b.x) - radius).floor().to_isize().unwrap_or(0).max(0);
    let hi_x = (a.x.max(b.x) + radius).ceil().to_isize().unwrap_or(0).min(w - 1);
    let lo_y = (a.y.min(b.y) - radius).floor().to_isize().unwrap_or(0).max(0);
    let hi_y = (a.y.max(b.y) + radius).ceil().to_isize().unwrap_or(0).min(h - 1);
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let q = Point2::grid(x as usize, y as usize);
            if crate::grid::point_segment_distance(q, a, b) <= radius
                && !dm.is_accepted(x as usize, y as usize)
            {
                return false;
            }
        }
    }
    true
}

/// Source grid point within `reach` of `p`, if any.
fn nearby_source<T: Real>(dm: &DistanceMap<T>, p: Point2<T>, reach: T) -> Option<Point2<T>> {
    let (w, h) = (dm.width(), dm.height());
    let r = reach.ceil().to_isize().unwrap_or(1) + 1;
    let cx = p.x.round().to_isize()?;
    let cy = p.y.round().to_isize()?;
    let mut best: Option<(T, Point2<T>)> = None;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                continue;
            }
            if !dm.sources.get(x as usize, y as usize) {
                continue;
            }
            let q = Point2::grid(x as usize, y as usize);
            let d = q.dist(p);
            if d <= reach && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, q));
            }
        }
    }
    best.map(|(_, q)| q)
}

/// Steepest 8-neighbour descent from grid point `(x, y)` down to a source. Diagonal hops
/// never pass between two blocked points, and each hop strictly lowers `U`, so the walk
/// terminates without crossing an 8-connected barrier.
pub fn descend_grid<T: Real>(dm: &DistanceMap<T>, x: usize, y: usize) -> Result<Vec<(usize, usize)>> {
    let (w, h) = (dm.width() as isize, dm.height() as isize);
    if !dm.is_accepted(x, y) {
        return Err(Error::domain(format!("({x}, {y}) was not reached by the front")));
    }
    let mut path = vec![(x, y)];
    let (mut cx, mut cy) = (x, y);
    while !dm.sources.get(cx, cy) {
        let cur = dm.get(cx, cy);
        let mut best: Option<(T, usize, usize)> = None;
        for (dx, dy) in NEIGHBOURS_8 {
            let (nx, ny) = (cx as isize + dx, cy as isize + dy);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            if dx != 0
                && dy != 0
                && dm.blocked.get_signed(nx, cy as isize)
                && dm.blocked.get_signed(cx as isize, ny)
            {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !dm.is_accepted(nx, ny) {
                continue;
            }
            let v = dm.get(nx, ny);
            if v >= cur {
                continue;
            }
            let len = if dx != 0 && dy != 0 { T::SQRT_2() } else { T::one() };
            let slope = (cur - v) / len;
            if best.is_none_or(|(b, _, _)| slope > b) {
                best = Some((slope, nx, ny));
            }
        }
        match best {
            Some((_, nx, ny)) => {
                cx = nx;
                cy = ny;
                path.push((cx, cy));
            }
            None => {
                return Err(Error::BacktrackStalled {
                    x: cx as f64,
                    y: cy as f64,
                })
            }
        }
    }
    Ok(path)
}

/// Minimal path from the source to `start`, traced by descending `U` with Heun steps of
/// length `step` and reversed.
///
/// Steps that would pass within 0.75 grid units of an unreached or impassable point, or that
/// fail to lower `U`, are replaced by grid hops, so the path never slips between two
/// diagonal obstacles.
pub fn backtrack_path<T: Real>(dm: &DistanceMap<T>, start: Point2<T>, step: T) -> Result<Polyline<T>> {
    let (w, h) = (dm.width(), dm.height());
    if step <= T::zero() {
        return Err(Error::domain("backtracking step must be positive"));
    }
    let (sx, sy) = start
        .snap(w, h)
        .ok_or_else(|| Error::domain("backtracking start outside grid"))?;
    if !dm.is_accepted(sx, sy) {
        return Err(Error::domain(format!(
            "backtracking start ({}, {}) was not reached",
            start.x, start.y
        )));
    }
    let clearance = T::lit(0.75);
    let tiny = T::lit(1e-9);
    let max_iter = 4 * (w * h) + 16;
    let mut pts = vec![start];
    let mut cur = start;
    let mut cur_val = probe(dm, cur).map(|(v, _)| v).unwrap_or(dm.get(sx, sy));
    let direction = |g: Point2<T>| -> Option<Point2<T>> {
        let n = g.norm();
        (n > tiny).then(|| g.scale(-T::one() / n))
    };
    let mut finished = false;
    for _ in 0..max_iter {
        if let Some(s) = nearby_source(dm, cur, step) {
            if s != cur {
                pts.push(s);
            }
            finished = true;
            break;
        }
        // Heun step.
        let heun = probe(dm, cur).and_then(|(_, g)| direction(g)).and_then(|d1| {
            let mid = cur.add(d1.scale(step));
            let d2 = probe(dm, mid).and_then(|(_, g)| direction(g)).unwrap_or(d1);
            let avg = d1.add(d2);
            let dir = direction(avg.scale(-T::one()))?;
            let next = cur.add(dir.scale(step));
            let (val, _) = probe(dm, next)?;
            (val < cur_val && segment_clear(dm, cur, next, clearance)).then_some((next, val))
        });
        match heun {
            Some((next, val)) => {
                cur = next;
                cur_val = val;
                pts.push(cur);
            }
            None => {
                // Hop to the nearest accepted corner, then walk the grid until a Heun step
                // is possible again.
                let (gx, gy) = match hop_anchor(dm, cur) {
                    Some(g) => g,
                    None => {
                        return Err(Error::BacktrackStalled {
                            x: cur.x.as_f64(),
                            y: cur.y.as_f64(),
                        })
                    }
                };
                let walk = descend_grid(dm, gx, gy)?;
                for (k, &(x, y)) in walk.iter().enumerate() {
                    let q = Point2::grid(x, y);
                    pts.push(q);
                    cur = q;
                    cur_val = dm.get(x, y);
                    // Resume continuous descent after a couple of hops when the way is clear.
                    if k >= 2 && segment_clear(dm, q, q, clearance + T::one()) {
                        break;
                    }
                }
                let (cx, cy) = cur_xy(cur);
                if dm.sources.get(cx, cy) {
                    finished = true;
                    break;
                }
            }
        }
    }
    if !finished {
        return Err(Error::BacktrackStalled {
            x: cur.x.as_f64(),
            y: cur.y.as_f64(),
        });
    }
    pts.reverse();
    Polyline::open(pts)
}

fn cur_xy<T: Real>(p: Point2<T>) -> (usize, usize) {
    (
        p.x.round().to_usize().unwrap_or(0),
        p.y.round().to_usize().unwrap_or(0),
    )
}

fn hop_anchor<T: Real>(dm: &DistanceMap<T>, p: Point2<T>) -> Option<(usize, usize)> {
    let (w, h) = (dm.width(), dm.height());
    let mut best: Option<(T, usize, usize)> = None;
    for (x, y, _) in cell_corners(p, w, h) {
        if dm.is_accepted(x, y) {
            let d = Point2::grid(x, y).dist(p);
            if best.is_none_or(|(b, _, _)| d < b) {
                best = Some((d, x, y));
            }
        }
    }
    best.map(|(_, x, y)| (x, y))
}

/// Pure grid descent from `start` to the source, reversed; never crosses an 8-connected
/// chain of impassable points.
pub fn backtrack_grid<T: Real>(dm: &DistanceMap<T>, start: Point2<T>) -> Result<Polyline<T>> {
    let (x, y) = start
        .snap(dm.width(), dm.height())
        .ok_or_else(|| Error::domain("backtracking start outside grid"))?;
    let mut pts: Vec<Point2<T>> = descend_grid(dm, x, y)?
        .into_iter()
        .map(|(x, y)| Point2::grid(x, y))
        .collect();
    pts.reverse();
    Polyline::open(pts)
}

/// Weighted length `sum psi ds` of a polyline, sampling `psi` at segment midpoints.
pub fn weighted_length<T: Real>(psi: &ScalarField2D<T>, c: &Polyline<T>) -> Result<T> {
    let mut acc = T::zero();
    for (a, b) in c.segments() {
        let mid = a.add(b).scale(T::lit(0.5));
        acc = acc + psi.bilinear_sample(mid)? * a.dist(b);
    }
    Ok(acc)
}
