//! Boundary proposals: thin, junction-free edge arcs traced into ordered polylines.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::EdgeFeatures;
use crate::grid::{GridMask, Point2, Polyline, ScalarField2D, NEIGHBOURS_8};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    /// Hysteresis thresholds on the normalised gradient magnitude.
    pub low: f64,
    pub high: f64,
    /// Arcs with fewer grid points are discarded.
    pub min_fragment_length: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            low: 0.05,
            high: 0.15,
            min_fragment_length: 10,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low && self.low < self.high && self.high <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= low < high <= 1, got low={} high={}",
                self.low, self.high
            )));
        }
        if self.min_fragment_length < 2 {
            return Err(Error::Config("min_fragment_length must be at least 2".into()));
        }
        Ok(())
    }
}

/// One junction-free edge arc.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BoundaryProposal<T> {
    pub id: usize,
    /// Trace points in order; consecutive points are 8-neighbours.
    pub curve: Polyline<T>,
    /// Row-major grid indices of the trace points, sorted.
    #[serde(skip)]
    pub cells: Vec<usize>,
}

impl<T: Real> BoundaryProposal<T> {
    /// Rebuilds a proposal from its ordered trace; the trace must lie on grid points.
    pub fn from_curve(id: usize, curve: Polyline<T>, width: usize, height: usize) -> Result<Self> {
        let mut cells = Vec::with_capacity(curve.len());
        for p in &curve.points {
            let (x, y) = p
                .snap(width, height)
                .ok_or_else(|| Error::domain("proposal point outside the grid"))?;
            cells.push(y * width + x);
        }
        cells.sort_unstable();
        cells.dedup();
        Ok(BoundaryProposal { id, curve, cells })
    }

    pub fn len(&self) -> usize {
        self.curve.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curve.is_empty()
    }

    pub fn occupancy(&self, width: usize, height: usize) -> GridMask {
        let mut m = GridMask::new(width, height);
        for &c in &self.cells {
            m.set_at(c, true);
        }
        m
    }

    /// Position of grid index `cell` along the trace.
    pub fn index_of_cell(&self, cell: usize, width: usize) -> Option<usize> {
        let (x, y) = (cell % width, cell / width);
        self.curve.points.iter().position(|p| {
            p.x == T::from_usize_lossy(x) && p.y == T::from_usize_lossy(y)
        })
    }
}

/// Non-maximum suppression along the quantised gradient direction followed by hysteresis
/// linking, then removal of redundant staircase points so the trace is one point wide.
pub fn binarize_edges<T: Real>(feat: &EdgeFeatures<T>, cfg: &ProposalConfig) -> Result<GridMask> {
    binarize_edge_map(feat, &feat.g, cfg)
}

/// Like [`binarize_edges`] but thresholds an external edge probability map in `[0, 1]`.
/// The suppression direction still comes from the image gradient in `feat`.
pub fn binarize_edge_map<T: Real>(
    feat: &EdgeFeatures<T>,
    strength: &ScalarField2D<T>,
    cfg: &ProposalConfig,
) -> Result<GridMask> {
    cfg.validate()?;
    let (w, h) = (feat.width(), feat.height());
    if strength.width() != w || strength.height() != h {
        return Err(Error::domain("edge map does not match feature grid"));
    }
    let low = T::lit(cfg.low);
    let high = T::lit(cfg.high);
    let mut nms = vec![T::zero(); w * h];
    let mut any = false;
    // The outermost ring stays empty so the domain boundary is never blocked.
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = strength.get(x, y);
            if v < low || v <= T::zero() {
                continue;
            }
            let (dx, dy) = gradient_step(feat.grad_x.get(x, y), feat.grad_y.get(x, y));
            let prev = strength.get((x as isize - dx) as usize, (y as isize - dy) as usize);
            let next = strength.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            // Strict on one side so a two-sample plateau keeps exactly one sample.
            if v > prev && v >= next {
                nms[y * w + x] = v;
                any = true;
            }
        }
    }
    let mut mask = GridMask::new(w, h);
    if !any {
        return Ok(mask);
    }
    let mut queue = VecDeque::new();
    for (i, &v) in nms.iter().enumerate() {
        if v >= high {
            mask.set_at(i, true);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBOURS_8 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !mask.at(j) && nms[j] >= low && nms[j] > T::zero() {
                mask.set_at(j, true);
                queue.push_back(j);
            }
        }
    }
    thin_staircases(&mut mask);
    Ok(mask)
}

/// Grid step along the gradient, quantised to 0/45/90/135 degrees (y axis points down).
fn gradient_step<T: Real>(gx: T, gy: T) -> (isize, isize) {
    let mut angle = gy.as_f64().atan2(gx.as_f64()).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Set 8-neighbours of `(x, y)` that are mutually 8-connected form a single group.
fn neighbours_single_component(mask: &GridMask, x: usize, y: usize) -> (usize, bool) {
    let (x, y) = (x as isize, y as isize);
    let set: Vec<(isize, isize)> = NEIGHBOURS_8
        .iter()
        .copied()
        .filter(|(dx, dy)| mask.get_signed(x + dx, y + dy))
        .collect();
    if set.len() < 2 {
        return (set.len(), false);
    }
    let mut seen = vec![false; set.len()];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(a) = stack.pop() {
        for b in 0..set.len() {
            if !seen[b]
                && (set[a].0 - set[b].0).abs() <= 1
                && (set[a].1 - set[b].1).abs() <= 1
            {
                seen[b] = true;
                stack.push(b);
            }
        }
    }
    (set.len(), seen.iter().all(|s| *s))
}

/// Removes points whose neighbours stay connected without them (staircase corners, blobs).
/// End points are never removed, so arcs keep their extent.
fn thin_staircases(mask: &mut GridMask) {
    let (w, h) = (mask.width(), mask.height());
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x, y) {
                    continue;
                }
                let (n, single) = neighbours_single_component(mask, x, y);
                if n >= 2 && single {
                    mask.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Clears every point with more than two set 8-neighbours (evaluated on the input).
pub fn remove_junctions(edges: &GridMask) -> GridMask {
    let mut out = edges.clone();
    for (x, y) in edges.iter_set() {
        if edges.neighbours8(x, y) > 2 {
            out.set(x, y, false);
        }
    }
    out
}

/// Traces the arcs of a junction-free mask into proposals, ordered by their first point.
/// Closed loops are opened at their first point in row-major order.
pub fn extract_proposals<T: Real>(
    edges: &GridMask,
    cfg: &ProposalConfig,
) -> Result<Vec<BoundaryProposal<T>>> {
    cfg.validate()?;
    let (w, h) = (edges.width(), edges.height());
    if let Some((x, y)) = edges.iter_set().find(|&(x, y)| edges.neighbours8(x, y) > 2) {
        return Err(Error::domain(format!("mask has a junction at ({x}, {y})")));
    }
    let neighbours = |i: usize| -> Vec<usize> {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        NEIGHBOURS_8
            .iter()
            .filter(|(dx, dy)| edges.get_signed(x + dx, y + dy))
            .map(|(dx, dy)| ((y + dy) as usize) * w + (x + dx) as usize)
            .collect()
    };
    let mut component = vec![usize::MAX; w * h];
    let mut traces: Vec<Vec<usize>> = Vec::new();
    for start in 0..w * h {
        if !edges.at(start) || component[start] != usize::MAX {
            continue;
        }
        // Collect the component.
        let cid = traces.len();
        let mut members = vec![start];
        component[start] = cid;
        let mut k = 0;
        while k < members.len() {
            for n in neighbours(members[k]) {
                if component[n] == usize::MAX {
                    component[n] = cid;
                    members.push(n);
                }
            }
            k += 1;
        }
        members.sort_unstable();
        let first = members
            .iter()
            .copied()
            .find(|&m| neighbours(m).len() <= 1)
            .unwrap_or(members[0]);
        let mut order = vec![first];
        let mut visited = std::collections::HashSet::from([first]);
        let mut cur = first;
        loop {
            let mut next: Vec<usize> = neighbours(cur)
                .into_iter()
                .filter(|n| !visited.contains(n))
                .collect();
            next.sort_unstable();
            match next.first() {
                Some(&n) => {
                    visited.insert(n);
                    order.push(n);
                    cur = n;
                }
                None => break,
            }
        }
        traces.push(order);
    }
    let mut out = Vec::new();
    for trace in traces {
        if trace.len() < cfg.min_fragment_length {
            continue;
        }
        let pts = trace
            .iter()
            .map(|&i| Point2::grid(i % w, i / w))
            .collect::<Vec<_>>();
        let curve = Polyline::open(pts)?;
        out.push(BoundaryProposal::from_curve(out.len(), curve, w, h)?);
    }
    Ok(out)
}

/// Removes branches of fewer than `max_len` points that run from an end point into a junction.
/// Such spurs would be discarded as fragments anyway, but left in place their junction would
/// split the arc they hang off.
pub fn prune_spurs(edges: &GridMask, max_len: usize) -> GridMask {
    let mut mask = edges.clone();
    let w = mask.width();
    loop {
        let mut changed = false;
        let ends: Vec<(usize, usize)> = mask.iter_set().filter(|&(x, y)| mask.neighbours8(x, y) == 1).collect();
        for (x0, y0) in ends {
            if !mask.get(x0, y0) || mask.neighbours8(x0, y0) != 1 {
                continue;
            }
            let mut branch = vec![(x0, y0)];
            let mut reached_junction = false;
            loop {
                let (x, y) = *branch.last().expect("non-empty");
                let next: Vec<(usize, usize)> = NEIGHBOURS_8
                    .iter()
                    .map(|(dx, dy)| (x as isize + dx, y as isize + dy))
                    .filter(|&(nx, ny)| mask.get_signed(nx, ny))
                    .map(|(nx, ny)| (nx as usize, ny as usize))
                    .filter(|p| branch.len() < 2 || *p != branch[branch.len() - 2])
                    .collect();
                match next.as_slice() {
                    [p] if mask.neighbours8(p.0, p.1) <= 2 => {
                        branch.push(*p);
                        if branch.len() >= max_len {
                            break;
                        }
                    }
                    [p] => {
                        reached_junction = mask.neighbours8(p.0, p.1) > 2;
                        break;
                    }
                    // A junction directly adjacent to the branch tip.
                    [_, ..] => {
                        reached_junction = branch.len() > 1 || mask.neighbours8(x, y) > 2;
                        break;
                    }
                    [] => break,
                }
            }
            if reached_junction && branch.len() < max_len {
                for (x, y) in branch {
                    mask.set_at(y * w + x, false);
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
        thin_staircases(&mut mask);
    }
    mask
}

/// Full offline proposal stage: binarise, prune short spurs, drop junctions, trace.
pub fn detect_proposals<T: Real>(
    feat: &EdgeFeatures<T>,
    cfg: &ProposalConfig,
) -> Result<Vec<BoundaryProposal<T>>> {
    let edges = prune_spurs(&binarize_edges(feat, cfg)?, cfg.min_fragment_length);
    extract_proposals(&remove_junctions(&edges), cfg)
}
