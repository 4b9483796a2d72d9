//! Offline construction of the directed proposal graph.
//!
//! Every proposal grows a tube `{U_i <= zeta}` under the segmentation potential. A proposal `j`
//! touching that tube is adjacent to `i`, and the connection path from `i` to `j` is the
//! geodesic from the proposal to its nearest point on `j`. Because the early-stopped distance
//! map is exact below `zeta` and that geodesic never leaves the sublevel set, one solve per
//! proposal yields its tube and all its isotropic connection paths.
//!
//! Proposals whose two ends lie within `zeta` of each other also get a self-closing loop that
//! lets a single arc be closed into a contour.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eikonal::{backtrack_path, fast_march, DistanceMap, SourceSet};
use crate::error::{Error, Result};
use crate::features::{compute_edge_features, segmentation_potential, EdgeFeatures, FeatureConfig};
use crate::grid::{GridMask, Point2, Polyline, ScalarField2D};
use crate::lifted::{
    backtrack_state, curvature_cost_along, lifted_fast_march, tangent_angles, LiftedGrid,
    LiftedState, MetricKind, MetricSpec,
};
use crate::proposals::{detect_proposals, BoundaryProposal, ProposalConfig};
use crate::scalar::Real;

/// Backtracking step in grid units.
pub const BACKTRACK_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    /// `mu * length + weighted length`.
    #[default]
    C1,
    /// Curvature-penalised length.
    C2,
}

impl std::str::FromStr for EnergyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(EnergyKind::C1),
            "c2" => Ok(EnergyKind::C2),
            other => Err(Error::Config(format!("unknown energy `{other}`"))),
        }
    }
}

impl std::fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnergyKind::C1 => "c1",
            EnergyKind::C2 => "c2",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Tube radius in units of weighted distance.
    pub zeta: f64,
    /// Length weight of the first energy.
    pub mu: f64,
    /// Curvature weight.
    pub beta: f64,
    pub metric: MetricKind,
    pub energy: EnergyKind,
    /// Heading samples of the lifted metrics.
    pub n_theta: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            zeta: 12.0,
            mu: 1.0,
            beta: 5.0,
            metric: MetricKind::Isotropic,
            energy: EnergyKind::C1,
            n_theta: 64,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta.is_finite() && self.zeta > 0.0) {
            return Err(Error::Config(format!("zeta must be positive, got {}", self.zeta)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be non-negative, got {}", self.mu)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.metric != MetricKind::Isotropic {
            LiftedGrid::new(2, 2, self.n_theta)?;
        }
        Ok(())
    }
}

/// A directed connection from proposal `from` to proposal `to`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GraphEdge<T> {
    pub from: usize,
    pub to: usize,
    /// Runs from `from_anchor` to `to_anchor`.
    pub path: Polyline<T>,
    pub from_anchor: Point2<T>,
    pub to_anchor: Point2<T>,
    /// Positions of the anchors along the two proposal traces.
    pub from_index: usize,
    pub to_index: usize,
    /// Euclidean length of the path.
    pub length: T,
    /// Metric length of the path as measured by the solver.
    pub weighted_length: T,
    pub weight: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ProposalGraph<T> {
    pub width: usize,
    pub height: usize,
    pub config: GraphConfig,
    pub proposals: Vec<BoundaryProposal<T>>,
    /// Edges between distinct proposals, sorted by `(from, to)`.
    pub edges: Vec<GraphEdge<T>>,
    /// Self-closing loops, at most one per proposal, sorted by proposal.
    pub loops: Vec<GraphEdge<T>>,
}

impl<T: Real> ProposalGraph<T> {
    pub fn node_count(&self) -> usize {
        self.proposals.len()
    }

    /// Restores the occupancy of every proposal after deserialisation and checks ids.
    pub fn restore(&mut self) -> Result<()> {
        for (k, p) in self.proposals.iter_mut().enumerate() {
            if p.id != k {
                return Err(Error::domain(format!("proposal {k} carries id {}", p.id)));
            }
            *p = BoundaryProposal::from_curve(p.id, p.curve.clone(), self.width, self.height)?;
        }
        let n = self.proposals.len();
        for e in self.edges.iter().chain(&self.loops) {
            if e.from >= n || e.to >= n {
                return Err(Error::domain("edge refers to an unknown proposal"));
            }
            if e.from_index >= self.proposals[e.from].len() || e.to_index >= self.proposals[e.to].len() {
                return Err(Error::domain("edge anchor index out of range"));
            }
        }
        Ok(())
    }

    /// Occupancy of all proposals.
    pub fn occupancy(&self) -> GridMask {
        let mut m = GridMask::new(self.width, self.height);
        for p in &self.proposals {
            for &c in &p.cells {
                m.set_at(c, true);
            }
        }
        m
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&GraphEdge<T>> {
        if from == to {
            return self.loops.iter().find(|e| e.from == from);
        }
        self.edges
            .binary_search_by(|e| (e.from, e.to).cmp(&(from, to)))
            .ok()
            .map(|k| &self.edges[k])
    }
}

fn cells_of<T: Real>(p: &BoundaryProposal<T>, width: usize) -> Vec<(usize, usize)> {
    p.cells.iter().map(|&c| (c % width, c / width)).collect()
}

/// Distance from the proposal under `psi`, stopped at `zeta`.
pub fn tube_distance<T: Real>(
    prop: &BoundaryProposal<T>,
    psi: &ScalarField2D<T>,
    zeta: T,
) -> Result<DistanceMap<T>> {
    fast_march(psi, &SourceSet::Cells(cells_of(prop, psi.width())), Some(zeta))
}

/// Tubular neighbourhood `{U_i <= zeta}` of a proposal.
pub fn neighborhood<T: Real>(
    prop: &BoundaryProposal<T>,
    psi: &ScalarField2D<T>,
    zeta: T,
) -> Result<GridMask> {
    Ok(tube_distance(prop, psi, zeta)?.accepted)
}

/// `j` is adjacent to `i` when `S_j` meets `tube_i`.
pub fn find_adjacent<T: Real>(props: &[BoundaryProposal<T>], tubes: &[GridMask]) -> Vec<Vec<usize>> {
    props
        .iter()
        .enumerate()
        .map(|(i, _)| {
            props
                .iter()
                .enumerate()
                .filter(|(j, q)| *j != i && q.cells.iter().any(|&c| tubes[i].at(c)))
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Base weight of a connection path.
pub fn edge_weight<T: Real>(
    path: &Polyline<T>,
    weighted_length: T,
    angles: Option<&[T]>,
    cfg: &GraphConfig,
) -> Result<T> {
    match cfg.energy {
        EnergyKind::C1 => Ok(T::lit(cfg.mu) * path.length() + weighted_length),
        EnergyKind::C2 => {
            if path.len() < 2 {
                return Ok(T::zero());
            }
            match angles {
                Some(a) => curvature_cost_along(path, a, T::lit(cfg.beta)),
                None => curvature_cost_along(path, &tangent_angles(path)?, T::lit(cfg.beta)),
            }
        }
    }
}

/// Nearest point of `to` under the distance map, first in trace order on ties.
fn nearest_on<T: Real>(dm: &DistanceMap<T>, to: &BoundaryProposal<T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (k, p) in to.curve.points.iter().enumerate() {
        let (x, y) = p.snap(dm.width(), dm.height())?;
        if dm.is_accepted(x, y) {
            let v = dm.get(x, y);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
    }
    best
}

fn make_edge<T: Real>(
    from: &BoundaryProposal<T>,
    to: &BoundaryProposal<T>,
    to_index: usize,
    path: Polyline<T>,
    weighted_length: T,
    angles: Option<&[T]>,
    (width, height): (usize, usize),
    cfg: &GraphConfig,
) -> Result<Option<GraphEdge<T>>> {
    let start = path.first();
    let from_index = match start.snap(width, height) {
        Some((x, y)) => from.index_of_cell(y * width + x, width),
        None => None,
    }
    .ok_or_else(|| Error::domain("connection path does not start on its proposal"))?;
    let weight = edge_weight(&path, weighted_length, angles, cfg)?;
    if !(weight.is_finite() && weight > T::zero()) {
        return Ok(None);
    }
    Ok(Some(GraphEdge {
        from: from.id,
        to: to.id,
        from_anchor: from.curve.points[from_index],
        to_anchor: to.curve.points[to_index],
        from_index,
        to_index,
        length: path.length(),
        weighted_length,
        weight,
        path,
    }))
}

/// Isotropic connection from `from` to `to`, reusing the tube distance of `from`.
pub fn connection_from_tube<T: Real>(
    dm: &DistanceMap<T>,
    from: &BoundaryProposal<T>,
    to: &BoundaryProposal<T>,
    cfg: &GraphConfig,
) -> Result<Option<GraphEdge<T>>> {
    let Some((to_index, u)) = nearest_on(dm, to) else {
        return Ok(None);
    };
    let target = to.curve.points[to_index];
    let path = backtrack_path(dm, target, T::lit(BACKTRACK_STEP))?;
    make_edge(from, to, to_index, path, u, None, (dm.width(), dm.height()), cfg)
}

/// Curvature-penalised connection from `from` to `to`, solved on the union of both tubes.
/// Sources are the lifted points of `from` in both traversal directions.
pub fn connection_lifted<T: Real>(
    psi: &ScalarField2D<T>,
    from: &BoundaryProposal<T>,
    to: &BoundaryProposal<T>,
    domain: &GridMask,
    cfg: &GraphConfig,
) -> Result<Option<GraphEdge<T>>> {
    let (w, h) = (psi.width(), psi.height());
    let grid = LiftedGrid::new(w, h, cfg.n_theta)?;
    let spec = MetricSpec {
        kind: cfg.metric,
        beta: T::lit(cfg.beta),
        cost: psi,
    };
    let mut src = Vec::with_capacity(2 * from.len());
    if from.len() >= 2 {
        for (p, a) in from.curve.points.iter().zip(tangent_angles(&from.curve)?) {
            src.push(LiftedState::new(p.x, p.y, a));
            src.push(LiftedState::new(p.x, p.y, a + T::PI()));
        }
    } else {
        let p = from.curve.first();
        for k in 0..cfg.n_theta {
            src.push(LiftedState::new(p.x, p.y, grid.theta::<T>(k)));
        }
    }
    let dm = lifted_fast_march(&spec, &src, grid, None, Some(domain))?;
    let cells: Vec<(usize, usize)> = to
        .curve
        .points
        .iter()
        .filter_map(|p| p.snap(w, h))
        .collect();
    let Some((x, y, k, v)) = dm.argmin_over(&cells) else {
        return Ok(None);
    };
    let to_index = to
        .index_of_cell(y * w + x, w)
        .ok_or_else(|| Error::domain("lifted target is not on the proposal"))?;
    let (path, angles) = backtrack_state(&dm, x, y, k)?;
    make_edge(from, to, to_index, path, v, Some(&angles), (w, h), cfg)
}

/// Loop closing a proposal from its last point back to its first, avoiding its own interior.
pub fn self_loop<T: Real>(
    prop: &BoundaryProposal<T>,
    psi: &ScalarField2D<T>,
    cfg: &GraphConfig,
) -> Result<Option<GraphEdge<T>>> {
    let n = prop.len();
    if n < 3 {
        return Ok(None);
    }
    let (w, h) = (psi.width(), psi.height());
    let interior: Vec<usize> = prop.curve.points[1..n - 1]
        .iter()
        .filter_map(|p| p.snap(w, h).map(|(x, y)| y * w + x))
        .collect();
    let mut vals = psi.values().to_vec();
    for c in interior {
        vals[c] = T::infinity();
    }
    let blocked = ScalarField2D::new_extended(w, h, vals)?;
    let tail = prop.curve.last();
    let head = prop.curve.first();
    let (tx, ty) = tail.snap(w, h).ok_or_else(|| Error::domain("proposal outside grid"))?;
    let dm = fast_march(&blocked, &SourceSet::Cells(vec![(tx, ty)]), Some(T::lit(cfg.zeta)))?;
    let (hx, hy) = head.snap(w, h).ok_or_else(|| Error::domain("proposal outside grid"))?;
    if !dm.is_accepted(hx, hy) {
        return Ok(None);
    }
    let u = dm.get(hx, hy);
    let path = backtrack_path(&dm, head, T::lit(BACKTRACK_STEP))?;
    let mut edge = match make_edge(prop, prop, 0, path, u, None, (w, h), cfg)? {
        Some(e) => e,
        None => return Ok(None),
    };
    edge.from_index = n - 1;
    edge.from_anchor = tail;
    Ok(Some(edge))
}

/// Graph over given proposals.
pub fn build_graph_from_proposals<T: Real>(
    feat: &EdgeFeatures<T>,
    proposals: Vec<BoundaryProposal<T>>,
    fcfg: &FeatureConfig,
    cfg: &GraphConfig,
) -> Result<ProposalGraph<T>> {
    cfg.validate()?;
    let (w, h) = (feat.width(), feat.height());
    for (k, p) in proposals.iter().enumerate() {
        if p.id != k {
            return Err(Error::domain("proposal ids must be 0..n in order"));
        }
    }
    let psi = segmentation_potential(feat, fcfg)?;
    let zeta = T::lit(cfg.zeta);
    let isotropic = cfg.metric == MetricKind::Isotropic;
    // Per proposal: tube, and isotropic edges straight from the tube distance.
    let per_node: Vec<(GridMask, Vec<GraphEdge<T>>)> = proposals
        .par_iter()
        .map(|p| -> Result<(GridMask, Vec<GraphEdge<T>>)> {
            let dm = tube_distance(p, &psi, zeta)?;
            let mut edges = Vec::new();
            if isotropic {
                for q in &proposals {
                    if q.id != p.id && q.cells.iter().any(|&c| dm.accepted.at(c)) {
                        if let Some(e) = connection_from_tube(&dm, p, q, cfg)? {
                            edges.push(e);
                        }
                    }
                }
            }
            Ok((dm.accepted, edges))
        })
        .collect::<Result<_>>()?;
    let (tubes, iso_edges): (Vec<GridMask>, Vec<Vec<GraphEdge<T>>>) = per_node.into_iter().unzip();
    let mut edges: Vec<GraphEdge<T>> = if isotropic {
        iso_edges.into_iter().flatten().collect()
    } else {
        let adj = find_adjacent(&proposals, &tubes);
        let pairs: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j)))
            .collect();
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut domain = tubes[i].clone();
                for (k, b) in tubes[j].bits().iter().enumerate() {
                    if *b {
                        domain.set_at(k, true);
                    }
                }
                connection_lifted(&psi, &proposals[i], &proposals[j], &domain, cfg)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect()
    };
    edges.sort_by_key(|e| (e.from, e.to));
    let loops: Vec<GraphEdge<T>> = proposals
        .par_iter()
        .map(|p| self_loop(p, &psi, cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(ProposalGraph {
        width: w,
        height: h,
        config: cfg.clone(),
        proposals,
        edges,
        loops,
    })
}

/// Full offline step: features, proposals, tubes, connection paths and weights.
pub fn build_graph<T: Real>(
    channels: &[ScalarField2D<T>],
    fcfg: &FeatureConfig,
    pcfg: &ProposalConfig,
    cfg: &GraphConfig,
) -> Result<(EdgeFeatures<T>, ProposalGraph<T>)> {
    pcfg.validate()?;
    cfg.validate()?;
    let feat = compute_edge_features(channels, fcfg).map_err(|e| e.at("features"))?;
    let proposals = detect_proposals(&feat, pcfg).map_err(|e| e.at("proposals"))?;
    let graph = build_graph_from_proposals(&feat, proposals, fcfg, cfg).map_err(|e| e.at("graph"))?;
    Ok((feat, graph))
}
