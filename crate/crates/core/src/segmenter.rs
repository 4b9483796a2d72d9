//! Interactive step: adaptive cut, cut-masked weights, circular candidates and selection.

use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eikonal::{backtrack_grid, backtrack_path, fast_march, min_boundary_point, HeapItem, SourceSet};
use crate::error::{Error, Result};
use crate::features::EdgeFeatures;
use crate::graph::{GraphEdge, ProposalGraph, BACKTRACK_STEP};
use crate::grid::{polylines_intersect, Point2, Polyline, ScalarField2D, INTERSECTION_TOL};
use crate::proposals::BoundaryProposal;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Weight of the summed edge weights.
    pub mu1: f64,
    /// Weight of the inverse contour length.
    pub mu2: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { mu1: 1.0, mu2: 0.1 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Geodesic from the landmark to the image border under the structure-aware potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdaptiveCut<T> {
    pub landmark: Point2<T>,
    pub boundary_point: Point2<T>,
    /// Runs from the landmark to the boundary point.
    pub path: Polyline<T>,
}

/// A closed contour assembled from truncated proposals and connection paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CircularContour<T> {
    pub contour: Polyline<T>,
    /// Node sequence of the grouped path; the contour closes from the last node to the first.
    pub nodes: Vec<usize>,
    /// Truncated proposal of every node, in contour order.
    pub arcs: Vec<Polyline<T>>,
    /// `(from, to)` of every connection path used, the cut-crossing one last.
    pub links: Vec<(usize, usize)>,
    /// Sum of the masked weights along `nodes`.
    pub energy: T,
    pub length: T,
    /// `mu1 * energy + mu2 / length`.
    pub score: T,
    pub cut: AdaptiveCut<T>,
}

/// Proposals whose two ends are 8-neighbours close on themselves; their first point is left
/// passable so the cut can leave the region they enclose.
pub fn is_closed_trace<T: Real>(p: &BoundaryProposal<T>) -> bool {
    let (a, b) = (p.curve.first(), p.curve.last());
    p.len() >= 3 && (a.x - b.x).abs() <= T::one() && (a.y - b.y).abs() <= T::one()
}

/// `phi` with `+∞` on every proposal point except the first point of closed traces.
pub fn cut_potential<T: Real>(
    feat: &EdgeFeatures<T>,
    proposals: &[BoundaryProposal<T>],
) -> Result<ScalarField2D<T>> {
    let w = feat.width();
    let mut vals = feat.phi.values().to_vec();
    for p in proposals {
        for &c in &p.cells {
            vals[c] = T::infinity();
        }
        if is_closed_trace(p) {
            if let Some((x, y)) = p.curve.first().snap(w, feat.height()) {
                vals[y * w + x] = feat.phi.get(x, y);
            }
        }
    }
    ScalarField2D::new_extended(w, feat.height(), vals)
}

fn cut_is_clean<T: Real>(path: &Polyline<T>, proposals: &[BoundaryProposal<T>]) -> bool {
    let tol = T::lit(INTERSECTION_TOL);
    proposals.iter().all(|p| {
        let hits = polylines_intersect(path, &p.curve);
        hits.is_empty() || (is_closed_trace(p) && hits.iter().all(|h| h.dist(p.curve.first()) <= tol))
    })
}

/// Adaptive cut from landmark `p`.
pub fn adaptive_cut<T: Real>(
    p: Point2<T>,
    feat: &EdgeFeatures<T>,
    proposals: &[BoundaryProposal<T>],
) -> Result<AdaptiveCut<T>> {
    let (w, h) = (feat.width(), feat.height());
    let invalid = |reason: &str| Error::InvalidLandmark {
        x: p.x.as_f64(),
        y: p.y.as_f64(),
        reason: reason.into(),
    };
    let inside = p.is_finite()
        && p.x > T::zero()
        && p.y > T::zero()
        && p.x < T::from_usize_lossy(w - 1)
        && p.y < T::from_usize_lossy(h - 1);
    if !inside {
        return Err(invalid("the landmark must lie strictly inside the image"));
    }
    let psi = cut_potential(feat, proposals)?;
    let (sx, sy) = p.snap(w, h).ok_or_else(|| invalid("outside the image"))?;
    if !psi.get(sx, sy).is_finite() {
        return Err(invalid("the landmark sits on a boundary proposal; click slightly off the edge"));
    }
    let dm = fast_march(&psi, &SourceSet::Point(p), None)?;
    let b = min_boundary_point(&dm)?;
    let smooth = backtrack_path(&dm, b, T::lit(BACKTRACK_STEP)).ok();
    let path = match smooth {
        Some(s) if cut_is_clean(&s, proposals) => s,
        _ => backtrack_grid(&dm, b)?,
    };
    let mut pts = Vec::with_capacity(path.len() + 1);
    pts.push(p);
    pts.extend(path.points);
    Ok(AdaptiveCut {
        landmark: p,
        boundary_point: b,
        path: Polyline::open(pts)?,
    })
}

/// Directed weights after masking. Only finite weights are stored.
#[derive(Clone, Debug)]
pub struct WeightView<T> {
    pub adj: Vec<Vec<(usize, T)>>,
}

impl<T: Real> WeightView<T> {
    pub fn new(n: usize) -> Self {
        WeightView { adj: vec![Vec::new(); n] }
    }

    /// Adds or lowers the weight of `(from, to)`; infinite weights are ignored.
    pub fn set(&mut self, from: usize, to: usize, w: T) {
        if !w.is_finite() {
            return;
        }
        match self.adj[from].iter_mut().find(|(t, _)| *t == to) {
            Some(slot) => slot.1 = slot.1.min(w),
            None => self.adj[from].push((to, w)),
        }
    }

    /// Weight of `(from, to)`, `+∞` when absent.
    pub fn weight(&self, from: usize, to: usize) -> T {
        self.adj[from]
            .iter()
            .find(|(t, _)| *t == to)
            .map(|(_, w)| *w)
            .unwrap_or_else(T::infinity)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }
}

/// Number of distinct points where an edge path meets the cut.
pub fn cut_crossings<T: Real>(edge: &GraphEdge<T>, cut: &AdaptiveCut<T>) -> usize {
    polylines_intersect(&edge.path, &cut.path).len()
}

/// Base weights with every edge touching the cut set to `+∞`.
pub fn masked_weights<T: Real>(graph: &ProposalGraph<T>, cut: &AdaptiveCut<T>) -> WeightView<T> {
    let mut view = WeightView::new(graph.node_count());
    for e in &graph.edges {
        if cut_crossings(e, cut) == 0 {
            view.set(e.from, e.to, e.weight);
        }
    }
    view
}

/// Ordered pairs whose connection path (or self-loop) crosses the cut exactly once.
pub fn build_lambda<T: Real>(graph: &ProposalGraph<T>, cut: &AdaptiveCut<T>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = graph
        .edges
        .iter()
        .chain(&graph.loops)
        .filter(|e| cut_crossings(e, cut) == 1)
        .map(|e| (e.from, e.to))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Cheapest directed path from `source` to `target`, with its cost.
pub fn dijkstra<T: Real>(view: &WeightView<T>, source: usize, target: usize) -> Option<(Vec<usize>, T)> {
    let n = view.node_count();
    if source >= n || target >= n {
        return None;
    }
    let mut dist = vec![T::infinity(); n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = T::zero();
    heap.push(HeapItem { key: T::zero(), idx: source });
    while let Some(HeapItem { key, idx }) = heap.pop() {
        if done[idx] || key > dist[idx] {
            continue;
        }
        done[idx] = true;
        if idx == target {
            break;
        }
        for &(v, w) in &view.adj[idx] {
            let cand = key + w;
            if cand < dist[v] {
                dist[v] = cand;
                pred[v] = idx;
                heap.push(HeapItem { key: cand, idx: v });
            }
        }
    }
    if !dist[target].is_finite() {
        return None;
    }
    let mut nodes = vec![target];
    while *nodes.last().expect("non-empty") != source {
        nodes.push(pred[*nodes.last().expect("non-empty")]);
    }
    nodes.reverse();
    Some((nodes, dist[target]))
}

fn truncate<T: Real>(p: &BoundaryProposal<T>, entry: usize, exit: usize) -> Vec<Point2<T>> {
    let pts = &p.curve.points;
    if entry <= exit {
        pts[entry..=exit].to_vec()
    } else {
        pts[exit..=entry].iter().rev().copied().collect()
    }
}

/// Closed contour following `nodes` through their connection paths and closing with the
/// edge `closing = (last node, first node)`. Fails when the result is not a simple polygon
/// that encloses the landmark and crosses the cut exactly once.
pub fn assemble_contour<T: Real>(
    nodes: &[usize],
    energy: T,
    graph: &ProposalGraph<T>,
    closing: (usize, usize),
    cut: &AdaptiveCut<T>,
    cfg: &SelectionConfig,
) -> Result<CircularContour<T>> {
    let k = nodes.len();
    if k == 0 || closing != (nodes[k - 1], nodes[0]) {
        return Err(Error::domain("closing edge does not join the path ends"));
    }
    let mut links: Vec<&GraphEdge<T>> = Vec::with_capacity(k);
    for win in nodes.windows(2) {
        links.push(
            graph
                .edge(win[0], win[1])
                .ok_or_else(|| Error::domain(format!("no edge {} -> {}", win[0], win[1])))?,
        );
    }
    links.push(
        graph
            .edge(closing.0, closing.1)
            .ok_or_else(|| Error::domain("missing closing edge"))?,
    );
    let mut pts: Vec<Point2<T>> = Vec::new();
    let mut arcs = Vec::with_capacity(k);
    for t in 0..k {
        let entry = if t == 0 { links[k - 1].to_index } else { links[t - 1].to_index };
        let exit = links[t].from_index;
        let arc = truncate(&graph.proposals[nodes[t]], entry, exit);
        pts.extend_from_slice(&arc);
        arcs.push(Polyline::open(arc)?);
        pts.extend_from_slice(&links[t].path.points);
    }
    let contour = Polyline::closed(pts).map_err(|_| Error::NoAdmissibleContour)?;
    if !contour.is_simple() {
        return Err(Error::domain("assembled contour self-intersects"));
    }
    if !contour.contains_point(cut.landmark)? {
        return Err(Error::domain("assembled contour does not enclose the landmark"));
    }
    if polylines_intersect(&contour, &cut.path).len() != 1 {
        return Err(Error::domain("assembled contour does not cross the cut once"));
    }
    let length = contour.length();
    let score = T::lit(cfg.mu1) * energy + T::lit(cfg.mu2) / length;
    Ok(CircularContour {
        contour,
        nodes: nodes.to_vec(),
        arcs,
        links: links.iter().map(|e| (e.from, e.to)).collect(),
        energy,
        length,
        score,
        cut: cut.clone(),
    })
}

/// Candidate of least `mu1 * energy + mu2 / length`; ties go to the longer contour, then to
/// the earlier candidate.
pub fn select_optimal<T: Real>(candidates: Vec<CircularContour<T>>) -> Result<CircularContour<T>> {
    let mut best: Option<CircularContour<T>> = None;
    for c in candidates {
        let better = match &best {
            None => true,
            Some(b) => c.score < b.score || (c.score == b.score && c.length > b.length),
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or(Error::NoAdmissibleContour)
}

/// Recomputes scores under `cfg`.
pub fn rescore<T: Real>(candidates: &mut [CircularContour<T>], cfg: &SelectionConfig) {
    for c in candidates {
        c.score = T::lit(cfg.mu1) * c.energy + T::lit(cfg.mu2) / c.length;
    }
}

/// All admissible candidates for an existing cut.
pub fn candidates<T: Real>(
    graph: &ProposalGraph<T>,
    cut: &AdaptiveCut<T>,
    cfg: &SelectionConfig,
) -> Result<Vec<CircularContour<T>>> {
    let lambda = build_lambda(graph, cut);
    if lambda.is_empty() {
        return Err(Error::EmptyLambda);
    }
    let view = masked_weights(graph, cut);
    let mut out = Vec::new();
    for (i, j) in lambda {
        // The crossing edge runs i -> j; the rest of the cycle runs j -> i inside the cut.
        let Some((nodes, energy)) = dijkstra(&view, j, i) else {
            continue;
        };
        if let Ok(c) = assemble_contour(&nodes, energy, graph, (i, j), cut, cfg) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Wall-clock time spent in each interactive stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub cut_ms: f64,
    pub grouping_ms: f64,
    pub selection_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.cut_ms + self.grouping_ms + self.selection_ms
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Full interactive step for landmark `p`.
pub fn segment<T: Real>(
    graph: &ProposalGraph<T>,
    feat: &EdgeFeatures<T>,
    p: Point2<T>,
    cfg: &SelectionConfig,
) -> Result<CircularContour<T>> {
    segment_timed(graph, feat, p, cfg).map(|(c, _)| c)
}

/// [`segment`] that also reports stage timings.
pub fn segment_timed<T: Real>(
    graph: &ProposalGraph<T>,
    feat: &EdgeFeatures<T>,
    p: Point2<T>,
    cfg: &SelectionConfig,
) -> Result<(CircularContour<T>, StageTimings)> {
    cfg.validate()?;
    if feat.width() != graph.width || feat.height() != graph.height {
        return Err(Error::domain("graph and image dimensions differ"));
    }
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let cut = adaptive_cut(p, feat, &graph.proposals).map_err(|e| e.at("cut"))?;
    timings.cut_ms = ms_since(t);
    let t = Instant::now();
    let cands = candidates(graph, &cut, cfg).map_err(|e| e.at("grouping"))?;
    timings.grouping_ms = ms_since(t);
    let t = Instant::now();
    let best = select_optimal(cands).map_err(|e| e.at("selection"))?;
    timings.selection_ms = ms_since(t);
    Ok((best, timings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_edge_features, FeatureConfig};
    use crate::graph::{build_graph, build_graph_from_proposals, GraphConfig};
    use crate::proposals::ProposalConfig;
    use proptest::prelude::*;

    type P = Point2<f64>;

    fn view(n: usize, edges: &[(usize, usize, f64)]) -> WeightView<f64> {
        let mut v = WeightView::new(n);
        for &(a, b, w) in edges {
            v.set(a, b, w);
        }
        v
    }

    #[test]
    fn dijkstra_examples() {
        let v = view(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)]);
        assert_eq!(dijkstra(&v, 0, 2), Some((vec![0, 1, 2], 2.0)));
        assert_eq!(dijkstra(&v, 1, 1), Some((vec![1], 0.0)));
        assert_eq!(dijkstra(&v, 2, 0), None);
    }

    fn brute(v: &WeightView<f64>, s: usize, t: usize) -> Option<f64> {
        fn go(v: &WeightView<f64>, u: usize, t: usize, acc: f64, seen: &mut Vec<bool>, best: &mut Option<f64>) {
            if u == t {
                if best.is_none_or(|b| acc < b) {
                    *best = Some(acc);
                }
                return;
            }
            for &(x, w) in &v.adj[u] {
                if !seen[x] {
                    seen[x] = true;
                    go(v, x, t, acc + w, seen, best);
                    seen[x] = false;
                }
            }
        }
        let mut seen = vec![false; v.node_count()];
        seen[s] = true;
        let mut best = None;
        go(v, s, t, 0.0, &mut seen, &mut best);
        best
    }

    proptest! {
        #[test]
        fn dijkstra_matches_enumeration(
            n in 2usize..9,
            raw in prop::collection::vec((0usize..8, 0usize..8, 0.1f64..10.0), 0..30),
        ) {
            let edges: Vec<(usize, usize, f64)> =
                raw.into_iter().filter(|(a, b, _)| a < &n && b < &n && a != b).collect();
            let v = view(n, &edges);
            let got = dijkstra(&v, 0, n - 1);
            let want = brute(&v, 0, n - 1);
            prop_assert_eq!(got.as_ref().map(|g| g.1), want);
            if let Some((nodes, cost)) = got {
                let sum = nodes.windows(2).fold(0.0, |acc, w| acc + v.weight(w[0], w[1]));
                prop_assert_eq!(sum, cost);
            }
        }
    }

    fn contour_stub(energy: f64, length: f64, cfg: &SelectionConfig) -> CircularContour<f64> {
        let sq = Polyline::closed(vec![P::new(0.0, 0.0), P::new(1.0, 0.0), P::new(1.0, 1.0)]).unwrap();
        CircularContour {
            contour: sq.clone(),
            nodes: vec![],
            arcs: vec![],
            links: vec![],
            energy,
            length,
            score: cfg.mu1 * energy + cfg.mu2 / length,
            cut: AdaptiveCut {
                landmark: P::new(0.5, 0.2),
                boundary_point: P::new(0.0, 0.0),
                path: Polyline::open(vec![P::new(0.5, 0.2), P::new(0.5, -1.0)]).unwrap(),
            },
        }
    }

    #[test]
    fn selection_examples() {
        let cfg = SelectionConfig::default();
        let a = contour_stub(2.0, 100.0, &cfg);
        let b = contour_stub(1.0, 10.0, &cfg);
        assert!((a.score - 2.001).abs() < 1e-12);
        assert!((b.score - 1.01).abs() < 1e-12);
        assert_eq!(select_optimal(vec![a.clone(), b.clone()]).unwrap().energy, 1.0);
        let short = contour_stub(1.0, 10.0, &cfg);
        let long = contour_stub(1.0, 100.0, &cfg);
        assert_eq!(select_optimal(vec![short, long]).unwrap().length, 100.0);
        // Same score: the longer contour wins.
        let mut tie1 = contour_stub(1.0, 10.0, &cfg);
        let mut tie2 = contour_stub(1.0, 20.0, &cfg);
        tie1.score = 3.0;
        tie2.score = 3.0;
        assert_eq!(select_optimal(vec![tie1, tie2]).unwrap().length, 20.0);
        assert!(matches!(select_optimal::<f64>(vec![]), Err(Error::NoAdmissibleContour)));
        let mut scaled = vec![a, b];
        rescore(&mut scaled, &SelectionConfig { mu1: 7.0, mu2: 0.7 });
        assert_eq!(select_optimal(scaled).unwrap().energy, 1.0);
    }

    fn flat(w: usize, h: usize, v: f64) -> EdgeFeatures<f64> {
        compute_edge_features(&[ScalarField2D::filled(w, h, v).unwrap()], &FeatureConfig::default()).unwrap()
    }

    #[test]
    fn cut_without_proposals_is_straight() {
        let feat = flat(101, 101, 0.5);
        let cut = adaptive_cut(P::new(30.0, 45.0), &feat, &[]).unwrap();
        assert_eq!(cut.boundary_point, P::new(0.0, 45.0));
        assert_eq!(cut.path.first(), P::new(30.0, 45.0));
        assert_eq!(cut.path.last(), P::new(0.0, 45.0));
        assert!((cut.path.length() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn landmark_validation() {
        let feat = flat(40, 40, 0.5);
        for p in [P::new(-1.0, 5.0), P::new(0.0, 5.0), P::new(39.0, 5.0), P::new(5.0, 100.0), P::new(f64::NAN, 3.0)] {
            assert!(matches!(adaptive_cut(p, &feat, &[]), Err(Error::InvalidLandmark { .. })), "{p:?}");
        }
        let curve = Polyline::open((5..30).map(|x| P::grid(x, 20)).collect()).unwrap();
        let prop = BoundaryProposal::from_curve(0, curve, 40, 40).unwrap();
        assert!(matches!(
            adaptive_cut(P::new(10.0, 20.0), &feat, &[prop]),
            Err(Error::InvalidLandmark { .. })
        ));
    }

    fn disk_image(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> ScalarField2D<f64> {
        ScalarField2D::from_fn(w, h, |x, y| if (x as f64 - cx).hypot(y as f64 - cy) <= r { 1.0 } else { 0.5 }).unwrap()
    }

    #[test]
    fn closed_ring_segments_through_its_gate() {
        let (w, h) = (100, 100);
        let img = disk_image(w, h, 50.0, 50.0, 30.0);
        let (feat, graph) = build_graph(&[img], &FeatureConfig::default(), &ProposalConfig::default(), &GraphConfig::default()).unwrap();
        assert_eq!(graph.node_count(), 1);
        assert!(is_closed_trace(&graph.proposals[0]));
        let c = segment(&graph, &feat, P::new(50.0, 50.0), &SelectionConfig::default()).unwrap();
        assert_eq!(c.nodes, vec![0]);
        assert_eq!(c.energy, 0.0);
        assert!(c.contour.is_simple());
        assert!(c.contour.contains_point(P::new(50.0, 50.0)).unwrap());
        assert_eq!(polylines_intersect(&c.contour, &c.cut.path).len(), 1);
        let area = c.contour.rasterize(w, h).unwrap().count() as f64;
        let want = std::f64::consts::PI * 30.0 * 30.0;
        assert!((area - want).abs() / want < 0.06, "{area} vs {want}");
        // Bit-identical reruns.
        let again = segment(&graph, &feat, P::new(50.0, 50.0), &SelectionConfig::default()).unwrap();
        assert_eq!(c, again);
    }

    fn ring_arcs(w: usize, h: usize, r: f64, gaps: &[f64]) -> (EdgeFeatures<f64>, Vec<BoundaryProposal<f64>>) {
        let img = disk_image(w, h, 50.0, 50.0, r);
        let feat = compute_edge_features(&[img], &FeatureConfig::default()).unwrap();
        let ring = crate::proposals::detect_proposals(&feat, &ProposalConfig::default())
            .unwrap()
            .into_iter()
            .max_by_key(|p| p.len())
            .unwrap();
        let in_gap = |p: &P| {
            let a = (p.y - 50.0).atan2(p.x - 50.0);
            gaps.iter().any(|g| {
                let d = (a - g).rem_euclid(std::f64::consts::TAU);
                d.min(std::f64::consts::TAU - d) < 0.08
            })
        };
        let pts = &ring.curve.points;
        let start = (0..pts.len()).find(|&k| in_gap(&pts[k]) && !in_gap(&pts[(k + 1) % pts.len()])).unwrap() + 1;
        let mut arcs: Vec<Vec<P>> = vec![vec![]];
        for k in 0..pts.len() {
            let p = pts[(start + k) % pts.len()];
            if in_gap(&p) {
                if !arcs.last().unwrap().is_empty() {
                    arcs.push(vec![]);
                }
            } else {
                arcs.last_mut().unwrap().push(p);
            }
        }
        arcs.retain(|a| !a.is_empty());
        let props = arcs
            .into_iter()
            .enumerate()
            .map(|(k, a)| BoundaryProposal::from_curve(k, Polyline::open(a).unwrap(), w, h).unwrap())
            .collect();
        (feat, props)
    }

    #[test]
    fn four_arc_circle_reassembles() {
        let (w, h) = (100, 100);
        let gaps = [0.3, 0.3 + 1.57, 0.3 + 3.14, 0.3 + 4.71];
        let (feat, props) = ring_arcs(w, h, 30.0, &gaps);
        assert_eq!(props.len(), 4);
        let graph = build_graph_from_proposals(&feat, props, &FeatureConfig::default(), &GraphConfig::default()).unwrap();
        let p = P::new(45.0, 52.0);
        let cut = adaptive_cut(p, &feat, &graph.proposals).unwrap();
        let lambda = build_lambda(&graph, &cut);
        assert_eq!(lambda.len(), 2, "{lambda:?}");
        assert_eq!(lambda[0], (lambda[1].1, lambda[1].0));
        let c = segment(&graph, &feat, p, &SelectionConfig::default()).unwrap();
        assert_eq!(c.nodes.len(), 4);
        let view = masked_weights(&graph, &c.cut);
        let sum = c.nodes.windows(2).fold(0.0, |acc, w| acc + view.weight(w[0], w[1]));
        assert_eq!(sum, c.energy);
        let mask = c.contour.rasterize(w, h).unwrap();
        let gt = Polyline::closed(
            (0..720)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / 720.0;
                    P::new(50.0 + 30.0 * a.cos(), 50.0 + 30.0 * a.sin())
                })
                .collect(),
        )
        .unwrap()
        .rasterize(w, h)
        .unwrap();
        let inter = mask.and_count(&gt) as f64;
        let dice = 2.0 * inter / (mask.count() + gt.count()) as f64;
        assert!(dice >= 0.97, "{dice}");
    }

    #[test]
    fn cut_crossing_two_gaps() {
        // A cut between two nearby gaps at the top crosses both connection paths when the
        // landmark sits just under the arc between them; build the cut by hand.
        let (w, h) = (100, 100);
        let (feat, props) = ring_arcs(w, h, 30.0, &[4.5, 4.9, 1.0, 2.5]);
        let graph = build_graph_from_proposals(&feat, props, &FeatureConfig::default(), &GraphConfig::default()).unwrap();
        let y_top = 50.0 - 30.0 * 0.98;
        let cut = AdaptiveCut {
            landmark: P::new(50.0, 50.0),
            boundary_point: P::new(0.0, y_top - 3.0),
            path: Polyline::open(vec![
                P::new(50.0, 50.0),
                P::new(50.0 + 30.0 * 4.5f64.cos() * 0.8, y_top + 8.0),
                P::new(50.0 + 30.0 * 4.5f64.cos(), y_top - 3.0),
                P::new(50.0 + 30.0 * 4.9f64.cos(), y_top - 3.0),
                P::new(50.0 + 30.0 * 4.9f64.cos(), 60.0),
                P::new(0.0, 60.0),
            ])
            .unwrap(),
        };
        let mut lambda = build_lambda(&graph, &cut);
        lambda.retain(|(a, b)| a != b);
        assert_eq!(lambda.len(), 4, "{lambda:?}");
        let none = AdaptiveCut {
            landmark: P::new(50.0, 50.0),
            boundary_point: P::new(50.0, 50.0),
            path: Polyline::open(vec![P::new(50.0, 50.0), P::new(52.0, 50.0)]).unwrap(),
        };
        assert!(build_lambda(&graph, &none).is_empty());
        assert!(matches!(candidates(&graph, &none, &SelectionConfig::default()), Err(Error::EmptyLambda)));
    }

    #[test]
    fn masked_weights_examples() {
        let (w, h) = (100, 100);
        let (feat, props) = ring_arcs(w, h, 30.0, &[0.3, 0.3 + 1.57, 0.3 + 3.14, 0.3 + 4.71]);
        let graph = build_graph_from_proposals(&feat, props, &FeatureConfig::default(), &GraphConfig::default()).unwrap();
        let e = &graph.edges[0];
        let mid = e.path.points[e.path.len() / 2];
        // Through the middle of the path, and a tangency at one of its vertices.
        let through = AdaptiveCut {
            landmark: P::new(50.0, 50.0),
            boundary_point: mid,
            path: Polyline::open(vec![P::new(50.0, 50.0), mid.add(mid.sub(P::new(50.0, 50.0)).scale(0.5))]).unwrap(),
        };
        let view = masked_weights(&graph, &through);
        assert!(view.weight(e.from, e.to).is_infinite());
        let touch = AdaptiveCut {
            landmark: P::new(50.0, 50.0),
            boundary_point: mid,
            path: Polyline::open(vec![P::new(50.0, 50.0), mid]).unwrap(),
        };
        assert!(masked_weights(&graph, &touch).weight(e.from, e.to).is_infinite());
        let far = AdaptiveCut {
            landmark: P::new(50.0, 50.0),
            boundary_point: P::new(50.0, 52.0),
            path: Polyline::open(vec![P::new(50.0, 50.0), P::new(50.0, 52.0)]).unwrap(),
        };
        let view = masked_weights(&graph, &far);
        for e in &graph.edges {
            assert_eq!(view.weight(e.from, e.to), e.weight);
        }
    }
}
