//! Dice metric, synthetic benchmark images and the landmark protocol.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::{compute_edge_features, EdgeFeatures};
use crate::graph::{build_graph_from_proposals, ProposalGraph};
use crate::grid::{GridMask, Point2, Polyline, ScalarField2D};
use crate::proposals::detect_proposals;
use crate::segmenter::{segment, CircularContour};

/// Noise levels of the benchmark.
pub const PROTOCOL_NOISE: [f64; 5] = [0.025, 0.05, 0.075, 0.1, 0.125];

/// `2|a ∩ b| / (|a| + |b|)`, and 1 when both masks are empty.
pub fn dice(a: &GridMask, b: &GridMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::domain("dice of masks with different dimensions"));
    }
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * a.and_count(b) as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Disk { center: [f64; 2], radius: f64 },
    Star { center: [f64; 2], outer: f64, inner: f64, points: usize },
    /// Annular sector whose opening of `opening` radians faces +x.
    CShape { center: [f64; 2], outer: f64, inner: f64, opening: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

fn arc(c: [f64; 2], r: f64, a0: f64, a1: f64) -> impl Iterator<Item = Point2<f64>> {
    let n = ((r * (a1 - a0).abs()).ceil() as usize).max(8);
    (0..=n).map(move |i| {
        let a = a0 + (a1 - a0) * i as f64 / n as f64;
        Point2::new(c[0] + r * a.cos(), c[1] + r * a.sin())
    })
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Disk { .. } => "disk",
            Shape::Star { .. } => "star",
            Shape::CShape { .. } => "c-shape",
            Shape::Polygon { .. } => "polygon",
        }
    }

    pub fn outline(&self) -> Result<Polyline<f64>> {
        let pts: Vec<Point2<f64>> = match self {
            Shape::Disk { center, radius } => {
                let mut v: Vec<_> = arc(*center, *radius, 0.0, TAU).collect();
                v.pop();
                v
            }
            Shape::Star { center, outer, inner, points } => (0..2 * points)
                .map(|k| {
                    let r = if k % 2 == 0 { *outer } else { *inner };
                    let a = -PI / 2.0 + PI * k as f64 / *points as f64;
                    Point2::new(center[0] + r * a.cos(), center[1] + r * a.sin())
                })
                .collect(),
            Shape::CShape { center, outer, inner, opening } => {
                let h = opening / 2.0;
                arc(*center, *outer, h, TAU - h).chain(arc(*center, *inner, TAU - h, h)).collect()
            }
            Shape::Polygon { vertices } => vertices.iter().map(|&v| v.into()).collect(),
        };
        Polyline::closed(pts)
    }

    /// Disk, five-pointed star and C-shape centred in a `size × size` image.
    pub fn standard(size: usize) -> Vec<Shape> {
        let s = size as f64 / 256.0;
        let c = [size as f64 / 2.0 - 0.5, size as f64 / 2.0 - 0.5];
        vec![
            Shape::Disk { center: c, radius: 80.0 * s },
            Shape::Star { center: c, outer: 100.0 * s, inner: 55.0 * s, points: 5 },
            Shape::CShape { center: c, outer: 95.0 * s, inner: 50.0 * s, opening: PI / 3.0 },
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub shape: Shape,
    pub width: usize,
    pub height: usize,
    pub foreground: f64,
    pub background: f64,
    /// Standard deviation of the additive Gaussian noise on the `[0, 1]` intensity scale.
    pub sigma_n: f64,
}

impl SyntheticSpec {
    pub fn new(shape: Shape, size: usize, sigma_n: f64) -> Self {
        SyntheticSpec {
            shape,
            width: size,
            height: size,
            foreground: 1.0,
            background: 0.5,
            sigma_n,
        }
    }

    pub fn name(&self) -> String {
        format!("{}@{}", self.shape.name(), self.sigma_n)
    }
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub image: ScalarField2D<f64>,
    pub gt: GridMask,
}

/// Two-level image of the shape with seeded Gaussian noise, clipped to `[0, 1]`.
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Synthetic> {
    if !(spec.sigma_n.is_finite() && spec.sigma_n >= 0.0) {
        return Err(Error::Config(format!("sigma_n must be non-negative, got {}", spec.sigma_n)));
    }
    let gt = spec.shape.outline()?.rasterize(spec.width, spec.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma_n).map_err(|e| Error::Config(e.to_string()))?;
    let image = ScalarField2D::from_fn(spec.width, spec.height, |x, y| {
        let base = if gt.get(x, y) { spec.foreground } else { spec.background };
        (base + noise.sample(&mut rng)).clamp(0.0, 1.0)
    })?;
    Ok(Synthetic { image, gt })
}

/// Points whose Euclidean disk of radius `r` lies inside the mask.
pub fn erode(mask: &GridMask, r: f64) -> GridMask {
    let ri = r.ceil() as isize;
    let offsets: Vec<(isize, isize)> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= r * r)
        .collect();
    let mut out = GridMask::new(mask.width(), mask.height());
    for (x, y) in mask.iter_set() {
        let keep = offsets
            .iter()
            .all(|&(dx, dy)| mask.get_signed(x as isize + dx, y as isize + dy));
        out.set(x, y, keep);
    }
    out
}

/// `k` seeded uniform grid points of `gt` eroded by `margin`, skipping points of `exclude`.
pub fn scatter_landmarks(
    gt: &GridMask,
    exclude: Option<&GridMask>,
    k: usize,
    margin: f64,
    seed: u64,
) -> Result<Vec<Point2<f64>>> {
    let inner = erode(gt, margin);
    let w = gt.width();
    let inside: Vec<usize> = inner
        .iter_set()
        .map(|(x, y)| y * w + x)
        .filter(|&i| !exclude.is_some_and(|m| m.at(i)))
        .collect();
    if inside.is_empty() {
        return Err(Error::domain("no admissible landmark inside the ground truth"));
    }
    // Uniform rejection sampling over the whole grid; `inside` only bounds the retry count.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let i = rng.random_range(0..gt.width() * gt.height());
        if inner.at(i) && !exclude.is_some_and(|m| m.at(i)) {
            out.push(Point2::grid(i % w, i / w));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ProtocolImage {
    pub name: String,
    pub channels: Vec<ScalarField2D<f64>>,
    pub gt: GridMask,
}

/// Anything that maps one landmark click to a region.
pub trait Segmenter: Sync {
    type Prepared: Sync + Send;

    /// Offline work per image.
    fn prepare(&self, image: &ProtocolImage) -> Result<Self::Prepared>;

    /// Grid points where landmarks must not be placed.
    fn exclusion(&self, _prepared: &Self::Prepared) -> Option<GridMask> {
        None
    }

    fn segment(&self, image: &ProtocolImage, prepared: &Self::Prepared, p: Point2<f64>) -> Result<GridMask>;
}

/// Features, graph construction and the interactive step under one configuration.
#[derive(Clone, Debug, Default)]
pub struct Pipeline {
    pub config: RunConfig,
}

pub struct PreparedImage {
    pub features: EdgeFeatures<f64>,
    pub graph: ProposalGraph<f64>,
}

impl Pipeline {
    pub fn contour(&self, prepared: &PreparedImage, p: Point2<f64>) -> Result<CircularContour<f64>> {
        segment(&prepared.graph, &prepared.features, p, &self.config.selection)
    }
}

impl Segmenter for Pipeline {
    type Prepared = PreparedImage;

    fn prepare(&self, image: &ProtocolImage) -> Result<PreparedImage> {
        let features = compute_edge_features(&image.channels, &self.config.features).map_err(|e| e.at("features"))?;
        let proposals = detect_proposals(&features, &self.config.proposals).map_err(|e| e.at("proposals"))?;
        let graph = build_graph_from_proposals(&features, proposals, &self.config.features, &self.config.graph)
            .map_err(|e| e.at("graph"))?;
        Ok(PreparedImage { features, graph })
    }

    fn exclusion(&self, prepared: &PreparedImage) -> Option<GridMask> {
        Some(prepared.graph.occupancy())
    }

    fn segment(&self, image: &ProtocolImage, prepared: &PreparedImage, p: Point2<f64>) -> Result<GridMask> {
        let c = self.contour(prepared, p)?;
        c.contour.rasterize(image.gt.width(), image.gt.height())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub landmark: Point2<f64>,
    pub dice: f64,
    /// Failure message; the run then scores a Dice of 0.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub image: String,
    pub runs: usize,
    pub failures: usize,
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub records: Vec<RunRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkStrategy {
    pub per_image: usize,
    /// Erosion radius of the ground truth before sampling.
    pub margin: f64,
    pub seed: u64,
}

impl Default for LandmarkStrategy {
    fn default() -> Self {
        LandmarkStrategy { per_image: 10, margin: 3.0, seed: 0 }
    }
}

fn image_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Segments every image from scattered interior landmarks and aggregates Dice per image.
pub fn run_protocol<S: Segmenter>(
    images: &[ProtocolImage],
    strategy: &LandmarkStrategy,
    segmenter: &S,
) -> Result<Vec<ProtocolRow>> {
    if images.is_empty() {
        return Err(Error::domain("the protocol needs at least one image"));
    }
    let prepared: Vec<S::Prepared> = images
        .par_iter()
        .map(|img| segmenter.prepare(img).map_err(|e| e.at("prepare")))
        .collect::<Result<_>>()?;
    let landmarks: Vec<Vec<Point2<f64>>> = images
        .iter()
        .zip(&prepared)
        .enumerate()
        .map(|(k, (img, prep))| {
            let ex = segmenter.exclusion(prep);
            scatter_landmarks(&img.gt, ex.as_ref(), strategy.per_image, strategy.margin, image_seed(strategy.seed, k))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, Point2<f64>)> = landmarks
        .iter()
        .enumerate()
        .flat_map(|(k, ps)| ps.iter().map(move |&p| (k, p)))
        .collect();
    let records: Vec<(usize, RunRecord)> = jobs
        .par_iter()
        .map(|&(k, p)| {
            let img = &images[k];
            let rec = match segmenter.segment(img, &prepared[k], p).and_then(|m| dice(&m, &img.gt)) {
                Ok(d) => RunRecord { landmark: p, dice: d, failure: None },
                Err(e) => RunRecord { landmark: p, dice: 0.0, failure: Some(e.to_string()) },
            };
            (k, rec)
        })
        .collect();
    Ok(images
        .iter()
        .enumerate()
        .map(|(k, img)| {
            let recs: Vec<RunRecord> = records.iter().filter(|(i, _)| *i == k).map(|(_, r)| r.clone()).collect();
            let ds: Vec<f64> = recs.iter().map(|r| r.dice).collect();
            let (mean, std) = mean_std(&ds);
            ProtocolRow {
                image: img.name.clone(),
                runs: recs.len(),
                failures: recs.iter().filter(|r| r.failure.is_some()).count(),
                mean,
                std,
                records: recs,
            }
        })
        .collect())
}

/// Synthetic protocol images; the noise of image `k` is seeded from `seed` and `k`.
pub fn synthetic_images(specs: &[SyntheticSpec], seed: u64) -> Result<Vec<ProtocolImage>> {
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let s = make_synthetic(spec, image_seed(seed, k))?;
            Ok(ProtocolImage { name: spec.name(), channels: vec![s.image], gt: s.gt })
        })
        .collect()
}

/// Standard shapes at every noise level, shape-major.
pub fn standard_suite(size: usize, noise: &[f64]) -> Vec<SyntheticSpec> {
    Shape::standard(size)
        .into_iter()
        .flat_map(|shape| noise.iter().map(move |&s| SyntheticSpec::new(shape.clone(), size, s)))
        .collect()
}

/// `image,runs,failures,mean_dice,std_dice` rows.
pub fn write_csv<W: Write>(rows: &[ProtocolRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["image", "runs", "failures", "mean_dice", "std_dice"])
        .map_err(|e| Error::domain(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.image.clone(),
            r.runs.to_string(),
            r.failures.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.std),
        ])
        .map_err(|e| Error::domain(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(w: usize, x0: usize, y0: usize, s: usize) -> GridMask {
        let mut m = GridMask::new(w, w);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = square(30, 0, 0, 10);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &square(30, 15, 15, 10)).unwrap(), 0.0);
        assert_eq!(dice(&a, &square(30, 5, 0, 10)).unwrap(), 0.5);
        assert_eq!(dice(&GridMask::new(4, 4), &GridMask::new(4, 4)).unwrap(), 1.0);
        assert!(dice(&GridMask::new(4, 4), &GridMask::new(5, 4)).is_err());
    }

    proptest! {
        #[test]
        fn dice_symmetric_bounded_translation_invariant(
            a in (0usize..10, 0usize..10, 1usize..10),
            b in (0usize..10, 0usize..10, 1usize..10),
            t in (0usize..8, 0usize..8),
        ) {
            let (ma, mb) = (square(40, a.0, a.1, a.2), square(40, b.0, b.1, b.2));
            let d = dice(&ma, &mb).unwrap();
            prop_assert_eq!(d, dice(&mb, &ma).unwrap());
            prop_assert!((0.0..=1.0).contains(&d));
            let (sa, sb) = (square(40, a.0 + t.0, a.1 + t.1, a.2), square(40, b.0 + t.0, b.1 + t.1, b.2));
            prop_assert_eq!(d, dice(&sa, &sb).unwrap());
        }
    }

    #[test]
    fn noiseless_disk_is_two_level() {
        let spec = SyntheticSpec::new(Shape::standard(64)[0].clone(), 64, 0.0);
        let s = make_synthetic(&spec, 3).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(s.image.get(x, y), if s.gt.get(x, y) { 1.0 } else { 0.5 });
            }
        }
        let area = s.gt.count() as f64;
        let want = PI * 20.0 * 20.0;
        assert!((area - want).abs() / want < 0.02, "{area}");
    }

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticSpec::new(Shape::standard(64)[1].clone(), 64, 0.1);
        let a = make_synthetic(&spec, 9).unwrap();
        let b = make_synthetic(&spec, 9).unwrap();
        let c = make_synthetic(&spec, 10).unwrap();
        assert_eq!(a.image, b.image);
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn noise_statistics() {
        // Mid-grey background with a tiny shape keeps clipping negligible at this sigma.
        let spec = SyntheticSpec {
            shape: Shape::Disk { center: [5.0, 5.0], radius: 2.0 },
            width: 200,
            height: 200,
            foreground: 1.0,
            background: 0.5,
            sigma_n: 0.05,
        };
        let s = make_synthetic(&spec, 1).unwrap();
        let bg: Vec<f64> = (0..s.image.len())
            .filter(|&i| !s.gt.at(i))
            .map(|i| s.image.at(i) - 0.5)
            .collect();
        let (m, sd) = mean_std(&bg);
        assert!(m.abs() < 0.005, "{m}");
        assert!((sd - 0.05).abs() / 0.05 < 0.05, "{sd}");
    }

    #[test]
    fn shapes_are_simple_and_sized() {
        for shape in Shape::standard(256) {
            let o = shape.outline().unwrap();
            assert!(o.is_simple(), "{}", shape.name());
            let area = o.rasterize(256, 256).unwrap().count();
            assert!(area > 5_000 && area < 40_000, "{} {area}", shape.name());
        }
        let c = &Shape::standard(256)[2];
        let m = c.outline().unwrap().rasterize(256, 256).unwrap();
        // The opening faces +x; the centre is outside, the left arm inside.
        assert!(!m.get(128, 128) && !m.get(200, 128) && m.get(128 - 70, 128));
    }

    #[test]
    fn erosion_and_landmarks() {
        let m = square(40, 10, 10, 15);
        assert_eq!(erode(&m, 3.0).count(), 81);
        let mut ex = GridMask::new(40, 40);
        for y in 0..40 {
            ex.set(17, y, true);
        }
        let ps = scatter_landmarks(&m, Some(&ex), 50, 3.0, 4).unwrap();
        assert_eq!(ps.len(), 50);
        for p in &ps {
            assert!((13.0..=21.0).contains(&p.x) && (13.0..=21.0).contains(&p.y) && p.x != 17.0);
        }
        assert_eq!(ps, scatter_landmarks(&m, Some(&ex), 50, 3.0, 4).unwrap());
        assert!(scatter_landmarks(&square(40, 0, 0, 5), None, 1, 3.0, 0).is_err());
    }

    struct Oracle;
    impl Segmenter for Oracle {
        type Prepared = ();
        fn prepare(&self, _: &ProtocolImage) -> Result<()> {
            Ok(())
        }
        fn segment(&self, img: &ProtocolImage, _: &(), _: Point2<f64>) -> Result<GridMask> {
            Ok(img.gt.clone())
        }
    }

    struct Failing;
    impl Segmenter for Failing {
        type Prepared = ();
        fn prepare(&self, _: &ProtocolImage) -> Result<()> {
            Ok(())
        }
        fn segment(&self, _: &ProtocolImage, _: &(), _: Point2<f64>) -> Result<GridMask> {
            Err(Error::NoAdmissibleContour)
        }
    }

    #[test]
    fn protocol_with_stubs() {
        let imgs = synthetic_images(&standard_suite(64, &[0.05]), 1).unwrap();
        let rows = run_protocol(&imgs, &LandmarkStrategy::default(), &Oracle).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!((r.runs, r.failures, r.mean, r.std), (10, 0, 1.0, 0.0));
        }
        let one = LandmarkStrategy { per_image: 1, ..Default::default() };
        assert!(run_protocol(&imgs, &one, &Failing).unwrap().iter().all(|r| r.std == 0.0 && r.failures == 1));
        assert!(run_protocol(&[], &one, &Oracle).is_err());
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("image,runs,failures,mean_dice,std_dice\ndisk@0.05,10,0,1.000000,0.000000"));
    }

    #[test]
    fn pipeline_segments_a_clean_disk() {
        let spec = SyntheticSpec::new(Shape::standard(128)[0].clone(), 128, 0.025);
        let imgs = synthetic_images(&[spec], 2).unwrap();
        let strategy = LandmarkStrategy { per_image: 3, ..Default::default() };
        let rows = run_protocol(&imgs, &strategy, &Pipeline::default()).unwrap();
        assert!(rows[0].mean > 0.95, "{:?}", rows[0]);
        assert_eq!(rows, run_protocol(&imgs, &strategy, &Pipeline::default()).unwrap());
    }
}
