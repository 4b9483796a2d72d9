//! Image loading, raster and overlay output, the graph cache and contour files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::graph::ProposalGraph;
use crate::grid::{GridMask, Point2, Polyline, ScalarField2D};
use crate::proposals::ProposalConfig;
use crate::segmenter::CircularContour;

/// Format tag of graph cache files.
pub const GRAPH_CACHE_FORMAT: &str = "geocut-graph/1";

/// Decodes an image into channels scaled to `[0, 1]`: one for grey images, three otherwise.
pub fn decode_image(img: DynamicImage) -> Result<Vec<ScalarField2D<f64>>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::domain("empty image"));
    }
    if img.color().has_color() {
        let rgb = img.into_rgb32f();
        (0..3)
            .map(|c| ScalarField2D::from_fn(w, h, |x, y| rgb.get_pixel(x as u32, y as u32)[c] as f64))
            .collect()
    } else {
        let g = img.to_luma32f();
        Ok(vec![ScalarField2D::from_fn(w, h, |x, y| g.get_pixel(x as u32, y as u32)[0] as f64)?])
    }
}

pub fn decode_image_bytes(bytes: &[u8]) -> Result<Vec<ScalarField2D<f64>>> {
    let img = ImageReader::new(std::io::Cursor::new(bytes)).with_guessed_format()?.decode()?;
    decode_image(img)
}

/// PNG, PGM or PPM, by content.
pub fn load_image(path: &Path) -> Result<Vec<ScalarField2D<f64>>> {
    decode_image(ImageReader::open(path)?.with_guessed_format()?.decode()?)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a field clipped to `[0, 1]` as an 8-bit grey raster; the format follows the extension.
pub fn save_gray(field: &ScalarField2D<f64>, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(field.width() as u32, field.height() as u32, |x, y| {
        image::Luma([to_u8(field.get(x as usize, y as usize))])
    });
    img.save(path)?;
    Ok(())
}

pub fn save_mask(mask: &GridMask, path: &Path) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

fn plot(img: &mut RgbImage, p: Point2<f64>, c: Rgb<u8>) {
    let (x, y) = (p.x.round(), p.y.round());
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw(img: &mut RgbImage, line: &Polyline<f64>, c: Rgb<u8>) {
    for (a, b) in line.segments() {
        let n = (a.dist(b) * 4.0).ceil().max(1.0) as usize;
        for i in 0..=n {
            plot(img, a.add(b.sub(a).scale(i as f64 / n as f64)), c);
        }
    }
    if line.len() == 1 {
        plot(img, line.first(), c);
    }
}

/// Layers drawn over the image, back to front.
#[derive(Default)]
pub struct Overlay<'a> {
    pub proposals: Vec<&'a Polyline<f64>>,
    pub cut: Option<&'a Polyline<f64>>,
    pub contour: Option<&'a Polyline<f64>>,
    pub landmark: Option<Point2<f64>>,
}

pub fn render_overlay(channels: &[ScalarField2D<f64>], overlay: &Overlay) -> Result<RgbImage> {
    let base = channels.first().ok_or_else(|| Error::domain("no image channels"))?;
    let (w, h) = (base.width(), base.height());
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let v = |c: usize| to_u8(channels[c.min(channels.len() - 1)].get(x, y));
        Rgb([v(0), v(1), v(2)])
    });
    for p in &overlay.proposals {
        draw(&mut img, p, Rgb([40, 140, 255]));
    }
    if let Some(c) = overlay.cut {
        draw(&mut img, c, Rgb([255, 200, 0]));
    }
    if let Some(c) = overlay.contour {
        draw(&mut img, c, Rgb([255, 30, 30]));
    }
    if let Some(p) = overlay.landmark {
        for dy in -1..=1 {
            for dx in -1..=1 {
                plot(&mut img, Point2::new(p.x + dx as f64, p.y + dy as f64), Rgb([0, 255, 0]));
            }
        }
    }
    Ok(img)
}

pub fn save_overlay(channels: &[ScalarField2D<f64>], overlay: &Overlay, path: &Path) -> Result<()> {
    render_overlay(channels, overlay)?.save(path)?;
    Ok(())
}

/// Everything the interactive step needs besides the image itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphCache {
    pub format: String,
    pub features: FeatureConfig,
    pub proposals: ProposalConfig,
    pub graph: ProposalGraph<f64>,
}

impl GraphCache {
    pub fn new(features: FeatureConfig, proposals: ProposalConfig, graph: ProposalGraph<f64>) -> Self {
        GraphCache {
            format: GRAPH_CACHE_FORMAT.into(),
            features,
            proposals,
            graph,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::checked(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::checked(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    fn checked(mut cache: GraphCache) -> Result<Self> {
        if cache.format != GRAPH_CACHE_FORMAT {
            return Err(Error::domain(format!(
                "unsupported graph cache format {:?}, expected {GRAPH_CACHE_FORMAT:?}",
                cache.format
            )));
        }
        cache.features.validate()?;
        cache.proposals.validate()?;
        cache.graph.config.validate()?;
        cache.graph.restore()?;
        Ok(cache)
    }
}

/// Serialised result of one interactive step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourFile {
    /// Closed polygon; the last vertex joins the first.
    pub polygon: Vec<Point2<f64>>,
    pub landmark: Point2<f64>,
    pub cut: Vec<Point2<f64>>,
    pub energy: f64,
    pub score: f64,
    pub length: f64,
    pub node_ids: Vec<usize>,
    pub links: Vec<(usize, usize)>,
}

impl From<&CircularContour<f64>> for ContourFile {
    fn from(c: &CircularContour<f64>) -> Self {
        ContourFile {
            polygon: c.contour.points.clone(),
            landmark: c.cut.landmark,
            cut: c.cut.path.points.clone(),
            energy: c.energy,
            score: c.score,
            length: c.length,
            node_ids: c.nodes.clone(),
            links: c.links.clone(),
        }
    }
}

impl ContourFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }
}
