//! `geocut`: offline graph construction, interactive segmentation and the synthetic benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use geocut_core::eval::{
    make_synthetic, run_protocol, standard_suite, synthetic_images, write_csv, LandmarkStrategy, Pipeline,
    ProtocolImage, Shape, SyntheticSpec, PROTOCOL_NOISE,
};
use geocut_core::features::compute_edge_features;
use geocut_core::graph::{build_graph, EnergyKind};
use geocut_core::io::{load_image, save_gray, save_mask, save_overlay, ContourFile, GraphCache, Overlay};
use geocut_core::lifted::MetricKind;
use geocut_core::segmenter::segment_timed;
use geocut_core::{Error, GridMask, Point, Result, RunConfig};

#[derive(Parser)]
#[command(name = "geocut", version, about = "Closed-contour extraction from a single landmark click")]
struct Cli {
    #[command(flatten)]
    opts: Options,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Options {
    /// JSON or TOML run configuration; flags override its values.
    #[arg(long, global = true, env = "GEOCUT_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "GEOCUT_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for graph construction and evaluation.
    #[arg(long, global = true, env = "GEOCUT_WORKERS")]
    workers: Option<usize>,
    /// isotropic, rs or elastica.
    #[arg(long, global = true, env = "GEOCUT_METRIC")]
    metric: Option<MetricKind>,
    /// c1 or c2.
    #[arg(long, global = true, env = "GEOCUT_ENERGY")]
    energy: Option<EnergyKind>,
    #[arg(long, global = true, env = "GEOCUT_ZETA", allow_negative_numbers = true)]
    zeta: Option<f64>,
    #[arg(long, global = true, env = "GEOCUT_MU1", allow_negative_numbers = true)]
    mu1: Option<f64>,
    #[arg(long, global = true, env = "GEOCUT_MU2", allow_negative_numbers = true)]
    mu2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the proposal graph of an image and write the graph cache.
    BuildGraph {
        image: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Segment an image from one landmark using a prebuilt graph cache.
    Segment {
        image: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Landmark as "x,y" in pixel coordinates.
        #[arg(long, env = "GEOCUT_LANDMARK", allow_hyphen_values = true)]
        landmark: Landmark,
        /// Contour JSON output.
        #[arg(long, short)]
        out: PathBuf,
        /// Overlay raster; defaults to the contour path with a `.png` extension.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Run the landmark protocol and print a Dice table.
    Eval {
        /// JSON list of synthetic specs.
        #[arg(long, conflicts_with = "image")]
        spec: Option<PathBuf>,
        /// Image to evaluate; pair each with a --gt mask in the same order.
        #[arg(long)]
        image: Vec<PathBuf>,
        #[arg(long)]
        gt: Vec<PathBuf>,
        /// Landmarks per image.
        #[arg(long, default_value_t = 10)]
        landmarks: usize,
        /// Side of the built-in synthetic images.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a synthetic image and its ground-truth mask.
    Synth {
        /// JSON synthetic spec; replaces --shape, --size and --sigma.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// disk, star or c-shape.
        #[arg(long, default_value = "disk")]
        shape: String,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.025)]
        sigma: f64,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_gt: PathBuf,
    },
}

#[derive(Clone, Copy, Debug)]
struct Landmark(Point);

impl FromStr for Landmark {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (x, y) = s.split_once(',').ok_or("expected \"x,y\"")?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Landmark(Point::new(parse(x)?, parse(y)?)))
    }
}

fn run_config(o: &Options) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = o.metric {
        cfg.graph.metric = m;
    }
    if let Some(e) = o.energy {
        cfg.graph.energy = e;
    }
    if let Some(z) = o.zeta {
        cfg.graph.zeta = z;
    }
    if let Some(v) = o.mu1 {
        cfg.selection.mu1 = v;
    }
    if let Some(v) = o.mu2 {
        cfg.selection.mu2 = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidLandmark { .. } => 3,
        Error::EmptyLambda | Error::NoAdmissibleContour | Error::BoundaryUnreachable | Error::BacktrackStalled { .. } => 4,
        _ => 2,
    }
}

fn cmd_build_graph(cfg: &RunConfig, image: &Path, out: &Path) -> Result<()> {
    let t = Instant::now();
    let channels = load_image(image)?;
    let (_, graph) = build_graph(&channels, &cfg.features, &cfg.proposals, &cfg.graph)?;
    let (nodes, edges, loops) = (graph.node_count(), graph.edges.len(), graph.loops.len());
    GraphCache::new(cfg.features.clone(), cfg.proposals.clone(), graph).save(out)?;
    println!(
        "nodes {nodes} edges {edges} loops {loops} in {:.1} ms -> {}",
        t.elapsed().as_secs_f64() * 1e3,
        out.display()
    );
    Ok(())
}

fn cmd_segment(cfg: &RunConfig, image: &Path, graph: &Path, p: Point, out: &Path, overlay: Option<&Path>) -> Result<()> {
    let cache = GraphCache::load(graph)?;
    let channels = load_image(image)?;
    let (w, h) = (channels[0].width(), channels[0].height());
    if (w, h) != (cache.graph.width, cache.graph.height) {
        return Err(Error::Domain(format!(
            "image is {w}x{h} but the graph cache was built for {}x{}",
            cache.graph.width, cache.graph.height
        )));
    }
    let t = Instant::now();
    let feat = compute_edge_features(&channels, &cache.features)?;
    let features_ms = t.elapsed().as_secs_f64() * 1e3;
    let (contour, timings) = segment_timed(&cache.graph, &feat, p, &cfg.selection)?;
    ContourFile::from(&contour).save(out)?;
    let overlay_path = overlay.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("png"));
    let layers = Overlay {
        proposals: cache.graph.proposals.iter().map(|q| &q.curve).collect(),
        cut: Some(&contour.cut.path),
        contour: Some(&contour.contour),
        landmark: Some(p),
    };
    save_overlay(&channels, &layers, &overlay_path)?;
    println!(
        "energy {:.6} score {:.6} length {:.2} nodes {:?}",
        contour.energy, contour.score, contour.length, contour.nodes
    );
    println!(
        "features {features_ms:.1} ms, cut {:.1} ms, grouping {:.1} ms, selection {:.1} ms",
        timings.cut_ms, timings.grouping_ms, timings.selection_ms
    );
    Ok(())
}

fn load_mask(path: &Path) -> Result<GridMask> {
    let ch = load_image(path)?;
    let f = &ch[0];
    let bits = (0..f.len()).map(|i| f.at(i) > 0.5).collect();
    GridMask::from_bits(f.width(), f.height(), bits)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cfg: &RunConfig,
    seed: u64,
    spec: Option<&Path>,
    images: &[PathBuf],
    gts: &[PathBuf],
    landmarks: usize,
    size: usize,
    csv_out: Option<&Path>,
    json_out: Option<&Path>,
) -> Result<()> {
    let protocol_images: Vec<ProtocolImage> = if let Some(spec) = spec {
        let specs: Vec<SyntheticSpec> = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
        synthetic_images(&specs, seed)?
    } else if !images.is_empty() || !gts.is_empty() {
        if images.len() != gts.len() {
            return Err(Error::Domain(format!(
                "{} images but {} ground-truth masks; pass one --gt per --image",
                images.len(),
                gts.len()
            )));
        }
        images
            .iter()
            .zip(gts)
            .map(|(i, g)| {
                let channels = load_image(i)?;
                let gt = load_mask(g)?;
                if (gt.width(), gt.height()) != (channels[0].width(), channels[0].height()) {
                    return Err(Error::Domain(format!("{} and {} differ in size", i.display(), g.display())));
                }
                Ok(ProtocolImage { name: file_stem(i), channels, gt })
            })
            .collect::<Result<_>>()?
    } else {
        synthetic_images(&standard_suite(size, &PROTOCOL_NOISE), seed)?
    };
    let strategy = LandmarkStrategy { per_image: landmarks, margin: 3.0, seed };
    let rows = run_protocol(&protocol_images, &strategy, &Pipeline { config: cfg.clone() })?;
    write_csv(&rows, std::io::stdout().lock())?;
    if let Some(p) = csv_out {
        write_csv(&rows, std::fs::File::create(p)?)?;
    }
    if let Some(p) = json_out {
        std::fs::write(p, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}

fn cmd_synth(seed: u64, spec: Option<&Path>, shape: &str, size: usize, sigma: f64, out_image: &Path, out_gt: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => {
            let shape = Shape::standard(size)
                .into_iter()
                .find(|s| s.name() == shape)
                .ok_or_else(|| Error::Config(format!("unknown shape `{shape}`, expected disk, star or c-shape")))?;
            SyntheticSpec::new(shape, size, sigma)
        }
    };
    let s = make_synthetic(&spec, seed)?;
    save_gray(&s.image, out_image)?;
    save_mask(&s.gt, out_gt)?;
    println!("{} {}x{} -> {}, {}", spec.name(), spec.width, spec.height, out_image.display(), out_gt.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = run_config(&cli.opts)?;
    if let Some(n) = cli.opts.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.cmd {
        Command::BuildGraph { image, out } => cmd_build_graph(&cfg, image, out),
        Command::Segment { image, graph, landmark, out, overlay } => {
            cmd_segment(&cfg, image, graph, landmark.0, out, overlay.as_deref())
        }
        Command::Eval { spec, image, gt, landmarks, size, csv, json } => cmd_eval(
            &cfg,
            cli.opts.seed,
            spec.as_deref(),
            image,
            gt,
            *landmarks,
            *size,
            csv.as_deref(),
            json.as_deref(),
        ),
        Command::Synth { spec, shape, size, sigma, out_image, out_gt } => {
            cmd_synth(cli.opts.seed, spec.as_deref(), shape, *size, *sigma, out_image, out_gt)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("geocut: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
