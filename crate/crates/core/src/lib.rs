//! Interactive closed-contour extraction from a single landmark click.
//!
//! The pipeline has an offline half and an interactive half:
//!
//! 1. [`features`] turns an image into edge appearance features and the two potentials used by
//!    the Eikonal solvers.
//! 2. [`proposals`] thins, links and splits edges into junction-free boundary proposals.
//! 3. [`graph`] grows a geodesic tube around every proposal, links adjacent proposals with
//!    connection paths and weights each directed edge.
//! 4. [`segmenter`] computes an adaptive cut from the landmark to the image border, masks every
//!    edge whose connection path crosses it, and assembles the cheapest closed contour that
//!    crosses the cut once.
//!
//! [`eikonal`] holds the isotropic fast marching solver, [`lifted`] the orientation-lifted
//! curvature-penalised variants, and [`eval`] the Dice metric and the synthetic benchmark.
//!
//! Every numeric type is generic over [`Real`]; the aliases below fix it to `f64`.

pub mod config;
pub mod eikonal;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod grid;
pub mod io;
pub mod lifted;
pub mod proposals;
pub mod scalar;
pub mod segmenter;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use grid::{GridMask, Point2, Polyline, ScalarField2D};
pub use scalar::Real;

pub type Point = grid::Point2<f64>;
pub type Field = grid::ScalarField2D<f64>;
pub type Curve = grid::Polyline<f64>;
pub type Features = features::EdgeFeatures<f64>;
pub type Proposal = proposals::BoundaryProposal<f64>;
pub type DistanceMap = eikonal::DistanceMap<f64>;
pub type Graph = graph::ProposalGraph<f64>;
pub type Edge = graph::GraphEdge<f64>;
pub type Cut = segmenter::AdaptiveCut<f64>;
pub type Contour = segmenter::CircularContour<f64>;
