use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The landmark cannot seed an adaptive cut (outside the image or on a proposal).
    #[error("invalid landmark ({x}, {y}): {reason}")]
    InvalidLandmark { x: f64, y: f64, reason: String },

    #[error("no domain-boundary point was reached from the landmark")]
    BoundaryUnreachable,

    #[error("geodesic backtracking stalled at ({x}, {y})")]
    BacktrackStalled { x: f64, y: f64 },

    /// No connection path crosses the adaptive cut exactly once.
    #[error("no connection path crosses the adaptive cut")]
    EmptyLambda,

    #[error("no admissible closed contour encloses the landmark")]
    NoAdmissibleContour,

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strips stage labels and returns the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
