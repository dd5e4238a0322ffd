use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed record in {file} at {location}: {message}")]
    MalformedRecord {
        file: String,
        location: String,
        message: String,
    },

    #[error("broken {kind} reference: {id}")]
    BrokenReference { kind: &'static str, id: i64 },

    #[error("unsupported camera model: {0}")]
    UnsupportedCameraModel(String),

    #[error("invalid camera {camera_id}: {message}")]
    InvalidCamera { camera_id: u32, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unknown image id {0}")]
    UnknownImage(u32),

    #[error("sparse depth map has no valued pixels")]
    EmptySparseDepth,

    #[error("degenerate normalization range [{min}, {max}]")]
    DegenerateRange { min: f64, max: f64 },

    #[error("k = {k} requires at least {k} valued pixels, found {available}")]
    TooFewPoints { k: usize, available: usize },

    #[error("no prediction for view {0}")]
    MissingPrediction(String),

    #[error("no ground-truth depth registered for view {0}")]
    NoGroundTruth(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("depth maps mix scale domains")]
    DomainMismatch,

    #[error("invalid provider parameters: {0}")]
    InvalidProvider(String),

    #[error("need at least {needed} samples, found {available}")]
    TooFewSamples { needed: usize, available: usize },

    #[error("degenerate samples: all predicted depths are equal")]
    DegenerateSamples,

    #[error("no candidate model with positive scale")]
    NoPositiveScaleModel,

    #[error("invalid alignment configuration: {0}")]
    InvalidAlignment(String),

    #[error("volume has no observed voxels")]
    EmptyVolume,

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("need at least {needed} views, found {available}")]
    TooFewViews { needed: usize, available: usize },

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("depth maps share no jointly valid pixel")]
    NoOverlap,

    #[error("mesh has no triangles")]
    EmptyMesh,

    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{stage} failed{}: {source}", view.as_ref().map(|v| format!(" for view {v}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        view: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, view: Option<&str>) -> Self {
        Error::Stage {
            stage,
            view: view.map(str::to_owned),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage attribution.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
