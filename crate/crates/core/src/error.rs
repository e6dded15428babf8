use std::path::PathBuf;

/// Errors raised by the geometry, metric and reconstruction kernels.
#[derive(Debug, thiserror::Error)]
pub enum GeomError {
    #[error("size error: {0}")]
    Size(String),

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("mesh has no boundary edges")]
    NoBoundary,

    #[error("topology error: {0}")]
    Topology(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("PLY parse error in {path}: {msg}")]
    Ply { path: String, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GeomError>;

impl GeomError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GeomError::Io {
            path: path.into(),
            source,
        }
    }
}
