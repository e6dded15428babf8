use crowngen_autodiff::TensorError;
use crowngen_core::GeomError;
use crowngen_net::NetError;
use thiserror::Error;

/// Pipeline failure, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Missing or malformed inputs and configuration (exit 2).
    #[error("{0}")]
    Input(String),
    /// NaN or infinite loss during training (exit 3).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A mesh without a usable boundary loop (exit 4).
    #[error("topology error: {0}")]
    Topology(String),
    /// Anything else (exit 1).
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Topology(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    /// Prefixes the message with a case id, keeping the exit class.
    pub fn in_case(self, id: &str) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("case {id}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("case {id}: {m}")),
            CliError::Topology(m) => CliError::Topology(format!("case {id}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("case {id}: {m}")),
        }
    }

    pub fn missing(what: &str, path: &std::path::Path) -> Self {
        CliError::Input(format!("missing {what}: {}", path.display()))
    }
}

impl From<GeomError> for CliError {
    fn from(e: GeomError) -> Self {
        match e {
            GeomError::Topology(_) | GeomError::NoBoundary => CliError::Topology(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Geometry(g) => g.into(),
            TensorError::Shape(_) | TensorError::Contract(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            NetError::Geometry(g) => g.into(),
            NetError::Tensor(t) => t.into(),
            NetError::Config(_) | NetError::Input(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("JSON: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
