use crowngen_autodiff::TensorError;
use crowngen_core::GeomError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

pub type Result<T> = std::result::Result<T, NetError>;
