//! Crown shell completion network.
//!
//! The encoder turns an input cloud into point proxies (FPS centers with
//! max-pooled local features) and refines them with geometry-aware
//! transformer blocks: self-attention fused with a max-aggregated kNN
//! feature graph over the proxy centers. A query generator predicts coarse
//! crown points from the pooled global feature, decoder blocks attend to the
//! encoder output, and three chained folding MLPs deform a fixed 2-D grid
//! around every coarse point into the dense output.

mod config;
mod error;
pub mod layers;
mod loss;
mod model;
mod train;

pub use config::ModelConfig;
pub use error::{NetError, Result};
pub use loss::{completion_loss, coarse_target};
pub use model::{cloud_to_tensor, tensor_to_cloud, CrownNet, Forward, Prediction, ProxyGroups};
pub use train::{evaluate, train, EpochLog, TrainConfig, TrainLog, TrainOutcome};
