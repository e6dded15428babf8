//! Run configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Command-line flags override the file.
//!
//! ```toml
//! data_root = "data"
//! out_dir = "runs/demo"
//! seed = 7
//! arm = "with-margin"          # or "baseline"
//!
//! [budgets]
//! context = 10240
//! margin = 1000
//! shell = 1568
//! die = 1024
//!
//! [model]
//! d_model = 128
//!
//! [train]
//! epochs = 100
//! batch_size = 16
//!
//! recon_units = "millimetres"  # or "normalized"
//!
//! [bpa]
//! radii = [0.6, 0.7, 0.8, 0.9, 1.0]
//! ```

use std::path::{Path, PathBuf};

use crowngen_core::context::{Arm, Budgets, DEFAULT_GINGIVA_BAND_MM};
use crowngen_core::marginline::DEFAULT_MARGIN_SAMPLES;
use crowngen_core::recon::BpaConfig;
use crowngen_net::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Coordinate frame for surface reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconUnits {
    /// World frame of the case; radii are millimetres.
    Millimetres,
    /// Network output frame.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset written by `synth` (case directories plus `manifest.json`).
    pub data_root: PathBuf,
    /// Run directory; each arm writes below `<out_dir>/<arm>/`.
    pub out_dir: PathBuf,
    pub seed: u64,
    pub arm: Arm,
    /// Case-id glob restricting per-case stages.
    pub cases: Option<String>,
    pub gingiva_band_mm: f64,
    /// Neighbors for normal estimation before ball pivoting.
    pub normal_k: usize,
    /// Points along extracted and ground-truth margin lines.
    pub margin_samples: usize,
    pub budgets: Budgets,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bpa: BpaConfig,
    /// Frame whose units the ball radii are given in.
    pub recon_units: ReconUnits,
    /// Case count for `synth`.
    pub n_cases: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            arm: Arm::WithMargin,
            cases: None,
            gingiva_band_mm: DEFAULT_GINGIVA_BAND_MM,
            normal_k: 12,
            margin_samples: DEFAULT_MARGIN_SAMPLES,
            budgets: Budgets::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bpa: BpaConfig::default(),
            recon_units: ReconUnits::Millimetres,
            n_cases: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::missing("config file", path))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.bpa.validate()?;
        if self.normal_k < 3 {
            return Err(CliError::Input(format!("normal_k must be at least 3, got {}", self.normal_k)));
        }
        if self.margin_samples < 4 {
            return Err(CliError::Input(format!("margin_samples must be at least 4, got {}", self.margin_samples)));
        }
        if !(self.gingiva_band_mm >= 0.0) {
            return Err(CliError::Input(format!("gingiva_band_mm must be non-negative, got {}", self.gingiva_band_mm)));
        }
        if let Some(g) = &self.cases {
            glob::Pattern::new(g).map_err(|e| CliError::Input(format!("--cases {g:?}: {e}")))?;
        }
        Ok(())
    }

    /// `<out_dir>/<arm>`.
    pub fn arm_dir(&self) -> PathBuf {
        self.out_dir.join(self.arm.name())
    }
}
