use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

/// Network dimensions. `n_out = n_queries · fold_grid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_proxies: usize,
    pub knn_k: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub n_queries: usize,
    /// Grid points folded per query.
    pub fold_grid: usize,
    pub fold_stages: usize,
    /// Later folding stages refine the previous offsets (`prev + mlp`)
    /// instead of replacing them.
    pub fold_residual: bool,
    pub ffn_hidden: usize,
    pub fold_hidden: usize,
    /// Width of the first layer of the per-point proxy MLP.
    pub proxy_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_proxies: 128,
            knn_k: 16,
            d_model: 128,
            heads: 4,
            encoder_blocks: 3,
            decoder_blocks: 3,
            n_queries: 49,
            fold_grid: 32,
            fold_stages: 3,
            fold_residual: true,
            ffn_hidden: 256,
            fold_hidden: 128,
            proxy_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn n_out(&self) -> usize {
        self.n_queries * self.fold_grid
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_proxies", self.n_proxies),
            ("knn_k", self.knn_k),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("n_queries", self.n_queries),
            ("fold_grid", self.fold_grid),
            ("fold_stages", self.fold_stages),
            ("ffn_hidden", self.ffn_hidden),
            ("fold_hidden", self.fold_hidden),
            ("proxy_hidden", self.proxy_hidden),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(NetError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(NetError::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.knn_k > self.n_proxies {
            return Err(NetError::Config(format!(
                "knn_k {} exceeds n_proxies {}",
                self.knn_k, self.n_proxies
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.n_out(), 1568);
        assert_eq!(c.head_dim(), 32);
    }

    #[test]
    fn rejects_bad_counts() {
        for bad in [
            ModelConfig { heads: 3, ..Default::default() },
            ModelConfig { fold_stages: 0, ..Default::default() },
            ModelConfig { knn_k: 200, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(NetError::Config(_))));
        }
    }
}
