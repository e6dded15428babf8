use crowngen_autodiff::checkpoint::Checkpoint;
use crowngen_autodiff::{AdamState, Graph, ParamStore, Tensor, Var};
use crowngen_core::geom::{farthest_point_sample, knn, lexicographic_min_index};
use crowngen_core::{GeomError, Point, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{NetError, Result};
use crate::layers::{folding_grid, DecoderBlock, FoldingStage, GeoBlock, KnnGraph, Mlp};

pub fn cloud_to_tensor(cloud: &PointCloud) -> Tensor {
    Tensor::matrix(cloud.len(), 3, cloud.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

pub fn tensor_to_cloud(t: &Tensor) -> PointCloud {
    PointCloud::new(t.data.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect())
}

/// Proxy centers and their neighborhoods, in coordinates relative to the
/// owning center. Depends only on the input point set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyGroups {
    pub centers: PointCloud,
    /// `n_proxies · k` rows of `neighbor − center`, grouped per center.
    pub relative: Tensor,
    pub k: usize,
}

impl ProxyGroups {
    pub fn build(input: &PointCloud, n_proxies: usize, k: usize) -> Result<Self> {
        if input.len() < n_proxies {
            return Err(GeomError::Size(format!(
                "{} input points for {n_proxies} proxies",
                input.len()
            ))
            .into());
        }
        let seed = lexicographic_min_index(input).ok_or_else(|| GeomError::Size("empty input cloud".into()))?;
        let idx = farthest_point_sample(input, n_proxies, seed)?;
        let centers = PointCloud::new(idx.iter().map(|&i| input.points[i]).collect());
        let k = k.min(input.len());
        let groups = knn(input, &centers, k)?;
        let mut rel = Vec::with_capacity(n_proxies * k * 3);
        for (c, group) in centers.points.iter().zip(&groups) {
            for &j in group {
                let d = input.points[j] - c;
                rel.extend_from_slice(&[d.x, d.y, d.z]);
            }
        }
        Ok(Self {
            centers,
            relative: Tensor::matrix(n_proxies * k, 3, rel),
            k,
        })
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub coarse: Var,
    pub fine: Var,
    /// Per-stage folding offsets (before adding the query centers).
    pub stage_offsets: Vec<Var>,
    /// Encoder output, one row per proxy.
    pub proxy_features: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub coarse: PointCloud,
    pub fine: PointCloud,
}

#[derive(Debug, Clone)]
pub struct CrownNet {
    cfg: ModelConfig,
    seed: u64,
    params: ParamStore,
    proxy_mlp: Mlp,
    pos_mlp: Mlp,
    encoder: Vec<GeoBlock>,
    coarse_mlp: Mlp,
    query_mlp: Mlp,
    decoder: Vec<DecoderBlock>,
    folds: Vec<FoldingStage>,
    grid: Tensor,
}

impl CrownNet {
    /// Freshly initialized network; parameters depend only on `cfg` and `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let proxy_mlp = Mlp::new(&mut ps, &mut rng, "proxy", &[3, cfg.proxy_hidden, d]);
        let pos_mlp = Mlp::new(&mut ps, &mut rng, "pos", &[3, d, d]);
        let encoder = (0..cfg.encoder_blocks)
            .map(|i| GeoBlock::new(&mut ps, &mut rng, &format!("enc{i}"), d, cfg.heads, cfg.ffn_hidden))
            .collect();
        let coarse_mlp = Mlp::new(&mut ps, &mut rng, "query.coarse", &[d, d, 3 * cfg.n_queries]);
        let query_mlp = Mlp::new(&mut ps, &mut rng, "query.embed", &[d + 3, d, d]);
        let decoder = (0..cfg.decoder_blocks)
            .map(|i| DecoderBlock::new(&mut ps, &mut rng, &format!("dec{i}"), d, cfg.heads, cfg.ffn_hidden))
            .collect();
        let folds = (0..cfg.fold_stages)
            .map(|s| FoldingStage::new(&mut ps, &mut rng, &format!("fold{s}"), if s == 0 { 2 } else { 3 }, d, cfg.fold_hidden))
            .collect();
        Ok(Self {
            cfg,
            seed,
            params: ps,
            proxy_mlp,
            pos_mlp,
            encoder,
            coarse_mlp,
            query_mlp,
            decoder,
            folds,
            grid: folding_grid(cfg.fold_grid),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn init_seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Proxy centers and encoder-input features (pooled local MLP plus the
    /// positional embedding of the center).
    pub fn encode_proxies(&self, g: &mut Graph, p: &[Var], input: &PointCloud) -> Result<(PointCloud, Var)> {
        let groups = ProxyGroups::build(input, self.cfg.n_proxies, self.cfg.knn_k)?;
        let rel = g.constant(groups.relative.clone());
        let local = self.proxy_mlp.apply(g, p, rel)?;
        let pooled = g.max_groups(local, groups.k)?;
        let c = g.constant(cloud_to_tensor(&groups.centers));
        let pos = self.pos_mlp.apply(g, p, c)?;
        Ok((groups.centers, g.add(pooled, pos)?))
    }

    /// Records a full forward pass on `g` with parameters bound to `p`.
    pub fn forward_graph(&self, g: &mut Graph, p: &[Var], input: &PointCloud) -> Result<Forward> {
        let cfg = &self.cfg;
        let (centers, mut x) = self.encode_proxies(g, p, input)?;
        let enc_graph = KnnGraph::build(&centers, cfg.knn_k)?;
        for blk in &self.encoder {
            x = blk.apply(g, p, x, &enc_graph)?;
        }

        let global = g.max_rows(x)?;
        let flat = self.coarse_mlp.apply(g, p, global)?;
        let coarse = g.reshape(flat, &[cfg.n_queries, 3])?;
        let tiled = g.gather_rows(global, &vec![0; cfg.n_queries])?;
        let qin = g.concat_cols(&[tiled, coarse])?;
        let mut q = self.query_mlp.apply(g, p, qin)?;

        let dec_graph = KnnGraph::build(&tensor_to_cloud(g.value(coarse)), cfg.knn_k)?;
        for blk in &self.decoder {
            q = blk.apply(g, p, q, x, &dec_graph)?;
        }

        let n_out = cfg.n_out();
        let owner: Vec<usize> = (0..n_out).map(|i| i / cfg.fold_grid).collect();
        let grid = g.constant(self.grid.clone());
        let tile: Vec<usize> = (0..n_out).map(|i| i % cfg.fold_grid).collect();
        let mut pts = g.gather_rows(grid, &tile)?;
        let mut stage_offsets = Vec::with_capacity(self.folds.len());
        for (si, stage) in self.folds.iter().enumerate() {
            let out = stage.apply(g, p, pts, q, &owner)?;
            pts = if cfg.fold_residual && si > 0 { g.add(pts, out)? } else { out };
            stage_offsets.push(pts);
        }
        let anchor = g.gather_rows(coarse, &owner)?;
        let fine = g.add(anchor, pts)?;
        Ok(Forward {
            coarse,
            fine,
            stage_offsets,
            proxy_features: x,
        })
    }

    /// Inference only.
    pub fn predict(&self, input: &PointCloud) -> Result<Prediction> {
        let mut g = Graph::new();
        let p: Vec<Var> = self.params.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let f = self.forward_graph(&mut g, &p, input)?;
        Ok(Prediction {
            coarse: tensor_to_cloud(g.value(f.coarse)),
            fine: tensor_to_cloud(g.value(f.fine)),
        })
    }

    pub fn to_checkpoint(&self, adam: Option<&AdamState>, epoch: u32) -> Checkpoint {
        let config = serde_json::json!({ "model": self.cfg, "init_seed": self.seed });
        Checkpoint::new(&self.params, adam, config, epoch)
    }

    /// Rebuilds the architecture recorded in `ck` and loads its tensors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_value(ck.config["model"].clone())
            .map_err(|e| NetError::Config(format!("checkpoint model config: {e}")))?;
        let seed = ck.config["init_seed"].as_u64().unwrap_or(0);
        let mut net = Self::new(cfg, seed)?;
        ck.restore_into(&mut net.params)?;
        if !net.params.all_finite() {
            return Err(NetError::Input("checkpoint holds non-finite parameters".into()));
        }
        Ok(net)
    }
}
