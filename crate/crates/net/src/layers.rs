//! Building blocks. Each layer owns slot numbers into a [`ParamStore`]; at
//! forward time the store is bound to a graph and `p[slot]` is the leaf.

use crowngen_autodiff::{Graph, ParamStore, Tensor, Var};
use crowngen_core::geom::knn;
use crowngen_core::PointCloud;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::matrix(
        fan_in,
        fan_out,
        (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

/// `x·W (+ b)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let w = ps.add(format!("{name}.w"), glorot(rng, fan_in, fan_out));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out])));
        Self { w, b }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        Ok(match self.b {
            Some(b) => g.add_row(y, p[b])?,
            None => y,
        })
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(ps, rng, &format!("{name}.{i}"), d[0], d[1], true))
            .collect();
        Self { layers }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], mut x: Var) -> Result<Var> {
        let last = self.layers.len().saturating_sub(1);
        for (i, l) in self.layers.iter().enumerate() {
            x = l.apply(g, p, x)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::matrix(1, d, vec![1.0; d])),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros(&[1, d])),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, p[self.gamma], p[self.beta], LN_EPS)?)
    }
}

/// Multi-head scaled dot-product attention. Q/K/V projections carry no
/// bias: a key bias cannot change a softmax row and would never train.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(ps, rng, &format!("{name}.q"), d, d, false),
            k: Linear::new(ps, rng, &format!("{name}.k"), d, d, false),
            v: Linear::new(ps, rng, &format!("{name}.v"), d, d, false),
            o: Linear::new(ps, rng, &format!("{name}.o"), d, d, true),
            heads,
        }
    }

    /// Rows of `queries` attend over rows of `context`.
    pub fn apply(&self, g: &mut Graph, p: &[Var], queries: Var, context: Var) -> Result<Var> {
        let q = self.q.apply(g, p, queries)?;
        let k = self.k.apply(g, p, context)?;
        let v = self.v.apply(g, p, context)?;
        let d = g.value(q).cols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.o.apply(g, p, cat)
    }
}

/// kNN graph indices over `centers`: neighbor rows flattened per center and
/// the matching repeated self rows.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<usize>,
    pub centers: Vec<usize>,
}

impl KnnGraph {
    pub fn build(centers: &PointCloud, k: usize) -> Result<Self> {
        let k = k.min(centers.len());
        let nbrs = knn(centers, centers, k)?;
        Ok(Self {
            k,
            neighbors: nbrs.into_iter().flatten().collect(),
            centers: (0..centers.len()).flat_map(|i| std::iter::repeat(i).take(k)).collect(),
        })
    }
}

/// Edge features `relu([f_j − f_i ⊕ f_i]·W + b)` max-pooled over each
/// center's kNN. `W` is stored as its two row blocks so the edge term is
/// computed from per-node products instead of per-edge concatenations:
/// `[f_j − f_i ⊕ f_i]·W = f_j·W_top + f_i·(W_bot − W_top)`.
#[derive(Debug, Clone)]
pub struct GeometryBranch {
    pub w_top: usize,
    pub w_bot: usize,
    pub b: usize,
}

impl GeometryBranch {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        let w = glorot(rng, 2 * d, d);
        let (top, bot) = w.data.split_at(d * d);
        Self {
            w_top: ps.add(format!("{name}.w_top"), Tensor::matrix(d, d, top.to_vec())),
            w_bot: ps.add(format!("{name}.w_bot"), Tensor::matrix(d, d, bot.to_vec())),
            b: ps.add(format!("{name}.b"), Tensor::zeros(&[1, d])),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var, graph: &KnnGraph) -> Result<Var> {
        let top = g.matmul(x, p[self.w_top])?;
        let bot = g.matmul(x, p[self.w_bot])?;
        let own = g.sub(bot, top)?;
        let nb = g.gather_rows(top, &graph.neighbors)?;
        let me = g.gather_rows(own, &graph.centers)?;
        let e = g.add(nb, me)?;
        let e = g.add_row(e, p[self.b])?;
        let e = g.relu(e);
        Ok(g.max_groups(e, graph.k)?)
    }
}

/// Self-attention and geometry branch fused by a linear map of their
/// concatenation, each sub-layer followed by residual + layer norm.
#[derive(Debug, Clone)]
pub struct GeoBlock {
    pub attn: Attention,
    pub geo: GeometryBranch,
    pub fuse: Linear,
    pub ln1: LayerNorm,
    pub ffn: Mlp,
    pub ln2: LayerNorm,
}

impl GeoBlock {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, ffn_hidden: usize) -> Self {
        Self {
            attn: Attention::new(ps, rng, &format!("{name}.attn"), d, heads),
            geo: GeometryBranch::new(ps, rng, &format!("{name}.geo"), d),
            fuse: Linear::new(ps, rng, &format!("{name}.fuse"), 2 * d, d, true),
            ln1: LayerNorm::new(ps, &format!("{name}.ln1"), d),
            ffn: Mlp::new(ps, rng, &format!("{name}.ffn"), &[d, ffn_hidden, d]),
            ln2: LayerNorm::new(ps, &format!("{name}.ln2"), d),
        }
    }

    /// Attention + geometry + fusion + first residual/norm.
    fn mix(&self, g: &mut Graph, p: &[Var], x: Var, graph: &KnnGraph) -> Result<Var> {
        let a = self.attn.apply(g, p, x, x)?;
        let e = self.geo.apply(g, p, x, graph)?;
        let cat = g.concat_cols(&[a, e])?;
        let f = self.fuse.apply(g, p, cat)?;
        let r = g.add(x, f)?;
        self.ln1.apply(g, p, r)
    }

    fn feed_forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let f = self.ffn.apply(g, p, x)?;
        let r = g.add(x, f)?;
        self.ln2.apply(g, p, r)
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var, graph: &KnnGraph) -> Result<Var> {
        let h = self.mix(g, p, x, graph)?;
        self.feed_forward(g, p, h)
    }
}

/// Geometry-aware block with an extra cross-attention sub-layer over the
/// encoder output, between the self/geometry mix and the feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub inner: GeoBlock,
    pub cross: Attention,
    pub ln_cross: LayerNorm,
}

impl DecoderBlock {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize, heads: usize, ffn_hidden: usize) -> Self {
        let inner = GeoBlock::new(ps, rng, name, d, heads, ffn_hidden);
        Self {
            inner,
            cross: Attention::new(ps, rng, &format!("{name}.cross"), d, heads),
            ln_cross: LayerNorm::new(ps, &format!("{name}.ln_cross"), d),
        }
    }

    pub fn apply(&self, g: &mut Graph, p: &[Var], x: Var, memory: Var, graph: &KnnGraph) -> Result<Var> {
        let h = self.inner.mix(g, p, x, graph)?;
        let c = self.cross.apply(g, p, h, memory)?;
        let r = g.add(h, c)?;
        let h = self.ln_cross.apply(g, p, r)?;
        self.inner.feed_forward(g, p, h)
    }
}

/// One folding MLP whose first layer is split into a per-point part (grid
/// or previous 3-D points) and a per-query feature part. The feature part
/// is projected once per query and then broadcast to that query's points.
#[derive(Debug, Clone)]
pub struct FoldingStage {
    pub w_point: usize,
    pub w_feat: usize,
    pub b: usize,
    pub rest: Mlp,
}

impl FoldingStage {
    pub fn new(ps: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, point_dim: usize, d: usize, hidden: usize) -> Self {
        let w = glorot(rng, point_dim + d, hidden);
        let (pt, ft) = w.data.split_at(point_dim * hidden);
        Self {
            w_point: ps.add(format!("{name}.w_point"), Tensor::matrix(point_dim, hidden, pt.to_vec())),
            w_feat: ps.add(format!("{name}.w_feat"), Tensor::matrix(d, hidden, ft.to_vec())),
            b: ps.add(format!("{name}.b"), Tensor::zeros(&[1, hidden])),
            rest: Mlp::new(ps, rng, &format!("{name}.mlp"), &[hidden, hidden, 3]),
        }
    }

    /// `points`: one row per output point; `owner[i]` is the query row of
    /// point `i` in `features`.
    pub fn apply(&self, g: &mut Graph, p: &[Var], points: Var, features: Var, owner: &[usize]) -> Result<Var> {
        let a = g.matmul(points, p[self.w_point])?;
        let f = g.matmul(features, p[self.w_feat])?;
        let f = g.gather_rows(f, owner)?;
        let h = g.add(a, f)?;
        let h = g.add_row(h, p[self.b])?;
        let h = g.relu(h);
        self.rest.apply(g, p, h)
    }
}

/// Regular 2-D grid of `n` points in `[-0.5, 0.5]²`, as close to square as
/// the factorization of `n` allows (32 → 4 × 8).
pub fn folding_grid(n: usize) -> Tensor {
    let rows = (1..=n).filter(|r| n % r == 0 && r * r <= n).max().unwrap_or(1);
    let cols = n / rows;
    let lin = |i: usize, m: usize| if m == 1 { 0.0 } else { i as f64 / (m - 1) as f64 - 0.5 };
    let mut data = Vec::with_capacity(2 * n);
    for r in 0..rows {
        for c in 0..cols {
            data.push(lin(c, cols));
            data.push(lin(r, rows));
        }
    }
    Tensor::matrix(n, 2, data)
}
