//! The tape: every op evaluates eagerly, appends a node, and knows how to
//! push its output gradient back to its inputs.

use crowngen_core::geom::nearest_neighbors;
use crowngen_core::metrics::ChamferVariant;
use crowngen_core::{Point, PointCloud};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaxGroups {
        x: Var,
        argmax: Vec<usize>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Chamfer {
        pred: Var,
        target: Var,
        variant: ChamferVariant,
        pred_nn: Vec<(usize, f64)>,
        target_nn: Vec<(usize, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `c = a·b (+ c if accumulate)` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides describe in-bounds views of `a` (m×k), `b` (k×n)
    // and the row-major `c` (m×n), all checked by the callers' shape logic.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn to_cloud(t: &Tensor) -> PointCloud {
    PointCloud::new(t.data.chunks_exact(3).map(|c| Point::new(c[0], c[1], c[2])).collect())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; it is differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(TensorError::Shape(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    /// Matrix product `a·b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(TensorError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, (k, 1), &self.value(b).data, (n, 1), &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a·bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(TensorError::Shape(format!("matmul_nt {m}x{k} by ({n}x{k2})^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(a).data, (k, 1), &self.value(b).data, (1, k), &mut out, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMulNT(a, b), rg))
    }

    fn zip(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (m, n) = self.same_shape(a, b, what)?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, data), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the `1×n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.value(bias).len() != n {
            return Err(TensorError::Shape(format!(
                "add_row: {} bias values for {n} columns",
                self.value(bias).len()
            )));
        }
        let b = &self.value(bias).data;
        let data = self
            .value(a)
            .data
            .chunks_exact(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::matrix(m, n, data), Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data.iter().map(|x| x * s).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, n, data), Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let data = self.value(a).data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, n, data), Op::Relu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data.clone();
        for row in data.chunks_exact_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::matrix(m, n, data), Op::SoftmaxRows(a), rg)
    }

    /// Per-row normalization to zero mean and unit variance, then `γ·x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(x);
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(TensorError::Shape(format!("layer_norm over {n} columns with mismatched γ/β")));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        for (r, row) in self.value(x).data.chunks_exact(n.max(1)).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::matrix(m, n, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Column-wise max over consecutive blocks of `group` rows.
    pub fn max_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if group == 0 || m % group != 0 {
            return Err(TensorError::Shape(format!("max over groups of {group} rows of a {m}-row tensor")));
        }
        let groups = m / group;
        let src = &self.value(x).data;
        let mut out = vec![f64::NEG_INFINITY; groups * n];
        let mut argmax = vec![0; groups * n];
        for g in 0..groups {
            for r in g * group..(g + 1) * group {
                for c in 0..n {
                    let v = src[r * n + c];
                    if v > out[g * n + c] {
                        out[g * n + c] = v;
                        argmax[g * n + c] = r;
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(groups, n, out), Op::MaxGroups { x, argmax }, rg))
    }

    /// Column-wise max over all rows.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let rows = self.dims(x).0;
        self.max_groups(x, rows)
    }

    /// Rows of `x` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(x);
        if let Some(bad) = idx.iter().find(|&&i| i >= m) {
            return Err(TensorError::Shape(format!("gather row {bad} of a {m}-row tensor")));
        }
        let src = &self.value(x).data;
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(idx.len(), n, out), Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.dims(p).0).ok_or_else(|| TensorError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(TensorError::Shape("concat_cols: row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.dims(p).1).ok_or_else(|| TensorError::Shape("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.dims(p).1 != cols) {
            return Err(TensorError::Shape("concat_rows: column counts differ".into()));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.value(p).data);
        }
        let rows = out.len() / cols.max(1);
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x);
        if start + len > n {
            return Err(TensorError::Shape(format!("columns {start}..{} of {n}", start + len)));
        }
        let src = &self.value(x).data;
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(m, len, out), Op::SliceCols { x, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let src = &self.value(x).data;
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = src[r * n + c];
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::matrix(n, m, out), Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(x).data.clone())?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(TensorError::Shape("mean of an empty tensor".into()));
        }
        let s = self.value(x).data.iter().sum::<f64>() / n as f64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Chamfer distance between two `N×3` point sets; the value equals
    /// `crowngen_core::metrics::chamfer` bit for bit.
    pub fn chamfer(&mut self, pred: Var, target: Var, variant: ChamferVariant) -> Result<Var> {
        for v in [pred, target] {
            let (m, n) = self.dims(v);
            if n != 3 || m == 0 {
                return Err(TensorError::Shape(format!("chamfer needs non-empty N×3 clouds, got {m}x{n}")));
            }
        }
        let (p, t) = (to_cloud(self.value(pred)), to_cloud(self.value(target)));
        let pred_nn = nearest_neighbors(&t, &p)?;
        let target_nn = nearest_neighbors(&p, &t)?;
        let one_sided = |nn: &[(usize, f64)]| {
            let s: f64 = nn
                .iter()
                .map(|&(_, d2)| match variant {
                    ChamferVariant::L1 => d2.sqrt(),
                    ChamferVariant::L2 => d2,
                })
                .sum();
            s / nn.len() as f64
        };
        let value = one_sided(&pred_nn) + one_sided(&target_nn);
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Chamfer {
                pred,
                target,
                variant,
                pred_nn,
                target_nn,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            shapes: self.nodes[..=root.0].iter().map(|n| n.value.shape.clone()).collect(),
            grads,
        })
    }

    /// Gradients of a scalar `root` with respect to `inputs`.
    pub fn grad(&self, root: Var, inputs: &[Var]) -> Result<Vec<Tensor>> {
        let g = self.backward(root)?;
        Ok(inputs.iter().map(|&v| g.get(v)).collect())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let len = |v: Var| self.nodes[v.0].value.len();
        // accumulate into the gradient buffer of `v`
        fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(a), self.dims(b));
                if wants(a) {
                    let buf = slot(grads, a, m * k);
                    gemm(m, n, k, g, (n, 1), &self.value(b).data, (1, n), buf, true);
                }
                if wants(b) {
                    let buf = slot(grads, b, k * n);
                    gemm(k, m, n, &self.value(a).data, (1, k), g, (n, 1), buf, true);
                }
            }
            &Op::MatMulNT(a, b) => {
                let ((m, k), (n, _)) = (self.dims(a), self.dims(b));
                if wants(a) {
                    let buf = slot(grads, a, m * k);
                    gemm(m, n, k, g, (n, 1), &self.value(b).data, (k, 1), buf, true);
                }
                if wants(b) {
                    let buf = slot(grads, b, n * k);
                    gemm(n, m, k, g, (1, n), &self.value(a).data, (k, 1), buf, true);
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(a) {
                    for (d, x) in slot(grads, a, g.len()).iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if wants(b) {
                    for (d, x) in slot(grads, b, g.len()).iter_mut().zip(g) {
                        *d += sign * x;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if wants(a) {
                    let other = &self.value(b).data;
                    for ((d, x), y) in slot(grads, a, g.len()).iter_mut().zip(g).zip(other) {
                        *d += x * y;
                    }
                }
                if wants(b) {
                    let other = &self.value(a).data;
                    for ((d, x), y) in slot(grads, b, g.len()).iter_mut().zip(g).zip(other) {
                        *d += x * y;
                    }
                }
            }
            &Op::AddRow(a, bias) => {
                if wants(a) {
                    for (d, x) in slot(grads, a, g.len()).iter_mut().zip(g) {
                        *d += x;
                    }
                }
                if wants(bias) {
                    let n = len(bias);
                    let buf = slot(grads, bias, n);
                    for row in g.chunks_exact(n.max(1)) {
                        for (d, x) in buf.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                }
            }
            &Op::Scale(a, s) => {
                if wants(a) {
                    for (d, x) in slot(grads, a, g.len()).iter_mut().zip(g) {
                        *d += s * x;
                    }
                }
            }
            &Op::Relu(a) => {
                if wants(a) {
                    let src = &self.value(a).data;
                    for ((d, x), v) in slot(grads, a, g.len()).iter_mut().zip(g).zip(src) {
                        if *v > 0.0 {
                            *d += x;
                        }
                    }
                }
            }
            &Op::SoftmaxRows(a) => {
                if wants(a) {
                    let n = node.value.cols().max(1);
                    let y = &node.value.data;
                    let buf = slot(grads, a, g.len());
                    for ((dr, gr), yr) in buf.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(y.chunks_exact(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            dr[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = node.value.cols().max(1);
                let gam = &self.value(*gamma).data;
                if wants(*gamma) {
                    let buf = slot(grads, *gamma, n);
                    for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for c in 0..n {
                            buf[c] += gr[c] * hr[c];
                        }
                    }
                }
                if wants(*beta) {
                    let buf = slot(grads, *beta, n);
                    for gr in g.chunks_exact(n) {
                        for c in 0..n {
                            buf[c] += gr[c];
                        }
                    }
                }
                if wants(*x) {
                    let buf = slot(grads, *x, g.len());
                    for (r, ((dr, gr), hr)) in buf
                        .chunks_exact_mut(n)
                        .zip(g.chunks_exact(n))
                        .zip(xhat.chunks_exact(n))
                        .enumerate()
                    {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..n {
                            let d = gr[c] * gam[c];
                            mean_d += d;
                            mean_dh += d * hr[c];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for c in 0..n {
                            let d = gr[c] * gam[c];
                            dr[c] += rstd[r] * (d - mean_d - hr[c] * mean_dh);
                        }
                    }
                }
            }
            Op::MaxGroups { x, argmax } => {
                if wants(*x) {
                    let n = node.value.cols().max(1);
                    let buf = slot(grads, *x, len(*x));
                    for (o, &src_row) in argmax.iter().enumerate() {
                        buf[src_row * n + o % n] += g[o];
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                if wants(*x) {
                    let n = node.value.cols().max(1);
                    let buf = slot(grads, *x, len(*x));
                    for (o, &i) in idx.iter().enumerate() {
                        for c in 0..n {
                            buf[i * n + c] += g[o * n + c];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols().max(1);
                let mut offset = 0;
                for &p in parts {
                    let (m, n) = self.dims(p);
                    if wants(p) {
                        let buf = slot(grads, p, m * n);
                        for r in 0..m {
                            for c in 0..n {
                                buf[r * n + c] += g[r * total + offset + c];
                            }
                        }
                    }
                    offset += n;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let l = len(p);
                    if wants(p) {
                        for (d, x) in slot(grads, p, l).iter_mut().zip(&g[offset..offset + l]) {
                            *d += x;
                        }
                    }
                    offset += l;
                }
            }
            &Op::SliceCols { x, start } => {
                if wants(x) {
                    let (m, n) = self.dims(x);
                    let w = node.value.cols();
                    let buf = slot(grads, x, m * n);
                    for r in 0..m {
                        for c in 0..w {
                            buf[r * n + start + c] += g[r * w + c];
                        }
                    }
                }
            }
            &Op::Transpose(x) => {
                if wants(x) {
                    let (m, n) = self.dims(x);
                    let buf = slot(grads, x, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            buf[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            &Op::Reshape(x) => {
                if wants(x) {
                    for (d, v) in slot(grads, x, g.len()).iter_mut().zip(g) {
                        *d += v;
                    }
                }
            }
            &Op::Sum(x) | &Op::Mean(x) => {
                if wants(x) {
                    let l = len(x);
                    let s = if matches!(node.op, Op::Mean(_)) { g[0] / l as f64 } else { g[0] };
                    for d in slot(grads, x, l).iter_mut() {
                        *d += s;
                    }
                }
            }
            Op::Chamfer {
                pred,
                target,
                variant,
                pred_nn,
                target_nn,
            } => {
                // d/dq of the mean over `nn` of dist(q_i, other_nn(i))
                let pull = |from: &[f64], other: &[f64], nn: &[(usize, f64)], i: usize| -> [f64; 3] {
                    let (j, d2) = nn[i];
                    let w = match variant {
                        ChamferVariant::L2 => 2.0,
                        ChamferVariant::L1 if d2 > 0.0 => 1.0 / d2.sqrt(),
                        ChamferVariant::L1 => 0.0,
                    } * g[0]
                        / nn.len() as f64;
                    [0, 1, 2].map(|a| w * (from[3 * i + a] - other[3 * j + a]))
                };
                for (me, other, own_nn, their_nn, wanted) in [
                    (*pred, *target, pred_nn, target_nn, wants(*pred)),
                    (*target, *pred, target_nn, pred_nn, wants(*target)),
                ] {
                    if !wanted {
                        continue;
                    }
                    let (mine, theirs) = (&self.value(me).data, &self.value(other).data);
                    let buf = slot(grads, me, mine.len());
                    for i in 0..own_nn.len() {
                        let d = pull(mine, theirs, own_nn, i);
                        for a in 0..3 {
                            buf[3 * i + a] += d[a];
                        }
                    }
                    // each of their points pulls its nearest point of mine
                    for k in 0..their_nn.len() {
                        let d = pull(theirs, mine, their_nn, k);
                        let j = their_nn[k].0;
                        for a in 0..3 {
                            buf[3 * j + a] -= d[a];
                        }
                    }
                }
            }
        }
    }
}

/// Leaf gradients from one backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a leaf, zero when it does not influence the root.
    pub fn get(&self, v: Var) -> Tensor {
        match (self.grads.get(v.0), self.shapes.get(v.0)) {
            (Some(Some(g)), Some(shape)) => Tensor::new(shape.clone(), g.clone()).expect("gradient matches its value"),
            (_, Some(shape)) => Tensor::zeros(shape),
            (_, None) => Tensor::zeros(&[0]),
        }
    }

    /// Moves a leaf gradient out without copying.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
