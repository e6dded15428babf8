use crowngen_autodiff::check::{gradient_check, DEFAULT_H};
use crowngen_autodiff::{Graph, ParamStore, Tensor, Var};
use crowngen_core::context::{assemble_sample, build_context, Budgets, TrainingSample};
use crowngen_core::metrics::{chamfer, ChamferVariant};
use crowngen_core::synth::{generate_case, SynthParams};
use crowngen_core::{Point, PointCloud};
use crowngen_net::layers::{GeoBlock, KnnGraph, LN_EPS};
use crowngen_net::{
    cloud_to_tensor, coarse_target, completion_loss, tensor_to_cloud, train, CrownNet, ModelConfig, NetError,
    TrainConfig,
};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(seed: u64) -> TrainingSample {
    let c = generate_case("m", &SynthParams { seed, ..Default::default() }).unwrap();
    let ctx = build_context(&c, 2.0).unwrap();
    assemble_sample(&c, &ctx, &Budgets::default(), seed).unwrap()
}

fn small() -> ModelConfig {
    ModelConfig {
        n_proxies: 32,
        knn_k: 6,
        d_model: 16,
        heads: 2,
        encoder_blocks: 2,
        decoder_blocks: 2,
        n_queries: 8,
        fold_grid: 8,
        ffn_hidden: 24,
        fold_hidden: 16,
        proxy_hidden: 8,
        ..Default::default()
    }
}

#[test]
fn default_shapes_are_49_and_1568() {
    let s = sample(1);
    let net = CrownNet::new(ModelConfig::default(), 0).unwrap();
    let pred = net.predict(&s.input_cloud).unwrap();
    assert_eq!(pred.coarse.len(), 49);
    assert_eq!(pred.fine.len(), 1568);
    assert!(pred.fine.points.iter().chain(&pred.coarse.points).all(|p| p.iter().all(|v| v.is_finite())));

    let mut g = Graph::new();
    let p = net.params().bind(&mut g);
    let (centers, feats) = net.encode_proxies(&mut g, &p, &s.input_cloud).unwrap();
    assert_eq!(centers.len(), 128);
    assert_eq!(g.value(feats).shape, vec![128, 128]);
}

#[test]
fn untrained_output_is_deterministic() {
    let s = sample(2);
    let a = CrownNet::new(small(), 9).unwrap().predict(&s.input_cloud).unwrap();
    let b = CrownNet::new(small(), 9).unwrap().predict(&s.input_cloud).unwrap();
    assert_eq!(a, b);
    let c = CrownNet::new(small(), 10).unwrap().predict(&s.input_cloud).unwrap();
    assert_ne!(a, c);
}

#[test]
fn doubling_fold_grid_doubles_output() {
    let s = sample(3);
    let base = CrownNet::new(small(), 1).unwrap().predict(&s.input_cloud).unwrap();
    let wide = CrownNet::new(ModelConfig { fold_grid: 16, ..small() }, 1).unwrap().predict(&s.input_cloud).unwrap();
    assert_eq!(wide.fine.len(), 2 * base.fine.len());
    assert_eq!(wide.coarse.len(), base.coarse.len());
}

#[test]
fn too_few_points_is_a_size_error() {
    let net = CrownNet::new(small(), 1).unwrap();
    let tiny = PointCloud::from_xyz(&[[0.0, 0.0, 0.0]; 10]);
    assert!(matches!(net.predict(&tiny), Err(NetError::Geometry(crowngen_core::GeomError::Size(_)))));
}

#[test]
fn shuffled_input_gives_same_output() {
    let s = sample(4);
    let net = CrownNet::new(ModelConfig::default(), 2).unwrap();
    let a = net.predict(&s.input_cloud).unwrap();
    let mut pts = s.input_cloud.points.clone();
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let b = net.predict(&PointCloud::new(pts)).unwrap();
    let d = chamfer(&a.fine, &b.fine, ChamferVariant::L2).unwrap();
    assert!(d < 1e-6, "CD-L2 {d}");
}

#[test]
fn every_parameter_receives_gradient() {
    let s = sample(5);
    let net = CrownNet::new(ModelConfig::default(), 4).unwrap();
    let mut g = Graph::new();
    let p = net.params().bind(&mut g);
    let f = net.forward_graph(&mut g, &p, &s.input_cloud).unwrap();
    let loss = completion_loss(&mut g, f.coarse, f.fine, &s.target_cloud).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut dead = Vec::new();
    for (i, (name, _)) in net.params().iter().enumerate() {
        if !(grads.get(p[i]).norm() > 0.0) {
            dead.push(name.to_string());
        }
    }
    assert!(dead.is_empty(), "no gradient reaches {dead:?}");
    for stage in 0..3 {
        assert!(net.params().index_of(&format!("fold{stage}.w_point")).is_some());
    }
}

#[test]
fn completion_loss_properties() {
    let target = PointCloud::from_xyz(&[
        [0.0, 0.0, 0.0],
        [1.0, 0.2, 0.0],
        [0.3, 1.1, 0.1],
        [0.9, 0.8, 0.5],
        [0.1, 0.4, 1.0],
        [0.7, 0.1, 0.9],
        [0.2, 0.9, 0.7],
        [1.1, 1.0, 1.2],
    ]);
    let coarse = coarse_target(&target, 3).unwrap();
    let mut g = Graph::new();
    let cv = g.constant(cloud_to_tensor(&coarse));
    let fv = g.constant(cloud_to_tensor(&target));
    let l = completion_loss(&mut g, cv, fv, &target).unwrap();
    assert_eq!(g.scalar(l), 0.0);

    // monotone in a small translation away from the optimum
    let mut last = 0.0;
    for step in 1..=5 {
        let t = 0.01 * step as f64;
        let shift = |c: &PointCloud| PointCloud::new(c.points.iter().map(|p| Point::new(p.x + t, p.y, p.z - t)).collect());
        let mut g = Graph::new();
        let cv = g.constant(cloud_to_tensor(&shift(&coarse)));
        let fv = g.constant(cloud_to_tensor(&shift(&target)));
        let l = completion_loss(&mut g, cv, fv, &target).unwrap();
        assert!(g.scalar(l) > last);
        last = g.scalar(l);
    }

    let mut g = Graph::new();
    let cv = g.constant(cloud_to_tensor(&coarse));
    let fv = g.constant(cloud_to_tensor(&target));
    assert!(completion_loss(&mut g, cv, fv, &PointCloud::default()).is_err());
}

#[test]
fn completion_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cloud = |n: usize| Tensor::matrix(n, 3, (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    for _ in 0..5 {
        let target = tensor_to_cloud(&cloud(8));
        let coarse = cloud(3);
        let fine = cloud(8);
        let r = gradient_check(
            &[coarse, fine],
            |g: &mut Graph, v: &[Var]| Ok(completion_loss(g, v[0], v[1], &target).map_err(|e| match e {
                NetError::Tensor(t) => t,
                other => panic!("{other}"),
            })?),
            DEFAULT_H,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "relative error {}", r.max_rel_error);
    }
}

fn to_dm(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), &t.data)
}

fn layer_norm(x: &DMatrix<f64>, gamma: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for r in 0..x.nrows() {
        let row = x.row(r);
        let mean = row.mean();
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        for c in 0..x.ncols() {
            out[(r, c)] = (x[(r, c)] - mean) / (var + LN_EPS).sqrt() * gamma[(0, c)] + beta[(0, c)];
        }
    }
    out
}

fn add_row(x: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row += b.row(0);
    }
    out
}

/// Textbook post-norm transformer block (multi-head self-attention with an
/// output projection, then a ReLU feed-forward), written against nalgebra.
#[allow(clippy::too_many_arguments)]
fn plain_block(
    x: &DMatrix<f64>,
    heads: usize,
    wq: &DMatrix<f64>,
    wk: &DMatrix<f64>,
    wv: &DMatrix<f64>,
    wo: &DMatrix<f64>,
    bo: &DMatrix<f64>,
    ln1: (&DMatrix<f64>, &DMatrix<f64>),
    ffn: (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>),
    ln2: (&DMatrix<f64>, &DMatrix<f64>),
) -> DMatrix<f64> {
    let (q, k, v) = (x * wq, x * wk, x * wv);
    let d = x.ncols();
    let dh = d / heads;
    let mut cat = DMatrix::zeros(x.nrows(), d);
    for h in 0..heads {
        let qh = q.columns(h * dh, dh);
        let kh = k.columns(h * dh, dh);
        let vh = v.columns(h * dh, dh);
        let mut s = qh * kh.transpose() / (dh as f64).sqrt();
        for mut row in s.row_iter_mut() {
            let m = row.max();
            row.apply(|e| *e = (*e - m).exp());
            let z = row.sum();
            row /= z;
        }
        cat.columns_mut(h * dh, dh).copy_from(&(s * vh));
    }
    let attn = add_row(&(cat * wo), bo);
    let y = layer_norm(&(x + attn), ln1.0, ln1.1);
    let hidden = add_row(&(&y * ffn.0), ffn.1).map(|e| e.max(0.0));
    let f = add_row(&(hidden * ffn.2), ffn.3);
    layer_norm(&(y + f), ln2.0, ln2.1)
}

#[test]
fn zero_geometry_branch_is_a_plain_transformer_block() {
    let (d, heads, n) = (8, 2, 7);
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let blk = GeoBlock::new(&mut ps, &mut rng, "b", d, heads, 12);
    // perturb every parameter so biases and norms are non-trivial
    for i in 0..ps.len() {
        ps.get_mut(i).data.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    for slot in [blk.geo.w_top, blk.geo.w_bot, blk.geo.b] {
        ps.get_mut(slot).data.iter_mut().for_each(|v| *v = 0.0);
    }
    let centers = PointCloud::new((0..n).map(|i| Point::new(i as f64, (i * i) as f64 * 0.1, 0.0)).collect());
    let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect());

    let mut g = Graph::new();
    let p = ps.bind(&mut g);
    let xv = g.constant(x.clone());
    let y = blk.apply(&mut g, &p, xv, &KnnGraph::build(&centers, 3).unwrap()).unwrap();
    let got = to_dm(g.value(y));

    let m = |slot: usize| to_dm(ps.get(slot));
    // the fusion acts on [attn ⊕ 0]: only its top rows matter
    let fuse = m(blk.fuse.w);
    let fuse_top = fuse.rows(0, d).into_owned();
    let wo = m(blk.attn.o.w) * &fuse_top;
    let bo = m(blk.attn.o.b.unwrap()) * &fuse_top + m(blk.fuse.b.unwrap());
    let want = plain_block(
        &to_dm(&x),
        heads,
        &m(blk.attn.q.w),
        &m(blk.attn.k.w),
        &m(blk.attn.v.w),
        &wo,
        &bo,
        (&m(blk.ln1.gamma), &m(blk.ln1.beta)),
        (
            &m(blk.ffn.layers[0].w),
            &m(blk.ffn.layers[0].b.unwrap()),
            &m(blk.ffn.layers[1].w),
            &m(blk.ffn.layers[1].b.unwrap()),
        ),
        (&m(blk.ln2.gamma), &m(blk.ln2.beta)),
    );
    assert!((got - want).abs().max() < 1e-10);
}

#[test]
fn symmetric_proxies_get_identical_outputs() {
    let (d, heads) = (8, 2);
    let mut ps = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let blk = GeoBlock::new(&mut ps, &mut rng, "b", d, heads, 12);
    // square corners; opposite corners share features
    let centers = PointCloud::from_xyz(&[[0., 0., 0.], [1., 0., 0.], [1., 1., 0.], [0., 1., 0.]]);
    let fa: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let fb: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::matrix(4, d, [fa.clone(), fb.clone(), fa, fb].concat());
    let mut g = Graph::new();
    let p = ps.bind(&mut g);
    let xv = g.constant(x);
    let y = blk.apply(&mut g, &p, xv, &KnnGraph::build(&centers, 3).unwrap()).unwrap();
    let out = g.value(y);
    assert_eq!(out.row(0), out.row(2));
    assert_eq!(out.row(1), out.row(3));
    assert_ne!(out.row(0), out.row(1));
}

#[test]
fn zero_epochs_returns_initial_model() {
    let s = sample(6);
    let net = CrownNet::new(small(), 5).unwrap();
    let before = net.params().clone();
    let out = train(net, &[s], &[], &TrainConfig { epochs: 0, ..Default::default() }, |_| {}).unwrap();
    assert!(out.log.epochs.is_empty());
    assert_eq!(out.model.params(), &before);
    assert!(matches!(
        train(CrownNet::new(small(), 5).unwrap(), &[], &[], &TrainConfig::default(), |_| {}),
        Err(NetError::Input(_))
    ));
}

#[test]
fn same_seed_training_is_bit_identical() {
    let data = [sample(7), sample(8), sample(9)];
    let cfg = TrainConfig { epochs: 3, batch_size: 2, seed: 11, augment: Some(Default::default()), ..Default::default() };
    let run = || train(CrownNet::new(small(), 3).unwrap(), &data, &data[..1], &cfg, |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    for ((_, x), (_, y)) in a.model.params().iter().zip(b.model.params().iter()) {
        assert!(x.data.iter().zip(&y.data).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    assert_eq!(a.log.epochs.len(), 3);
    assert!(a.log.epochs.iter().all(|e| e.val_cd_l1.is_some()));
}

#[test]
fn divergence_is_reported_not_panicked() {
    let data = [sample(10), sample(11)];
    let mut cfg = TrainConfig { epochs: 4, batch_size: 1, ..Default::default() };
    cfg.adam.lr0 = 1e300;
    let r = train(CrownNet::new(small(), 2).unwrap(), &data, &data[1..], &cfg, |_| {});
    assert!(matches!(r, Err(NetError::NonFinite { .. })), "{:?}", r.err());
}
