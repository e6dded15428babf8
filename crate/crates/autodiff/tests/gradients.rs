use crowngen_autodiff::check::{gradient_check, DEFAULT_H};
use crowngen_autodiff::{lr_at, Graph, Result, Tensor, Var};
use crowngen_core::metrics::ChamferVariant;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

/// Fixed random weights turn any tensor output into a scalar, so every output
/// element contributes a distinct weight to the checked gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let t = g.value(out).clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(Tensor::new(t.shape.clone(), (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn assert_check<F>(name: &str, inputs: &[Tensor], f: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let r = gradient_check(inputs, f, DEFAULT_H).unwrap();
    assert!(r.max_rel_error < TOL, "{name}: relative error {}", r.max_rel_error);
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_matrix(&mut rng, 3, 4);
        let b = rand_matrix(&mut rng, 4, 5);
        let c = rand_matrix(&mut rng, 3, 4);
        let bt = rand_matrix(&mut rng, 5, 4);
        let bias = rand_matrix(&mut rng, 1, 4);

        assert_check("matmul", &[a.clone(), b.clone()], |g, v| {
            let o = g.matmul(v[0], v[1])?;
            weighted_sum(g, o, seed)
        });
        assert_check("matmul_nt", &[a.clone(), bt.clone()], |g, v| {
            let o = g.matmul_nt(v[0], v[1])?;
            weighted_sum(g, o, seed)
        });
        assert_check("add", &[a.clone(), c.clone()], |g, v| {
            let o = g.add(v[0], v[1])?;
            weighted_sum(g, o, seed)
        });
        assert_check("sub", &[a.clone(), c.clone()], |g, v| {
            let o = g.sub(v[0], v[1])?;
            weighted_sum(g, o, seed)
        });
        assert_check("mul", &[a.clone(), c.clone()], |g, v| {
            let o = g.mul(v[0], v[1])?;
            weighted_sum(g, o, seed)
        });
        assert_check("add_row", &[a.clone(), bias.clone()], |g, v| {
            let o = g.add_row(v[0], v[1])?;
            weighted_sum(g, o, seed)
        });
        assert_check("scale", &[a.clone()], |g, v| {
            let o = g.scale(v[0], -1.7);
            weighted_sum(g, o, seed)
        });
        assert_check("relu", &[away_from_zero(&mut rng, 3, 4)], |g, v| {
            let o = g.relu(v[0]);
            weighted_sum(g, o, seed)
        });
        assert_check("softmax_rows", &[a.clone()], |g, v| {
            let o = g.softmax_rows(v[0]);
            weighted_sum(g, o, seed)
        });
        let gamma = rand_matrix(&mut rng, 1, 4);
        assert_check("layer_norm", &[a.clone(), gamma, bias.clone()], |g, v| {
            let o = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted_sum(g, o, seed)
        });
        assert_check("max_groups", &[rand_matrix(&mut rng, 6, 3)], |g, v| {
            let o = g.max_groups(v[0], 3)?;
            weighted_sum(g, o, seed)
        });
        assert_check("gather_rows", &[a.clone()], |g, v| {
            let o = g.gather_rows(v[0], &[2, 0, 2, 1, 2])?;
            weighted_sum(g, o, seed)
        });
        assert_check("concat_cols", &[a.clone(), rand_matrix(&mut rng, 3, 2)], |g, v| {
            let o = g.concat_cols(&[v[0], v[1], v[0]])?;
            weighted_sum(g, o, seed)
        });
        assert_check("concat_rows", &[a.clone(), c.clone()], |g, v| {
            let o = g.concat_rows(&[v[1], v[0]])?;
            weighted_sum(g, o, seed)
        });
        assert_check("slice_cols", &[a.clone()], |g, v| {
            let o = g.slice_cols(v[0], 1, 2)?;
            weighted_sum(g, o, seed)
        });
        assert_check("transpose", &[a.clone()], |g, v| {
            let o = g.transpose(v[0]);
            weighted_sum(g, o, seed)
        });
        assert_check("reshape", &[a.clone()], |g, v| {
            let o = g.reshape(v[0], &[2, 6])?;
            weighted_sum(g, o, seed)
        });
        assert_check("mean", &[a.clone()], |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.mean(sq)
        });
    }
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    rand_matrix(rng, n, 3)
}

#[test]
fn chamfer_gradients_match_finite_differences() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = cloud(&mut rng, 8);
        let fixed = cloud(&mut rng, 11);
        for variant in [ChamferVariant::L2, ChamferVariant::L1] {
            // fixed target: the usual training setting
            let target = fixed.clone();
            assert_check("chamfer vs fixed", &[x.clone()], move |g, v| {
                let t = g.constant(target.clone());
                g.chamfer(v[0], t, variant)
            });
            // both sides free
            assert_check("chamfer both", &[x.clone(), fixed.clone()], |g, v| g.chamfer(v[0], v[1], variant));
        }
    }
}

#[test]
fn chamfer_l1_gradient_vanishes_on_coincident_points() {
    let p = Tensor::matrix(2, 3, vec![0., 0., 0., 1., 0., 0.]);
    let mut g = Graph::new();
    let pv = g.leaf(p.clone().with_grad());
    let t = g.constant(p);
    let c = g.chamfer(pv, t, ChamferVariant::L1).unwrap();
    assert_eq!(g.scalar(c), 0.0);
    assert!(g.grad(c, &[pv]).unwrap()[0].data.iter().all(|&d| d == 0.0));
}

/// Hand-written forward of the 3-layer ReLU MLP, the independent
/// reference for the composed graph's value.
fn mlp_reference(x: &Tensor, ws: &[Tensor], bs: &[Tensor]) -> f64 {
    let mut h: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    for (layer, (w, b)) in ws.iter().zip(bs).enumerate() {
        let (k, n) = (w.rows(), w.cols());
        h = h
            .iter()
            .map(|row| {
                (0..n)
                    .map(|j| {
                        let z = (0..k).map(|i| row[i] * w.data[i * n + j]).sum::<f64>() + b.data[j];
                        if layer + 1 < ws.len() {
                            z.max(0.0)
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
    }
    h.iter().flatten().map(|v| v * v).sum::<f64>() * 0.5
}

#[test]
fn three_layer_mlp_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = rand_matrix(&mut rng, 5, 3);
    let dims = [3, 6, 5, 2];
    let ws: Vec<Tensor> = dims.windows(2).map(|d| rand_matrix(&mut rng, d[0], d[1])).collect();
    let bs: Vec<Tensor> = dims[1..].iter().map(|&d| rand_matrix(&mut rng, 1, d)).collect();
    let forward = |g: &mut Graph, v: &[Var]| -> Result<Var> {
        let mut h = v[0];
        for l in 0..3 {
            let z = g.matmul(h, v[1 + l])?;
            let z = g.add_row(z, v[4 + l])?;
            h = if l < 2 { g.relu(z) } else { z };
        }
        let sq = g.mul(h, h)?;
        let s = g.sum(sq);
        Ok(g.scale(s, 0.5))
    };
    let mut inputs = vec![x.clone()];
    inputs.extend(ws.iter().cloned());
    inputs.extend(bs.iter().cloned());

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = forward(&mut g, &vars).unwrap();
    assert!((g.scalar(out) - mlp_reference(&x, &ws, &bs)).abs() < 1e-12);

    let r = gradient_check(&inputs, forward, DEFAULT_H).unwrap();
    assert!(r.max_rel_error < TOL, "mlp relative error {}", r.max_rel_error);
}

#[test]
fn schedule_values() {
    let ulp = |x: f64, y: f64| (x.to_bits() as i64 - y.to_bits() as i64).unsigned_abs();
    // the formula, evaluated exactly as stated
    for e in [0u32, 19, 20, 39, 40] {
        assert_eq!(lr_at(e).to_bits(), (0.0005 * 0.9f64.powi((e / 20) as i32)).to_bits());
    }
    assert_eq!(lr_at(0), 0.0005);
    assert_eq!(lr_at(19), 0.0005);
    assert!(ulp(lr_at(20), 0.00045) <= 1);
    assert!(ulp(lr_at(39), 0.00045) <= 1);
    assert!(ulp(lr_at(40), 0.000405) <= 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_shapes_pass_gradient_check(rows in 1usize..5, inner in 1usize..5, cols in 1usize..5, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_matrix(&mut rng, rows, inner);
        let b = rand_matrix(&mut rng, inner, cols);
        let gamma = rand_matrix(&mut rng, 1, cols);
        let beta = rand_matrix(&mut rng, 1, cols);
        let r = gradient_check(&[a, b, gamma, beta], |g, v| {
            let z = g.matmul(v[0], v[1])?;
            let s = g.softmax_rows(z);
            let n = if cols > 1 { g.layer_norm(z, v[2], v[3], 1e-5)? } else { z };
            let o = g.concat_cols(&[s, n])?;
            weighted_sum(g, o, seed)
        }, DEFAULT_H).unwrap();
        prop_assert!(r.max_rel_error < TOL, "relative error {}", r.max_rel_error);
    }
}
