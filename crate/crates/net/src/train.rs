use std::fmt::Write as _;

use crowngen_autodiff::{AdamConfig, AdamState, Graph, Tensor};
use crowngen_core::context::TrainingSample;
use crowngen_core::geom::{augment, derive_seed, AugmentRanges};
use crowngen_core::metrics::{chamfer, ChamferVariant};
use crowngen_core::PointCloud;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::loss::completion_loss;
use crate::model::{tensor_to_cloud, CrownNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives shuffling and augmentation draws.
    pub seed: u64,
    pub augment: Option<AugmentRanges>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub lr: f64,
    pub train_cd_l1: f64,
    pub val_cd_l1: Option<f64>,
    pub train_cd_l2: f64,
    pub val_cd_l2: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_cd_l1,val_cd_l1,train_cd_l2,val_cd_l2";

    /// Header plus one row per epoch; missing validation values are empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{:e},{}",
                e.epoch,
                e.lr,
                e.train_cd_l1,
                opt(e.val_cd_l1),
                e.train_cd_l2,
                opt(e.val_cd_l2)
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CrownNet,
    pub log: TrainLog,
    pub adam: AdamState,
}

struct StepResult {
    cd_l1: f64,
    cd_l2: f64,
    grads: Vec<Tensor>,
}

fn sample_step(model: &CrownNet, input: &PointCloud, target: &PointCloud, epoch: u32) -> Result<StepResult> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let f = model.forward_graph(&mut g, &p, input)?;
    let loss = completion_loss(&mut g, f.coarse, f.fine, target)?;
    // nearest neighbors of non-finite points are meaningless; stop before
    // backpropagating through them
    if !g.scalar(loss).is_finite() || !g.value(f.fine).data.iter().all(|v| v.is_finite()) {
        return Err(NetError::NonFinite { epoch });
    }
    let fine = tensor_to_cloud(g.value(f.fine));
    let mut grads = g.backward(loss)?;
    Ok(StepResult {
        cd_l1: chamfer(&fine, target, ChamferVariant::L1)?,
        cd_l2: chamfer(&fine, target, ChamferVariant::L2)?,
        grads: p
            .iter()
            .zip(model.params().iter())
            .map(|(&v, (_, t))| {
                let data = grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]);
                Tensor::new(t.shape.clone(), data)
            })
            .collect::<std::result::Result<_, _>>()?,
    })
}

/// Mean fine-output CD-L1 and CD-L2 of `model` over `samples`.
pub fn evaluate(model: &CrownNet, samples: &[TrainingSample]) -> Result<(f64, f64)> {
    let (mut l1, mut l2) = (0.0, 0.0);
    for s in samples {
        let pred = model.predict(&s.input_cloud)?;
        l1 += chamfer(&pred.fine, &s.target_cloud, ChamferVariant::L1)?;
        l2 += chamfer(&pred.fine, &s.target_cloud, ChamferVariant::L2)?;
    }
    let n = samples.len() as f64;
    Ok((l1 / n, l2 / n))
}

/// Mini-batch ADAM on the completion loss with the stepwise learning-rate
/// schedule. Single-threaded and fully determined by the model
/// initialization, the sample order and `cfg.seed`.
pub fn train(
    mut model: CrownNet,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(NetError::Input("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(NetError::Input("batch size must be positive".into()));
    }
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.adam.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::from(epoch)));
        order.shuffle(&mut rng);
        let (mut sum_l1, mut sum_l2) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let s = &train_set[i];
                let (input, target) = match &cfg.augment {
                    Some(ranges) => {
                        let draw = ranges.draw(derive_seed(cfg.seed ^ 0xA5A5_A5A5, (u64::from(epoch) << 32) | i as u64));
                        let mut out = augment(&[s.input_cloud.clone(), s.target_cloud.clone()], &draw)?;
                        let t = out.pop().expect("two clouds");
                        (out.pop().expect("two clouds"), t)
                    }
                    None => (s.input_cloud.clone(), s.target_cloud.clone()),
                };
                let r = sample_step(&model, &input, &target, epoch)?;
                sum_l1 += r.cd_l1;
                sum_l2 += r.cd_l2;
                match &mut acc {
                    None => acc = Some(r.grads),
                    Some(a) => {
                        for (x, y) in a.iter_mut().zip(&r.grads) {
                            for (u, v) in x.data.iter_mut().zip(&y.data) {
                                *u += v;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= inv));
            adam.step(model.params_mut(), &grads, lr)?;
        }
        if !model.params().all_finite() {
            return Err(NetError::NonFinite { epoch });
        }
        let (val_cd_l1, val_cd_l2) = if val_set.is_empty() {
            (None, None)
        } else {
            let (a, b) = evaluate(&model, val_set)?;
            if !(a.is_finite() && b.is_finite()) {
                return Err(NetError::NonFinite { epoch });
            }
            (Some(a), Some(b))
        };
        let n = train_set.len() as f64;
        let entry = EpochLog {
            epoch,
            lr,
            train_cd_l1: sum_l1 / n,
            val_cd_l1,
            train_cd_l2: sum_l2 / n,
            val_cd_l2,
        };
        on_epoch(&entry);
        log.epochs.push(entry);
    }
    Ok(TrainOutcome { model, log, adam })
}
