//! Pipeline stages. Every stage reads and writes files only.
//!
//! Layout below `<out_dir>/<arm>/`:
//!
//! ```text
//! samples/<case>/{input.ply, target.ply, sample.json}   preprocess
//! model/{checkpoint.json, train_log.csv}                train
//! cases/<case>/{pred_coarse.ply, pred_fine.ply,
//!               pred_fine_world.ply}                    predict
//! cases/<case>/{shell_mesh.ply, bpa_report.json}        reconstruct (mesh in mm)
//! cases/<case>/{margin_pred.ply, margin_pred.json}      extract-margin
//! cases/<case>/metrics.json                             evaluate
//! cases/<case>/failed.json                              any per-case stage
//! ```
//!
//! A per-case topology failure (no usable boundary, broken mesh) is recorded
//! in `failed.json`; the remaining cases still run and the stage exits with
//! the topology code. Later stages skip failed cases.

use std::path::{Path, PathBuf};

use crowngen_autodiff::checkpoint::Checkpoint;
use crowngen_core::context::{build_context, sample_for_arm, CaseInput, Manifest, Split, TrainingSample, MANIFEST_FILE};
use crowngen_core::geom::derive_seed;
use crowngen_core::marginline::{boundary_loops, extract_margin_from_mesh, select_margin_loop, write_margin, MarginLine};
use crowngen_core::metrics::{chamfer, margin_distance_stats, CaseMetrics, ChamferVariant, MM_TO_UM};
use crowngen_core::recon::{ball_pivot, estimate_normals};
use crowngen_core::{ply, synth, NormalizationTransform, PointCloud};
use crowngen_net::{train, CrownNet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ReconUnits, RunConfig};
use crate::error::{CliError, Result};

pub const SAMPLES_DIR: &str = "samples";
pub const MODEL_DIR: &str = "model";
pub const CASES_DIR: &str = "cases";
pub const INPUT_FILE: &str = "input.ply";
pub const TARGET_FILE: &str = "target.ply";
pub const SAMPLE_FILE: &str = "sample.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PRED_COARSE_FILE: &str = "pred_coarse.ply";
pub const PRED_FINE_FILE: &str = "pred_fine.ply";
pub const PRED_FINE_WORLD_FILE: &str = "pred_fine_world.ply";
pub const SHELL_MESH_FILE: &str = "shell_mesh.ply";
pub const BPA_REPORT_FILE: &str = "bpa_report.json";
pub const MARGIN_STEM: &str = "margin_pred";
pub const METRICS_FILE: &str = "metrics.json";
pub const FAILED_FILE: &str = "failed.json";

/// `sample.json`: provenance of a preprocessed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub case_id: String,
    pub split: Split,
    pub transform: NormalizationTransform,
}

/// `failed.json`: which stage gave up on a case and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMarker {
    pub stage: String,
    pub error: String,
}

/// Per-case stage outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageSummary {
    pub processed: Vec<String>,
    pub failed: Vec<String>,
    pub skipped: Vec<String>,
}

impl StageSummary {
    /// Err(Topology) when any case failed, after all cases ran.
    pub fn into_result(self, stage: &str) -> Result<Self> {
        if self.failed.is_empty() {
            Ok(self)
        } else {
            Err(CliError::Topology(format!(
                "{stage}: {} case(s) failed: {}",
                self.failed.len(),
                self.failed.join(", ")
            )))
        }
    }
}

/// Per-case stages in pipeline order; a failure marker from an earlier stage
/// makes later stages skip the case.
const CASE_STAGES: [&str; 5] = ["preprocess", "predict", "reconstruct", "extract-margin", "evaluate"];

fn stage_rank(stage: &str) -> usize {
    CASE_STAGES.iter().position(|s| *s == stage).unwrap_or(usize::MAX)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|_| CliError::missing(what, path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(what, path))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn case_filter(cfg: &RunConfig) -> Result<Option<glob::Pattern>> {
    cfg.cases
        .as_deref()
        .map(|g| glob::Pattern::new(g).map_err(|e| CliError::Input(format!("--cases {g:?}: {e}"))))
        .transpose()
}

/// Failure marker of an earlier stage, if any. A marker left by this stage
/// or a later one is stale and removed, so reruns start clean.
fn prior_failure(case_dir: &Path, stage: &str) -> Result<Option<FailureMarker>> {
    let path = case_dir.join(FAILED_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let marker: FailureMarker = read_json(&path, "failure marker")?;
    if stage_rank(&marker.stage) < stage_rank(stage) {
        Ok(Some(marker))
    } else {
        std::fs::remove_file(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok(None)
    }
}

enum CaseOutcome {
    Done,
    Skipped,
    Failed,
}

/// Runs `work` for every case concurrently, collecting outcomes in case
/// order. Topology errors become failure markers; any other error aborts the
/// stage with the first such error in case order.
fn run_cases<F>(stage: &str, cases: &[(String, PathBuf)], work: F) -> Result<StageSummary>
where
    F: Fn(&str, &Path) -> Result<()> + Sync,
{
    let outcomes: Vec<Result<CaseOutcome>> = cases
        .par_iter()
        .map(|(id, dir)| {
            if prior_failure(dir, stage)?.is_some() {
                return Ok(CaseOutcome::Skipped);
            }
            match work(id, dir) {
                Ok(()) => Ok(CaseOutcome::Done),
                Err(CliError::Topology(msg)) => {
                    create_dir(dir)?;
                    let marker = FailureMarker { stage: stage.to_string(), error: msg };
                    write_json(&dir.join(FAILED_FILE), &marker)?;
                    Ok(CaseOutcome::Failed)
                }
                Err(e) => Err(e.in_case(id)),
            }
        })
        .collect();
    let mut summary = StageSummary::default();
    for ((id, _), outcome) in cases.iter().zip(outcomes) {
        match outcome? {
            CaseOutcome::Done => summary.processed.push(id.clone()),
            CaseOutcome::Skipped => summary.skipped.push(id.clone()),
            CaseOutcome::Failed => summary.failed.push(id.clone()),
        }
    }
    summary.into_result(stage)
}

/// Writes the synthetic benchmark to `data_root`.
pub fn synth_stage(cfg: &RunConfig) -> Result<Manifest> {
    if cfg.n_cases < 3 {
        return Err(CliError::Input(format!("n_cases must be at least 3, got {}", cfg.n_cases)));
    }
    create_dir(&cfg.data_root)?;
    Ok(synth::generate_benchmark(&cfg.data_root, cfg.n_cases, cfg.seed)?)
}

fn load_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg.data_root.join(MANIFEST_FILE);
    require(&path, "dataset manifest")?;
    Ok(Manifest::load(&path)?)
}

/// Builds the context and samples input/target for every manifest case of
/// the configured arm.
pub fn preprocess_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let manifest = load_manifest(cfg)?;
    let filter = case_filter(cfg)?;
    let samples_root = cfg.arm_dir().join(SAMPLES_DIR);
    let mut cases = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    for (i, entry) in manifest.cases.iter().enumerate() {
        if filter.as_ref().is_some_and(|p| !p.matches(&entry.id)) {
            continue;
        }
        index_of.insert(entry.id.clone(), (i, entry.split));
        cases.push((entry.id.clone(), samples_root.join(&entry.id)));
    }
    if cases.is_empty() {
        return Err(CliError::Input("no manifest case matches the case selection".into()));
    }
    run_cases("preprocess", &cases, |id, out| {
        let (index, split) = index_of[id];
        let case_dir = cfg.data_root.join(id);
        require(&case_dir, "case directory")?;
        let case = CaseInput::load(&case_dir)?;
        let context = build_context(&case, cfg.gingiva_band_mm)?;
        let sample = sample_for_arm(&case, &context, &cfg.budgets, derive_seed(cfg.seed, index as u64), cfg.arm)?;
        create_dir(out)?;
        ply::write_point_cloud(out.join(INPUT_FILE), &sample.input_cloud)?;
        ply::write_point_cloud(out.join(TARGET_FILE), &sample.target_cloud)?;
        let meta = SampleMeta {
            case_id: sample.case_id,
            split,
            transform: sample.transform,
        };
        write_json(&out.join(SAMPLE_FILE), &meta)
    })
}

/// Reads one preprocessed sample directory.
pub fn load_sample(dir: &Path) -> Result<(SampleMeta, TrainingSample)> {
    let meta: SampleMeta = read_json(&dir.join(SAMPLE_FILE), "sample metadata")?;
    for f in [INPUT_FILE, TARGET_FILE] {
        require(&dir.join(f), "sample cloud")?;
    }
    let sample = TrainingSample {
        case_id: meta.case_id.clone(),
        input_cloud: ply::read_point_cloud(dir.join(INPUT_FILE))?,
        target_cloud: ply::read_point_cloud(dir.join(TARGET_FILE))?,
        transform: meta.transform,
    };
    Ok((meta, sample))
}

/// Sorted sample directories of the configured arm (failed ones excluded).
fn sample_dirs(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>> {
    let root = cfg.arm_dir().join(SAMPLES_DIR);
    require(&root, "samples directory (run preprocess first)")?;
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&root)? {
        let entry = entry?;
        if entry.path().is_dir() && !entry.path().join(FAILED_FILE).exists() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Trains on the train split, validating on the val split. Writes the
/// checkpoint and the per-epoch CSV log.
pub fn train_stage(cfg: &RunConfig) -> Result<crowngen_net::TrainLog> {
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for (_, dir) in sample_dirs(cfg)? {
        let (meta, sample) = load_sample(&dir)?;
        match meta.split {
            Split::Train => train_set.push(sample),
            Split::Val => val_set.push(sample),
            Split::Test => {}
        }
    }
    if train_set.is_empty() {
        return Err(CliError::Input(format!(
            "no train-split samples under {}",
            cfg.arm_dir().join(SAMPLES_DIR).display()
        )));
    }
    let net = CrownNet::new(cfg.model, cfg.seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    let outcome = train(net, &train_set, &val_set, &tcfg, |e| {
        eprintln!(
            "epoch {:>4}  lr {:.3e}  train cd_l1 {:.6}{}",
            e.epoch,
            e.lr,
            e.train_cd_l1,
            e.val_cd_l1.map(|v| format!("  val cd_l1 {v:.6}")).unwrap_or_default()
        );
    })?;
    let dir = cfg.arm_dir().join(MODEL_DIR);
    create_dir(&dir)?;
    outcome
        .model
        .to_checkpoint(Some(&outcome.adam), tcfg.epochs)
        .save(&dir.join(CHECKPOINT_FILE))?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    std::fs::write(&log_path, outcome.log.to_csv())
        .map_err(|e| CliError::Input(format!("{}: {e}", log_path.display())))?;
    Ok(outcome.log)
}

fn load_model(cfg: &RunConfig) -> Result<CrownNet> {
    let path = cfg.arm_dir().join(MODEL_DIR).join(CHECKPOINT_FILE);
    require(&path, "model checkpoint (run train first)")?;
    Ok(CrownNet::from_checkpoint(&Checkpoint::load(&path)?)?)
}

/// Predicts coarse and fine clouds for the test split, or for every sample
/// matching `--cases`.
pub fn predict_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let model = load_model(cfg)?;
    let filter = case_filter(cfg)?;
    let cases_root = cfg.arm_dir().join(CASES_DIR);
    let mut jobs = Vec::new();
    for (id, dir) in sample_dirs(cfg)? {
        let (meta, sample) = load_sample(&dir)?;
        let selected = match &filter {
            Some(p) => p.matches(&id),
            None => meta.split == Split::Test,
        };
        if selected {
            jobs.push((id, sample));
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Input("no preprocessed sample matches the case selection".into()));
    }
    let cases: Vec<(String, PathBuf)> = jobs.iter().map(|(id, _)| (id.clone(), cases_root.join(id))).collect();
    let by_id: std::collections::HashMap<&str, &TrainingSample> = jobs.iter().map(|(id, s)| (id.as_str(), s)).collect();
    run_cases("predict", &cases, |id, out| {
        let sample = by_id[id];
        let pred = model.predict(&sample.input_cloud)?;
        create_dir(out)?;
        ply::write_point_cloud(out.join(PRED_COARSE_FILE), &pred.coarse)?;
        ply::write_point_cloud(out.join(PRED_FINE_FILE), &pred.fine)?;
        ply::write_point_cloud(out.join(PRED_FINE_WORLD_FILE), &sample.transform.invert(&pred.fine))?;
        Ok(())
    })
}

/// Sorted case directories under `<arm>/cases`, filtered by `--cases`.
fn predicted_cases(cfg: &RunConfig) -> Result<Vec<(String, PathBuf)>> {
    let root = cfg.arm_dir().join(CASES_DIR);
    require(&root, "predictions directory (run predict first)")?;
    let filter = case_filter(cfg)?;
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&root)? {
        let entry = entry?;
        let id = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && filter.as_ref().is_none_or(|p| p.matches(&id)) {
            out.push((id, entry.path()));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::Input(format!("no predicted case under {}", root.display())));
    }
    Ok(out)
}

/// Ball-pivoting reconstruction of each predicted fine cloud. The radii
/// apply in the frame chosen by `recon_units`; the mesh is written in world
/// millimetres either way.
pub fn reconstruct_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let cases = predicted_cases(cfg)?;
    let samples_root = cfg.arm_dir().join(SAMPLES_DIR);
    run_cases("reconstruct", &cases, |id, dir| {
        let world = cfg.recon_units == ReconUnits::Millimetres;
        let path = dir.join(if world { PRED_FINE_WORLD_FILE } else { PRED_FINE_FILE });
        require(&path, "predicted cloud")?;
        let cloud = ply::read_point_cloud(&path)?;
        let oriented = estimate_normals(&cloud, cfg.normal_k)?;
        let rec = ball_pivot(&oriented, &cfg.bpa)?;
        let mut mesh = rec.mesh;
        if !world {
            let meta: SampleMeta = read_json(&samples_root.join(id).join(SAMPLE_FILE), "sample metadata")?;
            mesh.vertices = meta.transform.invert(&PointCloud::new(mesh.vertices)).points;
        }
        ply::write_mesh(dir.join(SHELL_MESH_FILE), &mesh)?;
        write_json(&dir.join(BPA_REPORT_FILE), &rec.report)?;
        if mesh.faces.is_empty() {
            return Err(CliError::Topology("ball pivoting produced no faces".into()));
        }
        Ok(())
    })
}

/// Margin line of each reconstructed shell, in world millimetres.
pub fn extract_margin_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let cases = predicted_cases(cfg)?;
    run_cases("extract-margin", &cases, |_, dir| {
        let path = dir.join(SHELL_MESH_FILE);
        require(&path, "reconstructed mesh (run reconstruct first)")?;
        let mesh = ply::read_mesh(&path)?;
        let margin = extract_margin_from_mesh(&mesh, cfg.margin_samples)?;
        let loops = boundary_loops(&mesh)?;
        let n_control = select_margin_loop(&loops).map_or(0, |l| l.vertices.len());
        write_margin(dir, MARGIN_STEM, &margin, n_control)?;
        Ok(())
    })
}

/// Shell chamfer (normalized frame) and margin distances (world, μm) per case.
pub fn evaluate_stage(cfg: &RunConfig) -> Result<StageSummary> {
    let cases = predicted_cases(cfg)?;
    let samples_root = cfg.arm_dir().join(SAMPLES_DIR);
    run_cases("evaluate", &cases, |id, dir| {
        let pred_path = dir.join(PRED_FINE_FILE);
        let margin_path = dir.join(format!("{MARGIN_STEM}.ply"));
        let target_path = samples_root.join(id).join(TARGET_FILE);
        let gt_path = cfg.data_root.join(id).join(crowngen_core::context::GT_MARGIN_FILE);
        require(&pred_path, "predicted cloud")?;
        require(&margin_path, "predicted margin (run extract-margin first)")?;
        require(&target_path, "target cloud")?;
        require(&gt_path, "ground-truth margin")?;
        let pred = ply::read_point_cloud(&pred_path)?;
        let target = ply::read_point_cloud(&target_path)?;
        let margin = ply::read_point_cloud(&margin_path)?;
        let gt = MarginLine::from_polyline(&ply::read_point_cloud(&gt_path)?.points, cfg.margin_samples)?.samples;
        let metrics = evaluate_case(id, &pred, &target, &margin, &gt)?;
        write_json(&dir.join(METRICS_FILE), &metrics)
    })
}

/// Metrics of one case: chamfer of the shell clouds and one-sided margin
/// distances converted from millimetres to micrometres.
pub fn evaluate_case(
    case_id: &str,
    pred: &PointCloud,
    target: &PointCloud,
    pred_margin: &PointCloud,
    gt_margin: &PointCloud,
) -> Result<CaseMetrics> {
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        cd_l1: chamfer(pred, target, ChamferVariant::L1)?,
        cd_l2: chamfer(pred, target, ChamferVariant::L2)?,
        margin: margin_distance_stats(pred_margin, gt_margin, MM_TO_UM)?,
    })
}
