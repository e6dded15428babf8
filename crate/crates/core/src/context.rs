//! Conditioning context from labeled arches, the on-disk case layout, and
//! fixed-budget training samples.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{
    derive_seed, normalize, sample_mesh_surface, NormalizationTransform, Point, PointCloud, SpatialGrid,
    TriangleMesh, Vector, GINGIVA_CLASS, TOOTH_CLASSES,
};
use crate::marginline::{densify_ground_truth, fit_closed_spline};
use crate::ply;

pub const DEFAULT_GINGIVA_BAND_MM: f64 = 2.0;
pub const N_OPPOSING_TEETH: usize = 3;

/// One restoration case in world millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseInput {
    pub case_id: String,
    pub prep_arch: TriangleMesh,
    pub opposing_arch: Option<TriangleMesh>,
    pub die: TriangleMesh,
    pub gt_shell: TriangleMesh,
    /// Closed margin polyline in cycle order; absent when only the baseline
    /// arm is needed.
    pub gt_margin_polyline: Option<Vec<Point>>,
    pub prep_class: u32,
}

/// `meta.json` of a case directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub prep_class: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub const PREP_ARCH_FILE: &str = "prep_arch.ply";
pub const OPPOSING_ARCH_FILE: &str = "opposing_arch.ply";
pub const DIE_FILE: &str = "die.ply";
pub const GT_SHELL_FILE: &str = "gt_shell.ply";
pub const GT_MARGIN_FILE: &str = "gt_margin.ply";
pub const META_FILE: &str = "meta.json";

impl CaseInput {
    /// Reads a case directory. The opposing arch and the margin are
    /// optional on disk; their absence surfaces where they are needed.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| GeomError::io(&meta_path, e))?;
        let meta: CaseMeta = serde_json::from_str(&meta_text)?;
        let opposing_path = dir.join(OPPOSING_ARCH_FILE);
        let opposing_arch = if opposing_path.exists() {
            Some(ply::read_mesh(&opposing_path)?)
        } else {
            None
        };
        let margin_path = dir.join(GT_MARGIN_FILE);
        let gt_margin_polyline = if margin_path.exists() {
            Some(ply::read_point_cloud(&margin_path)?.points)
        } else {
            None
        };
        Ok(Self {
            case_id: meta.case_id,
            prep_arch: ply::read_mesh(dir.join(PREP_ARCH_FILE))?,
            opposing_arch,
            die: ply::read_mesh(dir.join(DIE_FILE))?,
            gt_shell: ply::read_mesh(dir.join(GT_SHELL_FILE))?,
            gt_margin_polyline,
            prep_class: meta.prep_class,
        })
    }

    pub fn write(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| GeomError::io(dir, e))?;
        ply::write_mesh(dir.join(PREP_ARCH_FILE), &self.prep_arch)?;
        if let Some(opp) = &self.opposing_arch {
            ply::write_mesh(dir.join(OPPOSING_ARCH_FILE), opp)?;
        }
        ply::write_mesh(dir.join(DIE_FILE), &self.die)?;
        ply::write_mesh(dir.join(GT_SHELL_FILE), &self.gt_shell)?;
        if let Some(margin) = &self.gt_margin_polyline {
            ply::write_point_cloud(dir.join(GT_MARGIN_FILE), &PointCloud::new(margin.clone()))?;
        }
        let meta = CaseMeta {
            case_id: self.case_id.clone(),
            prep_class: self.prep_class,
            seed,
        };
        let path = dir.join(META_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| GeomError::io(&path, e))
    }

    fn margin(&self) -> Result<&[Point]> {
        self.gt_margin_polyline
            .as_deref()
            .ok_or_else(|| GeomError::Input(format!("case {} has no margin polyline", self.case_id)))
    }
}

/// Split tag of a dataset case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

/// `manifest.json` at a dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub cases: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GeomError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| GeomError::io(path, e))
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.cases
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.id.as_str())
            .collect()
    }
}

fn labels(mesh: &TriangleMesh, what: &str) -> Result<Vec<u32>> {
    mesh.validate()?;
    let labels = mesh
        .labels
        .clone()
        .ok_or_else(|| GeomError::Label(format!("{what} has no face labels")))?;
    if let Some(bad) = labels.iter().find(|&&l| l > TOOTH_CLASSES) {
        return Err(GeomError::Label(format!("{what} has invalid class {bad}")));
    }
    Ok(labels)
}

/// Mean of the distinct vertices of faces carrying each tooth class.
pub fn label_centroids(mesh: &TriangleMesh) -> BTreeMap<u32, Point> {
    let Some(labels) = &mesh.labels else {
        return BTreeMap::new();
    };
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (f, &l) in mesh.faces.iter().zip(labels) {
        if l != GINGIVA_CLASS {
            members.entry(l).or_default().extend_from_slice(f);
        }
    }
    members
        .into_iter()
        .map(|(l, mut vs)| {
            vs.sort_unstable();
            vs.dedup();
            let sum: Vector = vs.iter().map(|&v| mesh.vertices[v].coords).sum();
            (l, Point::from(sum / vs.len() as f64))
        })
        .collect()
}

/// Classes chosen for the context of a case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextSelection {
    pub neighbor_classes: Vec<u32>,
    pub opposing_classes: Vec<u32>,
}

/// Neighbor classes `prep ± 1` present in the prep arch and the opposing
/// classes whose centroids are nearest the prep centroid.
pub fn select_context_classes(case: &CaseInput) -> Result<ContextSelection> {
    let prep_labels = labels(&case.prep_arch, "prep arch")?;
    if case.prep_class == GINGIVA_CLASS || !prep_labels.contains(&case.prep_class) {
        return Err(GeomError::Label(format!(
            "prep class {} absent from the prep arch labels",
            case.prep_class
        )));
    }
    let opposing = case
        .opposing_arch
        .as_ref()
        .ok_or_else(|| GeomError::Input(format!("case {} has no opposing arch", case.case_id)))?;
    labels(opposing, "opposing arch")?;

    let neighbor_classes: Vec<u32> = [case.prep_class - 1, case.prep_class + 1]
        .into_iter()
        .filter(|&c| c != GINGIVA_CLASS && c <= TOOTH_CLASSES && prep_labels.contains(&c))
        .collect();
    if neighbor_classes.is_empty() {
        return Err(GeomError::Label(format!(
            "prep class {} has no neighbor tooth in the arch",
            case.prep_class
        )));
    }
    let prep_centroid = label_centroids(&case.prep_arch)[&case.prep_class];
    let mut ranked: Vec<(f64, u32)> = label_centroids(opposing)
        .into_iter()
        .map(|(l, c)| ((c - prep_centroid).norm(), l))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let opposing_classes = ranked.into_iter().take(N_OPPOSING_TEETH).map(|(_, l)| l).collect();
    Ok(ContextSelection {
        neighbor_classes,
        opposing_classes,
    })
}

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Indexes triangles by centroid to find those within a distance of a point.
struct TriangleIndex {
    triangles: Vec<[Point; 3]>,
    grid: SpatialGrid,
    reach: f64,
}

impl TriangleIndex {
    fn new(triangles: Vec<[Point; 3]>) -> Self {
        let centroids: Vec<Point> = triangles
            .iter()
            .map(|t| Point::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let reach = triangles
            .iter()
            .zip(&centroids)
            .map(|(t, c)| t.iter().map(|v| (v - c).norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        Self {
            grid: SpatialGrid::new(&centroids),
            triangles,
            reach,
        }
    }

    fn within(&self, p: &Point, band: f64) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        self.grid.within_radius(p, band + self.reach).into_iter().any(|t| {
            let [a, b, c] = &self.triangles[t];
            (closest_point_on_triangle(p, a, b, c) - p).norm() < band
        })
    }
}

/// Context sub-mesh: neighbor teeth, the nearest opposing teeth and gingiva
/// faces with a vertex strictly closer than `gingiva_band_mm` to any
/// selected tooth face. Face labels are kept.
pub fn build_context(case: &CaseInput, gingiva_band_mm: f64) -> Result<TriangleMesh> {
    if !(gingiva_band_mm >= 0.0 && gingiva_band_mm.is_finite()) {
        return Err(GeomError::Parameter(format!("gingiva band must be >= 0, got {gingiva_band_mm}")));
    }
    let selection = select_context_classes(case)?;
    let opposing = case.opposing_arch.as_ref().expect("checked by selection");
    let arches = [
        (&case.prep_arch, &selection.neighbor_classes),
        (opposing, &selection.opposing_classes),
    ];

    let mut tooth_faces: Vec<Vec<usize>> = Vec::new();
    let mut selected_triangles = Vec::new();
    for (mesh, classes) in arches {
        let labels = mesh.labels.as_ref().expect("validated labels");
        let faces: Vec<usize> = (0..mesh.faces.len()).filter(|&f| classes.contains(&labels[f])).collect();
        selected_triangles.extend(faces.iter().map(|&f| mesh.face_points(f)));
        tooth_faces.push(faces);
    }
    let index = TriangleIndex::new(selected_triangles);

    let mut parts = Vec::new();
    for ((mesh, _), mut faces) in arches.into_iter().zip(tooth_faces) {
        let labels = mesh.labels.as_ref().expect("validated labels");
        let near: Vec<bool> = if gingiva_band_mm > 0.0 {
            mesh.vertices.iter().map(|v| index.within(v, gingiva_band_mm)).collect()
        } else {
            vec![false; mesh.vertices.len()]
        };
        faces.extend(
            (0..mesh.faces.len())
                .filter(|&f| labels[f] == GINGIVA_CLASS && mesh.faces[f].iter().any(|&v| near[v])),
        );
        faces.sort_unstable();
        parts.push(mesh.submesh(&faces));
    }
    let context = TriangleMesh::merge(&[&parts[0], &parts[1]]);
    if context.faces.is_empty() {
        return Err(GeomError::DegenerateMesh("context selection is empty".into()));
    }
    Ok(context)
}

/// Point budgets of a training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub context: usize,
    pub margin: usize,
    pub shell: usize,
    pub die: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            context: 10240,
            margin: 1000,
            shell: 1568,
            die: 1024,
        }
    }
}

/// Which experimental arm a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    WithMargin,
    Baseline,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::WithMargin => "with-margin",
            Arm::Baseline => "baseline",
        }
    }
}

/// Sampled parts of a case in world millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledParts {
    pub context: PointCloud,
    pub margin: Option<PointCloud>,
    pub die: PointCloud,
    pub shell: PointCloud,
}

const CONTEXT_STREAM: u64 = 0;
const DIE_STREAM: u64 = 1;
const SHELL_STREAM: u64 = 2;

/// Samples each part from its own random stream, so the context and die of
/// both arms coincide for one seed.
pub fn sample_parts(
    case: &CaseInput,
    context: &TriangleMesh,
    budgets: &Budgets,
    seed: u64,
    arm: Arm,
) -> Result<SampledParts> {
    if context.faces.is_empty() {
        return Err(GeomError::DegenerateMesh("context mesh has no faces".into()));
    }
    let margin = match arm {
        Arm::WithMargin => {
            let spline = fit_closed_spline(case.margin()?)?;
            Some(if budgets.margin == 0 {
                PointCloud::default()
            } else {
                spline.resample_arclength(budgets.margin)?
            })
        }
        Arm::Baseline => None,
    };
    Ok(SampledParts {
        context: sample_mesh_surface(context, budgets.context, derive_seed(seed, CONTEXT_STREAM))?,
        margin,
        die: sample_mesh_surface(&case.die, budgets.die, derive_seed(seed, DIE_STREAM))?,
        shell: sample_mesh_surface(&case.gt_shell, budgets.shell, derive_seed(seed, SHELL_STREAM))?,
    })
}

/// Network input and target in one normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub case_id: String,
    pub input_cloud: PointCloud,
    pub target_cloud: PointCloud,
    pub transform: NormalizationTransform,
}

impl SampledParts {
    /// Input = context ∪ margin ∪ die, target = shell ∪ margin, both under the
    /// input set's normalization.
    pub fn into_sample(self, case_id: &str) -> Result<TrainingSample> {
        let mut input = self.context;
        let target = match &self.margin {
            Some(margin) => {
                input.extend_from(margin);
                densify_ground_truth(&self.shell, margin)
            }
            None => self.shell,
        };
        input.extend_from(&self.die);
        let (input_cloud, transform) = normalize(&input)?;
        Ok(TrainingSample {
            case_id: case_id.to_string(),
            input_cloud,
            target_cloud: transform.apply(&target),
            transform,
        })
    }
}

/// With-margin training sample.
pub fn assemble_sample(case: &CaseInput, context: &TriangleMesh, budgets: &Budgets, seed: u64) -> Result<TrainingSample> {
    sample_parts(case, context, budgets, seed, Arm::WithMargin)?.into_sample(&case.case_id)
}

/// Ablation sample: margin points absent from both input and target.
pub fn baseline_sample(case: &CaseInput, context: &TriangleMesh, budgets: &Budgets, seed: u64) -> Result<TrainingSample> {
    sample_parts(case, context, budgets, seed, Arm::Baseline)?.into_sample(&case.case_id)
}

pub fn sample_for_arm(
    case: &CaseInput,
    context: &TriangleMesh,
    budgets: &Budgets,
    seed: u64,
    arm: Arm,
) -> Result<TrainingSample> {
    sample_parts(case, context, budgets, seed, arm)?.into_sample(&case.case_id)
}
