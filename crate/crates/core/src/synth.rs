//! Procedural dental cases: two opposing arches of labeled tooth caps on
//! gingiva ribbons, a prepared die and the crown shell it lost.
//!
//! Units are millimetres. The lower arch carries the prep; the upper arch is
//! its mirror image across an occlusal plane. The margin ring is a single
//! vertex loop shared by the die and the shell, so margin distances between
//! them are exactly zero.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{CaseInput, Manifest, ManifestEntry, Split, MANIFEST_FILE};
use crate::error::{GeomError, Result};
use crate::geom::{derive_seed, Point, TriangleMesh, Vector, GINGIVA_CLASS, TOOTH_CLASSES};
use crate::marginline::{boundary_loops, select_margin_loop};

const RING: usize = 32;
const CAP_RINGS: usize = 10;
const SHELL_RINGS: usize = 8;
const COLLAR_RINGS: usize = 3;
const RIBBON_ACROSS: usize = 7;
/// Tooth bases sink this far below the gingiva line.
const BASE_DEPTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    /// Mesio-distal tooth widths, front teeth to molars.
    pub tooth_size_mm: (f64, f64),
    pub arch_radius_mm: f64,
    pub prep_class: u32,
    /// Margin height as a fraction of the crown height above the base.
    pub margin_height_frac: f64,
    /// Uniform white-noise amplitude on every non-prep vertex.
    pub noise_mm: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 0,
            tooth_size_mm: (6.0, 10.5),
            arch_radius_mm: 25.0,
            prep_class: 5,
            margin_height_frac: 0.3,
            noise_mm: 0.02,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.tooth_size_mm;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(GeomError::Parameter(format!("bad tooth size range {:?}", self.tooth_size_mm)));
        }
        if !(self.arch_radius_mm > 0.0 && self.arch_radius_mm.is_finite()) {
            return Err(GeomError::Parameter("arch radius must be positive".into()));
        }
        if !(1..=TOOTH_CLASSES).contains(&self.prep_class) {
            return Err(GeomError::Parameter(format!("prep class {} outside 1..=14", self.prep_class)));
        }
        if !(self.margin_height_frac > 0.05 && self.margin_height_frac < 0.8) {
            return Err(GeomError::Parameter("margin height fraction must lie in (0.05, 0.8)".into()));
        }
        if !(self.noise_mm >= 0.0 && self.noise_mm.is_finite()) {
            return Err(GeomError::Parameter("noise amplitude must be >= 0".into()));
        }
        Ok(())
    }
}

/// Shape of one tooth crown in its local frame.
#[derive(Debug, Clone, Copy)]
struct ToothShape {
    center: Point,
    tangent: Vector,
    radial: Vector,
    half_width: f64,
    half_depth: f64,
    height: f64,
    cusp: f64,
    cusp_phase: f64,
}

impl ToothShape {
    /// Deformed hemisphere: `phi` is the polar angle from the crown tip,
    /// `psi` the azimuth. Cusps vanish at the tip and at the base.
    fn at(&self, phi: f64, psi: f64) -> Point {
        let (s, c) = phi.sin_cos();
        let x = self.half_width * s * psi.cos();
        let y = self.half_depth * s * psi.sin();
        let z = -BASE_DEPTH + (self.height + BASE_DEPTH) * c + self.cusp * s * s * c * (2.0 * psi + self.cusp_phase).cos();
        self.center + self.tangent * x + self.radial * y + Vector::z() * z
    }

    fn axis_point(&self, z: f64) -> Point {
        Point::new(self.center.x, self.center.y, z)
    }
}

fn ring_psi(j: usize) -> f64 {
    TAU * j as f64 / RING as f64
}

/// Faces between an upper ring and the ring below it, outward facing.
fn ring_strip(upper: &[usize], lower: &[usize], faces: &mut Vec<[usize; 3]>) {
    let n = upper.len();
    for j in 0..n {
        let k = (j + 1) % n;
        faces.push([upper[j], lower[j], lower[k]]);
        faces.push([upper[j], lower[k], upper[k]]);
    }
}

fn fan(center: usize, ring: &[usize], faces: &mut Vec<[usize; 3]>) {
    let n = ring.len();
    for j in 0..n {
        faces.push([center, ring[j], ring[(j + 1) % n]]);
    }
}

fn push_ring(vertices: &mut Vec<Point>, points: impl Iterator<Item = Point>) -> Vec<usize> {
    points
        .map(|p| {
            vertices.push(p);
            vertices.len() - 1
        })
        .collect()
}

/// Closed-top tooth cap from the tip down to the base ring.
fn tooth_mesh(shape: &ToothShape) -> TriangleMesh {
    let mut v = vec![shape.at(0.0, 0.0)];
    let mut f = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    for k in 1..=CAP_RINGS {
        let phi = 0.5 * PI * k as f64 / CAP_RINGS as f64;
        let ring = push_ring(&mut v, (0..RING).map(|j| shape.at(phi, ring_psi(j))));
        match &prev {
            None => fan(0, &ring, &mut f),
            Some(up) => ring_strip(up, &ring, &mut f),
        }
        prev = Some(ring);
    }
    TriangleMesh::new(v, f)
}

/// Die and shell of a prepared tooth sharing one margin ring.
struct Preparation {
    die: TriangleMesh,
    shell: TriangleMesh,
    margin: Vec<Point>,
}

fn prepare(shape: &ToothShape, margin_frac: f64, rng: &mut ChaCha8Rng) -> Preparation {
    let phi0 = margin_frac.clamp(0.05, 0.95).acos();
    let amp = rng.gen_range(0.03..0.09);
    let phase = rng.gen_range(0.0..TAU);
    let phi_m = |psi: f64| phi0 + amp * (2.0 * psi + phase).sin();
    let margin: Vec<Point> = (0..RING).map(|j| shape.at(phi_m(ring_psi(j)), ring_psi(j))).collect();

    // shell: tip down to the margin ring
    let mut sv = vec![shape.at(0.0, 0.0)];
    let mut sf = Vec::new();
    let mut prev: Option<Vec<usize>> = None;
    for k in 1..=SHELL_RINGS {
        let ring = if k == SHELL_RINGS {
            push_ring(&mut sv, margin.iter().copied())
        } else {
            let t = k as f64 / SHELL_RINGS as f64;
            push_ring(&mut sv, (0..RING).map(|j| shape.at(t * phi_m(ring_psi(j)), ring_psi(j))))
        };
        match &prev {
            None => fan(0, &ring, &mut sf),
            Some(up) => ring_strip(up, &ring, &mut sf),
        }
        prev = Some(ring);
    }

    // die: rounded top, tapered walls, shoulder, then the collar of natural
    // tooth surface from the margin down to the base
    let shoulder = rng.gen_range(0.12..0.2);
    let taper = rng.gen_range(0.5..0.65);
    let mean_z = margin.iter().map(|p| p.z).sum::<f64>() / RING as f64;
    let top_z = margin.iter().map(|p| p.z).fold(f64::MIN, f64::max) + 0.55 * (shape.height - mean_z);
    let inward = |p: &Point, z: f64, keep: f64| {
        let axis = shape.axis_point(p.z);
        let h = (p - axis) * keep;
        Point::new(axis.x + h.x, axis.y + h.y, z)
    };
    let mut dv = vec![shape.axis_point(top_z + 0.3)];
    let mut df = Vec::new();
    let top = push_ring(&mut dv, margin.iter().map(|p| inward(p, top_z, taper)));
    fan(0, &top, &mut df);
    let inset = push_ring(&mut dv, margin.iter().map(|p| inward(p, p.z, 1.0 - shoulder)));
    ring_strip(&top, &inset, &mut df);
    let rim = push_ring(&mut dv, margin.iter().copied());
    ring_strip(&inset, &rim, &mut df);
    let mut up = rim;
    for k in 1..=COLLAR_RINGS {
        let t = k as f64 / COLLAR_RINGS as f64;
        let ring = push_ring(
            &mut dv,
            (0..RING).map(|j| {
                let psi = ring_psi(j);
                shape.at(phi_m(psi) + t * (0.5 * PI - phi_m(psi)), psi)
            }),
        );
        ring_strip(&up, &ring, &mut df);
        up = ring;
    }

    Preparation {
        die: TriangleMesh::new(dv, df),
        shell: TriangleMesh::new(sv, sf),
        margin,
    }
}

/// Upward-facing gum strip under the teeth along an arc of radius `r`.
fn gingiva_ribbon(r: f64, theta_lo: f64, theta_hi: f64) -> TriangleMesh {
    let along = 96;
    let mut v = Vec::new();
    for i in 0..=along {
        let th = theta_lo + (theta_hi - theta_lo) * i as f64 / along as f64;
        for j in 0..RIBBON_ACROSS {
            let off = -8.0 + 16.0 * j as f64 / (RIBBON_ACROSS - 1) as f64;
            let rr = r + off;
            v.push(Point::new(rr * th.sin(), rr * th.cos(), 0.3 - 3.0 * (off / 8.0).powi(2)));
        }
    }
    let id = |i: usize, j: usize| i * RIBBON_ACROSS + j;
    let mut f = Vec::new();
    for i in 0..along {
        for j in 0..RIBBON_ACROSS - 1 {
            f.push([id(i, j), id(i + 1, j), id(i, j + 1)]);
            f.push([id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh::new(v, f)
}

/// Tooth shapes of one arch, class `c` at index `c - 1`, placed along an arc.
fn arch_layout(params: &SynthParams, radius_scale: f64, rng: &mut ChaCha8Rng) -> (Vec<ToothShape>, f64, f64, f64) {
    let n = TOOTH_CLASSES as usize;
    let (lo, hi) = params.tooth_size_mm;
    let widths: Vec<f64> = (0..n)
        .map(|i| {
            // front teeth narrow, molars wide
            let k = ((i as f64 - 6.5).abs() / 6.5).powf(1.5);
            (lo + (hi - lo) * k) * rng.gen_range(0.95..1.05)
        })
        .collect();
    let gap = 0.3;
    let total: f64 = widths.iter().map(|w| w + gap).sum();
    let r = (params.arch_radius_mm * radius_scale).max(total / (0.95 * PI));
    let mut s = -0.5 * total;
    let mut shapes = Vec::with_capacity(n);
    for &w in &widths {
        let theta = (s + 0.5 * (w + gap)) / r;
        s += w + gap;
        shapes.push(ToothShape {
            center: Point::new(r * theta.sin(), r * theta.cos(), 0.0),
            tangent: Vector::new(theta.cos(), -theta.sin(), 0.0),
            radial: Vector::new(theta.sin(), theta.cos(), 0.0),
            half_width: 0.49 * w,
            half_depth: 0.49 * w * rng.gen_range(0.85..1.1),
            height: rng.gen_range(6.5..8.5),
            cusp: rng.gen_range(0.2..0.9),
            cusp_phase: rng.gen_range(0.0..TAU),
        });
    }
    let theta_pad = 4.0 / r;
    (shapes, r, -0.5 * total / r - theta_pad, 0.5 * total / r + theta_pad)
}

fn jitter(mesh: &mut TriangleMesh, amp: f64, rng: &mut ChaCha8Rng) {
    if amp > 0.0 {
        for p in &mut mesh.vertices {
            for a in 0..3 {
                p[a] += rng.gen_range(-amp..=amp);
            }
        }
    }
}

fn labeled(mesh: TriangleMesh, class: u32) -> TriangleMesh {
    let n = mesh.faces.len();
    mesh.with_labels(vec![class; n])
}

/// Mirror across the plane `z = plane` (winding flipped to stay outward).
fn mirror_z(mut mesh: TriangleMesh, plane: f64) -> TriangleMesh {
    for p in &mut mesh.vertices {
        p.z = 2.0 * plane - p.z;
    }
    for f in &mut mesh.faces {
        f.swap(1, 2);
    }
    mesh
}

/// Builds one case; deterministic in `params`.
pub fn generate_case(case_id: &str, params: &SynthParams) -> Result<CaseInput> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let (lower, r_lo, a0, a1) = arch_layout(params, 1.0, &mut rng);
    let (upper, r_up, b0, b1) = arch_layout(params, 1.04, &mut rng);

    let prep_idx = params.prep_class as usize - 1;
    let prep = prepare(&lower[prep_idx], params.margin_height_frac, &mut rng);

    let mut lower_parts = Vec::new();
    for (i, shape) in lower.iter().enumerate() {
        if i == prep_idx {
            lower_parts.push(labeled(prep.die.clone(), params.prep_class));
        } else {
            let mut m = tooth_mesh(shape);
            jitter(&mut m, params.noise_mm, &mut rng);
            lower_parts.push(labeled(m, i as u32 + 1));
        }
    }
    let mut gum = gingiva_ribbon(r_lo, a0, a1);
    jitter(&mut gum, params.noise_mm, &mut rng);
    lower_parts.push(labeled(gum, GINGIVA_CLASS));

    // occlusal plane halfway between the tallest tips, so cusps nearly meet
    let plane = 0.5 * (lower.iter().chain(&upper).map(|t| t.height).fold(0.0, f64::max) + 0.2);
    let mut upper_parts = Vec::new();
    for (i, shape) in upper.iter().enumerate() {
        let mut m = tooth_mesh(shape);
        jitter(&mut m, params.noise_mm, &mut rng);
        upper_parts.push(labeled(mirror_z(m, plane), i as u32 + 1));
    }
    let mut gum = gingiva_ribbon(r_up, b0, b1);
    jitter(&mut gum, params.noise_mm, &mut rng);
    upper_parts.push(labeled(mirror_z(gum, plane), GINGIVA_CLASS));

    let case = CaseInput {
        case_id: case_id.to_string(),
        prep_arch: TriangleMesh::merge(&lower_parts.iter().collect::<Vec<_>>()),
        opposing_arch: Some(TriangleMesh::merge(&upper_parts.iter().collect::<Vec<_>>())),
        die: prep.die,
        gt_shell: prep.shell,
        gt_margin_polyline: Some(prep.margin),
        prep_class: params.prep_class,
    };
    check_shell_rim(&case)?;
    Ok(case)
}

/// The shell's longest boundary loop must be the stored margin polyline.
fn check_shell_rim(case: &CaseInput) -> Result<()> {
    let loops = boundary_loops(&case.gt_shell)?;
    let rim = select_margin_loop(&loops).ok_or(GeomError::NoBoundary)?;
    let margin = case.gt_margin_polyline.as_deref().unwrap_or_default();
    let mut rim_pts: Vec<[u64; 3]> = rim
        .vertices
        .iter()
        .map(|&v| case.gt_shell.vertices[v].coords.map(f64::to_bits).into())
        .collect();
    let mut margin_pts: Vec<[u64; 3]> = margin.iter().map(|p| p.coords.map(f64::to_bits).into()).collect();
    rim_pts.sort_unstable();
    margin_pts.sort_unstable();
    if rim_pts != margin_pts {
        return Err(GeomError::Topology("generated shell rim differs from the margin polyline".into()));
    }
    Ok(())
}

/// Case counts `(train, val, test)`: val and test take 8 % and 20 %
/// rounded down but at least one case each, train takes the rest.
pub fn split_counts(n: usize) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(GeomError::Size(format!("a benchmark needs at least 3 cases, got {n}")));
    }
    let val = (n * 8 / 100).max(1);
    let test = (n * 20 / 100).max(1);
    Ok((n - val - test, val, test))
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

/// Parameters of case `index` of a benchmark drawn with `seed`.
pub fn benchmark_params(seed: u64, index: usize) -> SynthParams {
    let case_seed = derive_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    SynthParams {
        seed: case_seed,
        prep_class: rng.gen_range(2..=TOOTH_CLASSES - 1),
        margin_height_frac: rng.gen_range(0.22..0.38),
        ..SynthParams::default()
    }
}

/// Writes `n` cases under `root` plus `manifest.json`. Train cases come
/// first, then validation, then test.
pub fn generate_benchmark(root: &Path, n: usize, seed: u64) -> Result<Manifest> {
    let (train, val, _) = split_counts(n)?;
    let mut cases = Vec::with_capacity(n);
    for index in 0..n {
        let id = case_id(index);
        let params = benchmark_params(seed, index);
        generate_case(&id, &params)?.write(&root.join(&id), Some(params.seed))?;
        let split = if index < train {
            Split::Train
        } else if index < train + val {
            Split::Val
        } else {
            Split::Test
        };
        cases.push(ManifestEntry { id, split });
    }
    let manifest = Manifest { seed, cases };
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginline::boundary_edges;

    #[test]
    fn split_rule() {
        assert_eq!(split_counts(125).unwrap(), (90, 10, 25));
        assert_eq!(split_counts(10).unwrap(), (7, 1, 2));
        assert_eq!(split_counts(20).unwrap(), (15, 1, 4));
        assert_eq!(split_counts(3).unwrap(), (1, 1, 1));
        assert!(matches!(split_counts(2), Err(GeomError::Size(_))));
    }

    #[test]
    fn shell_is_open_with_one_rim() {
        let case = generate_case("c", &SynthParams::default()).unwrap();
        let loops = boundary_loops(&case.gt_shell).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].vertices.len(), RING);
        assert_eq!(boundary_edges(&case.gt_shell).len(), RING);
    }

    #[test]
    fn margin_lies_on_die_and_shell() {
        let case = generate_case("c", &SynthParams { seed: 9, ..Default::default() }).unwrap();
        for p in case.gt_margin_polyline.as_ref().unwrap() {
            for mesh in [&case.die, &case.gt_shell] {
                let d = mesh.vertices.iter().map(|v| (v - p).norm()).fold(f64::INFINITY, f64::min);
                assert!(d < 1e-6);
            }
        }
    }

    #[test]
    fn every_class_labeled() {
        let case = generate_case("c", &SynthParams { prep_class: 1, ..Default::default() }).unwrap();
        for arch in [&case.prep_arch, case.opposing_arch.as_ref().unwrap()] {
            arch.validate().unwrap();
            let mut seen: Vec<u32> = arch.labels.clone().unwrap();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen, (0..=TOOTH_CLASSES).collect::<Vec<_>>());
        }
    }

    #[test]
    fn shell_faces_point_outward() {
        let case = generate_case("c", &SynthParams::default()).unwrap();
        let shell = &case.gt_shell;
        let c = shell.vertex_cloud().centroid().unwrap();
        let below = Point::new(c.x, c.y, c.z - 5.0);
        for f in 0..shell.faces.len() {
            let [a, b, d] = shell.face_points(f);
            let n = (b - a).cross(&(d - a));
            assert!(n.dot(&(a - below)) > 0.0);
        }
    }

    #[test]
    fn invalid_params() {
        for p in [
            SynthParams { prep_class: 0, ..Default::default() },
            SynthParams { prep_class: 15, ..Default::default() },
            SynthParams { tooth_size_mm: (0.0, 1.0), ..Default::default() },
            SynthParams { noise_mm: -1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_case("c", &p), Err(GeomError::Parameter(_))));
        }
    }
}
