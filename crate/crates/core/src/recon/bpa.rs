use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::OrientedCloud;
use crate::error::{GeomError, Result};
use crate::geom::{squared_distance, Point, SpatialGrid, TriangleMesh, Vector};
use crate::marginline::boundary_loops;

/// Seed triangles are searched among this many nearest unused neighbors of
/// each candidate first vertex.
const SEED_NEIGHBORS: usize = 24;

/// Ball radii, tried in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpaConfig {
    pub radii: Vec<f64>,
}

impl Default for BpaConfig {
    fn default() -> Self {
        Self {
            radii: vec![0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

impl BpaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() {
            return Err(GeomError::Parameter("at least one ball radius is required".into()));
        }
        if self.radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(GeomError::Parameter(format!("ball radii must be positive: {:?}", self.radii)));
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GeomError::Parameter(format!(
                "ball radii must be strictly ascending: {:?}",
                self.radii
            )));
        }
        Ok(())
    }
}

/// Summary of a reconstruction, written next to the mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BpaReport {
    pub n_faces: usize,
    pub n_boundary_edges: usize,
    pub n_loops: usize,
    pub unused_points: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// All input points as vertices (unreferenced ones included), so vertex
    /// indices equal input indices.
    pub mesh: TriangleMesh,
    /// Radius that created each face.
    pub face_radii: Vec<f64>,
    pub report: BpaReport,
}

/// Center of the radius-`r` ball through `a`, `b`, `c` on the side the
/// oriented face `(a, b, c)` points to.
pub fn ball_center(a: &Point, b: &Point, c: &Point, r: f64) -> Option<Point> {
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let nn = n.norm_squared();
    if nn <= 1e-24 * ab.norm_squared() * ac.norm_squared() || nn == 0.0 {
        return None;
    }
    let to_circ = (n.cross(&ab) * ac.norm_squared() + ac.cross(&n) * ab.norm_squared()) / (2.0 * nn);
    let h2 = r * r - to_circ.norm_squared();
    if h2 < 0.0 {
        return None;
    }
    Some(a + to_circ + n * (h2.sqrt() / nn.sqrt()))
}

/// Half-edge `a -> b` of a front face whose third corner is `opposite`.
#[derive(Debug, Clone, Copy)]
struct FrontEdge {
    a: usize,
    b: usize,
    opposite: usize,
}

struct Pivoter<'a> {
    points: &'a [Point],
    normals: &'a [Vector],
    grid: SpatialGrid,
    used: Vec<bool>,
    open_edges: Vec<u32>,
    edge_faces: HashMap<(usize, usize), u8>,
    half_edges: HashSet<(usize, usize)>,
    face_keys: HashSet<[usize; 3]>,
    faces: Vec<[usize; 3]>,
    face_radii: Vec<f64>,
    front: VecDeque<FrontEdge>,
    boundary: Vec<FrontEdge>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl<'a> Pivoter<'a> {
    fn new(cloud: &'a OrientedCloud) -> Self {
        let n = cloud.len();
        Self {
            points: &cloud.points.points,
            normals: &cloud.normals,
            grid: SpatialGrid::new(&cloud.points.points),
            used: vec![false; n],
            open_edges: vec![0; n],
            edge_faces: HashMap::new(),
            half_edges: HashSet::new(),
            face_keys: HashSet::new(),
            faces: Vec::new(),
            face_radii: Vec::new(),
            front: VecDeque::new(),
            boundary: Vec::new(),
        }
    }

    fn edge_count(&self, a: usize, b: usize) -> u8 {
        self.edge_faces.get(&key(a, b)).copied().unwrap_or(0)
    }

    fn face_normal(&self, f: [usize; 3]) -> Vector {
        let [a, b, c] = f.map(|i| self.points[i]);
        (b - a).cross(&(c - a))
    }

    /// The face normal must agree with the mean of its corner normals.
    fn compatible(&self, f: [usize; 3]) -> bool {
        let mean: Vector = f.iter().map(|&i| self.normals[i]).sum();
        self.face_normal(f).dot(&mean) > 0.0
    }

    fn ball_is_empty(&self, center: &Point, r: f64, f: [usize; 3]) -> bool {
        let limit = r * r * (1.0 - 1e-9);
        self.grid
            .within_radius(center, r)
            .into_iter()
            .all(|i| f.contains(&i) || squared_distance(center, &self.points[i]) >= limit)
    }

    fn add_face(&mut self, f: [usize; 3], r: f64) {
        for k in 0..3 {
            let (s, t) = (f[k], f[(k + 1) % 3]);
            self.half_edges.insert((s, t));
            let count = self.edge_faces.entry(key(s, t)).or_insert(0);
            *count += 1;
            match *count {
                1 => {
                    self.open_edges[s] += 1;
                    self.open_edges[t] += 1;
                    self.front.push_back(FrontEdge { a: s, b: t, opposite: f[(k + 2) % 3] });
                }
                2 => {
                    self.open_edges[s] -= 1;
                    self.open_edges[t] -= 1;
                }
                _ => unreachable!("edge checks keep the mesh edge-manifold"),
            }
            self.used[s] = true;
        }
        let mut sorted = f;
        sorted.sort_unstable();
        self.face_keys.insert(sorted);
        self.faces.push(f);
        self.face_radii.push(r);
    }

    fn try_seed(&mut self, i: usize, j: usize, k: usize, r: f64) -> bool {
        let mut f = [i, j, k];
        let mean = self.normals[i] + self.normals[j] + self.normals[k];
        if self.face_normal(f).dot(&mean) < 0.0 {
            f = [i, k, j];
        }
        if !self.compatible(f) {
            return false;
        }
        let [a, b, c] = f.map(|v| self.points[v]);
        match ball_center(&a, &b, &c, r) {
            Some(center) if self.ball_is_empty(&center, r, f) => {
                self.add_face(f, r);
                true
            }
            _ => false,
        }
    }

    /// Scans unused points from `cursor` and places the first valid seed.
    fn find_seed(&mut self, cursor: &mut usize, r: f64) -> bool {
        while *cursor < self.points.len() {
            let i = *cursor;
            if !self.used[i] {
                let p = self.points[i];
                let mut nbrs: Vec<(f64, usize)> = self
                    .grid
                    .within_radius(&p, 2.0 * r)
                    .into_iter()
                    .filter(|&j| j != i && !self.used[j])
                    .map(|j| (squared_distance(&p, &self.points[j]), j))
                    .collect();
                nbrs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                nbrs.truncate(SEED_NEIGHBORS);
                for x in 0..nbrs.len() {
                    for y in x + 1..nbrs.len() {
                        if self.try_seed(i, nbrs[x].1, nbrs[y].1, r) {
                            return true;
                        }
                    }
                }
            }
            // a point that cannot seed now never will at this radius:
            // vertices only ever become used
            *cursor += 1;
        }
        false
    }

    /// Rolls the ball over front edge `a -> b` away from its face; returns
    /// the first point hit and the ball center at contact.
    fn pivot(&self, e: FrontEdge, r: f64) -> Option<(usize, Point)> {
        let (pa, pb, po) = (self.points[e.a], self.points[e.b], self.points[e.opposite]);
        let start = ball_center(&pa, &pb, &po, r)?;
        let m = Point::from((pa.coords + pb.coords) * 0.5);
        let ab = pb - pa;
        let rho2 = r * r - ab.norm_squared() * 0.25;
        if rho2 <= 0.0 {
            return None;
        }
        let rho = rho2.sqrt();
        let t = ab.normalize();
        let mut u = start - m;
        u -= t * u.dot(&t);
        let u_norm = u.norm();
        if u_norm == 0.0 {
            return None;
        }
        u /= u_norm;
        let mut w = m - po;
        w -= t * w.dot(&t);
        let w = w.normalize();
        let mut v = t.cross(&u);
        let vw = v.dot(&w);
        if vw.abs() > 1e-12 {
            if vw < 0.0 {
                v = -v;
            }
        } else {
            // start center lies in the face plane: roll over the top
            let nf = ab.cross(&(po - pa));
            let up = if u.dot(&w) < 0.0 { 1.0 } else { -1.0 };
            if v.dot(&nf) * up < 0.0 {
                v = -v;
            }
        }

        let mut best: Option<(f64, usize)> = None;
        for p in self.grid.within_radius(&m, rho + r) {
            if p == e.a || p == e.b || p == e.opposite {
                continue;
            }
            let d = self.points[p] - m;
            let (ca, cb) = (d.dot(&u), d.dot(&v));
            let c = (rho2 + d.norm_squared() - r * r) / (2.0 * rho);
            let amp = ca.hypot(cb);
            if amp <= 0.0 || c > amp {
                continue;
            }
            let enter = cb.atan2(ca) - (c / amp).clamp(-1.0, 1.0).acos();
            let mut theta = enter.rem_euclid(TAU);
            if theta > TAU - 1e-9 {
                theta = 0.0;
            }
            if best.map_or(true, |(bt, _)| theta < bt - 1e-12) {
                best = Some((theta, p));
            }
        }
        let (theta, p) = best?;
        let center = m + (u * theta.cos() + v * theta.sin()) * rho;
        Some((p, center))
    }

    fn accept_pivot(&self, e: FrontEdge, p: usize, center: &Point, r: f64) -> bool {
        if self.used[p] && self.open_edges[p] == 0 {
            return false;
        }
        let f = [e.b, e.a, p];
        let mut sorted = f;
        sorted.sort_unstable();
        if self.face_keys.contains(&sorted) || !self.compatible(f) {
            return false;
        }
        let nf = self.face_normal(f);
        if (center - self.points[p]).dot(&nf) < -1e-12 * r * nf.norm() {
            return false;
        }
        for (s, t) in [(e.b, e.a), (e.a, p), (p, e.b)] {
            if self.half_edges.contains(&(s, t)) {
                return false;
            }
        }
        if self.edge_count(e.a, p) >= 2 || self.edge_count(p, e.b) >= 2 {
            return false;
        }
        self.ball_is_empty(center, r, f)
    }

    fn expand(&mut self, r: f64) {
        while let Some(e) = self.front.pop_front() {
            if self.edge_count(e.a, e.b) != 1 {
                continue;
            }
            match self.pivot(e, r) {
                Some((p, center)) if self.accept_pivot(e, p, &center, r) => self.add_face([e.b, e.a, p], r),
                _ => self.boundary.push(e),
            }
        }
    }
}

/// Multi-radius ball pivoting.
///
/// Each radius first re-pivots the open edges left by the previous one, then
/// keeps seeding and growing until no seed is left. Faces satisfy the empty
/// ball property for the radius that created them, agree with the mean corner
/// normals and never make an edge non-manifold.
pub fn ball_pivot(cloud: &OrientedCloud, cfg: &BpaConfig) -> Result<Reconstruction> {
    if cloud.len() < 3 {
        return Err(GeomError::Size(format!("ball pivoting needs at least 3 points, got {}", cloud.len())));
    }
    cloud.validate()?;
    cloud.points.validate()?;
    cfg.validate()?;

    let mut pv = Pivoter::new(cloud);
    for (pass, &r) in cfg.radii.iter().enumerate() {
        if pass > 0 {
            let reopened: Vec<FrontEdge> = pv.boundary.drain(..).collect();
            pv.front.extend(reopened);
        }
        pv.expand(r);
        let mut cursor = 0;
        while pv.find_seed(&mut cursor, r) {
            pv.expand(r);
        }
    }

    let n_boundary_edges = pv.edge_faces.values().filter(|&&c| c == 1).count();
    let unused_points = pv.used.iter().filter(|&&u| !u).count();
    let mesh = TriangleMesh::new(cloud.points.points.clone(), pv.faces);
    let mut diagnostics = Vec::new();
    if mesh.faces.is_empty() {
        diagnostics.push("no seed triangle found at any radius (degenerate or collinear input)".to_string());
    }
    let n_loops = match boundary_loops(&mesh) {
        Ok(loops) => loops.len(),
        Err(e) => {
            diagnostics.push(format!("boundary loops: {e}"));
            0
        }
    };
    let report = BpaReport {
        n_faces: mesh.faces.len(),
        n_boundary_edges,
        n_loops,
        unused_points,
        diagnostics,
    };
    Ok(Reconstruction {
        mesh,
        face_radii: pv.face_radii,
        report,
    })
}
