//! Point and mesh types plus the kernels every later stage builds on:
//! farthest point sampling, k-nearest-neighbor queries, normalization,
//! augmentation and area-weighted surface sampling.

mod neighbors;
mod sampling;
mod transform;

pub use neighbors::{knn, knn_brute_force, nearest_neighbors, squared_distance, SpatialGrid};
pub use sampling::{
    derive_seed, farthest_point_sample, lexicographic_min_index, sample_mesh_surface,
    sample_mesh_surface_with_faces,
};
pub use transform::{augment, normalize, AugmentRanges, Augmentation, NormalizationTransform};

use nalgebra::{Point3, Vector3};

use crate::error::{GeomError, Result};

pub type Point = Point3<f64>;
pub type Vector = Vector3<f64>;

/// Gingiva label on segmented arch meshes. Teeth are labeled 1..=14.
pub const GINGIVA_CLASS: u32 = 0;
pub const TOOTH_CLASSES: u32 = 14;

/// An unordered (or, for margin lines, ordered) set of 3D points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Self {
        Self {
            points: coords.iter().map(|c| Point::new(c[0], c[1], c[2])).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector::zeros(), |acc, p| acc + p.coords);
        Some(Point::from(sum / self.points.len() as f64))
    }

    /// Checks the finiteness invariant.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(GeomError::Input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(())
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

/// Indexed triangle mesh with optional per-face class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
    pub labels: Option<Vec<u32>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            faces,
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<u32>) -> Self {
        self.labels = Some(labels);
        self
    }

    /// Checks index range, face degeneracy and label coverage.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(GeomError::DegenerateMesh(format!(
                    "face {fi} references a vertex out of range (n = {n})"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeomError::DegenerateMesh(format!(
                    "face {fi} repeats a vertex index"
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.faces.len() {
                return Err(GeomError::Label(format!(
                    "{} labels for {} faces",
                    labels.len(),
                    self.faces.len()
                )));
            }
        }
        Ok(())
    }

    pub fn face_points(&self, face: usize) -> [Point; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_points(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Sub-mesh made of the selected faces. Unreferenced vertices are dropped
    /// and the remaining ones keep their relative order.
    pub fn submesh(&self, face_ids: &[usize]) -> TriangleMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut used = vec![false; self.vertices.len()];
        for &fi in face_ids {
            for &v in &self.faces[fi] {
                used[v] = true;
            }
        }
        let mut vertices = Vec::new();
        for (v, &u) in used.iter().enumerate() {
            if u {
                remap[v] = vertices.len();
                vertices.push(self.vertices[v]);
            }
        }
        let faces = face_ids
            .iter()
            .map(|&fi| {
                let f = self.faces[fi];
                [remap[f[0]], remap[f[1]], remap[f[2]]]
            })
            .collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| face_ids.iter().map(|&fi| l[fi]).collect());
        TriangleMesh {
            vertices,
            faces,
            labels,
        }
    }

    /// Concatenates meshes. Labels survive only if every part is labeled.
    pub fn merge(parts: &[&TriangleMesh]) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        let all_labeled = parts.iter().all(|m| m.labels.is_some());
        let mut labels = Vec::new();
        for m in parts {
            let base = out.vertices.len();
            out.vertices.extend_from_slice(&m.vertices);
            out.faces
                .extend(m.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
            if let (true, Some(l)) = (all_labeled, &m.labels) {
                labels.extend_from_slice(l);
            }
        }
        if all_labeled {
            out.labels = Some(labels);
        }
        out
    }

    /// Indices of faces carrying `class`.
    pub fn faces_with_label(&self, class: u32) -> Vec<usize> {
        match &self.labels {
            Some(l) => l
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == class)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn vertex_cloud(&self) -> PointCloud {
        PointCloud::new(self.vertices.clone())
    }
}
