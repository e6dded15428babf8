use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{GeomError, Result};
use crate::geom::{knn, PointCloud, Vector};

/// Points with unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedCloud {
    pub points: PointCloud,
    pub normals: Vec<Vector>,
}

impl OrientedCloud {
    pub fn new(points: PointCloud, normals: Vec<Vector>) -> Result<Self> {
        let c = Self { points, normals };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.normals.len() != self.points.len() {
            return Err(GeomError::Input(format!(
                "{} normals for {} points",
                self.normals.len(),
                self.points.len()
            )));
        }
        if let Some(i) = self.normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
            return Err(GeomError::Input(format!("normal {i} is not unit length")));
        }
        Ok(())
    }
}

#[derive(PartialEq)]
struct Candidate {
    weight: f64,
    to: usize,
    from: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // min-heap on (weight, to, from)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then(other.to.cmp(&self.to))
            .then(other.from.cmp(&self.from))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// PCA normals over `k`-nearest neighborhoods, consistently oriented.
///
/// Orientation is propagated along a minimum spanning tree of the symmetric
/// k-NN graph with edge weight `1 - |n_i · n_j|`, flipping each normal to
/// agree with its tree parent. Each connected component is rooted at its
/// point farthest from the cloud centroid, whose normal is turned to face
/// away from the centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<OrientedCloud> {
    let n = cloud.len();
    if k < 3 || k > n {
        return Err(GeomError::Size(format!("normal estimation needs 3 <= k <= {n}, got k = {k}")));
    }
    let neighborhoods = knn(cloud, cloud, k)?;
    let mut normals: Vec<Vector> = neighborhoods
        .iter()
        .map(|nb| pca_normal(cloud, nb))
        .collect();

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, nb) in neighborhoods.iter().enumerate() {
        for &j in nb {
            if j != i {
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }

    let centroid = cloud.centroid().expect("non-empty cloud");
    let mut by_distance: Vec<usize> = (0..n).collect();
    by_distance.sort_by(|&a, &b| {
        let da = (cloud.points[a] - centroid).norm_squared();
        let db = (cloud.points[b] - centroid).norm_squared();
        db.total_cmp(&da).then(a.cmp(&b))
    });

    let mut visited = vec![false; n];
    for &root in &by_distance {
        if visited[root] {
            continue;
        }
        let outward = cloud.points[root] - centroid;
        let dot = normals[root].dot(&outward);
        if dot.abs() <= 1e-12 * outward.norm().max(1e-300) {
            // no preferred side: pick a canonical sign
            let m = normals[root].iamax();
            if normals[root][m] < 0.0 {
                normals[root] = -normals[root];
            }
        } else if dot < 0.0 {
            normals[root] = -normals[root];
        }
        visited[root] = true;
        let mut heap = BinaryHeap::new();
        let push_edges = |heap: &mut BinaryHeap<Candidate>, from: usize, normals: &[Vector], visited: &[bool]| {
            for &to in &adjacency[from] {
                if !visited[to] {
                    heap.push(Candidate {
                        weight: 1.0 - normals[from].dot(&normals[to]).abs(),
                        to,
                        from,
                    });
                }
            }
        };
        push_edges(&mut heap, root, &normals, &visited);
        while let Some(Candidate { to, from, .. }) = heap.pop() {
            if visited[to] {
                continue;
            }
            visited[to] = true;
            if normals[to].dot(&normals[from]) < 0.0 {
                normals[to] = -normals[to];
            }
            push_edges(&mut heap, to, &normals, &visited);
        }
    }
    OrientedCloud::new(cloud.clone(), normals)
}

fn pca_normal(cloud: &PointCloud, neighborhood: &[usize]) -> Vector {
    let m = neighborhood.len() as f64;
    let mean = neighborhood
        .iter()
        .fold(Vector::zeros(), |acc, &j| acc + cloud.points[j].coords)
        / m;
    let mut cov = Matrix3::zeros();
    for &j in neighborhood {
        let d = cloud.points[j].coords - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / m);
    let idx = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(idx).into_owned();
    let norm = v.norm();
    if norm > 0.0 && norm.is_finite() {
        v / norm
    } else {
        Vector::z()
    }
}
