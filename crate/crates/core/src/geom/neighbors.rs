use std::cmp::Ordering;

use super::{Point, PointCloud};
use crate::error::{GeomError, Result};

/// Squared Euclidean distance. Every neighbor query in the crate goes through
/// this one expression so that accelerated and brute-force searches agree
/// bit for bit.
#[inline]
pub fn squared_distance(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Reference k-nearest-neighbor search: exhaustive scan, rows sorted by
/// ascending distance, ties broken by ascending index.
pub fn knn_brute_force(points: &PointCloud, queries: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    check_k(points, k)?;
    Ok(queries
        .points
        .iter()
        .map(|q| {
            let mut all: Vec<(f64, usize)> = points
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (squared_distance(q, p), i))
                .collect();
            if k < all.len() {
                all.select_nth_unstable_by(k, by_distance_then_index);
                all.truncate(k);
            }
            all.sort_by(by_distance_then_index);
            all.into_iter().map(|(_, i)| i).collect()
        })
        .collect())
}

/// k-nearest neighbors with the same ordering contract as
/// [`knn_brute_force`]. Large inputs go through a [`SpatialGrid`].
pub fn knn(points: &PointCloud, queries: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    check_k(points, k)?;
    if points.len() * queries.len() <= 1 << 16 {
        return knn_brute_force(points, queries, k);
    }
    let grid = SpatialGrid::new(&points.points);
    Ok(queries
        .points
        .iter()
        .map(|q| grid.knn(q, k).into_iter().map(|(i, _)| i).collect())
        .collect())
}

/// Nearest neighbor of every query as `(index, squared distance)`.
pub fn nearest_neighbors(points: &PointCloud, queries: &PointCloud) -> Result<Vec<(usize, f64)>> {
    if points.is_empty() {
        return Err(GeomError::Size("nearest-neighbor search over an empty cloud".into()));
    }
    if points.len() * queries.len() <= 1 << 14 {
        return Ok(queries
            .points
            .iter()
            .map(|q| {
                let mut best = (f64::INFINITY, usize::MAX);
                for (i, p) in points.points.iter().enumerate() {
                    let d = squared_distance(q, p);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                (best.1, best.0)
            })
            .collect());
    }
    let grid = SpatialGrid::new(&points.points);
    Ok(queries.points.iter().map(|q| grid.nearest(q)).collect())
}

fn check_k(points: &PointCloud, k: usize) -> Result<()> {
    if k > points.len() {
        return Err(GeomError::Size(format!(
            "k = {k} exceeds cloud size {}",
            points.len()
        )));
    }
    Ok(())
}

/// Uniform bucket grid over a fixed point set, stored in CSR form.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    points: Vec<Point>,
    origin: Point,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

impl SpatialGrid {
    /// Builds a grid with roughly two points per occupied cell.
    pub fn new(points: &[Point]) -> Self {
        let n = points.len().max(1);
        let (lo, hi) = bounds(points);
        let extent = hi - lo;
        let max_extent = extent.x.max(extent.y).max(extent.z);
        let res = ((n as f64 / 2.0).cbrt().ceil() as usize).clamp(1, 256);
        let cell = if max_extent > 0.0 {
            max_extent / res as f64
        } else {
            1.0
        };
        Self::with_cell_size(points, cell)
    }

    /// Builds a grid with an explicit cell edge length.
    pub fn with_cell_size(points: &[Point], cell: f64) -> Self {
        let (lo, hi) = bounds(points);
        let extent = hi - lo;
        let mut cell = if cell > 0.0 && cell.is_finite() { cell } else { 1.0 };
        // keep the cell count bounded for tiny cells over a wide cloud
        let cap = (4 * points.len()).max(64) as f64;
        while ((extent.x / cell).floor() + 1.0)
            * ((extent.y / cell).floor() + 1.0)
            * ((extent.z / cell).floor() + 1.0)
            > cap
        {
            cell *= 1.5;
        }
        let dims = [
            (extent.x / cell).floor() as usize + 1,
            (extent.y / cell).floor() as usize + 1,
            (extent.z / cell).floor() as usize + 1,
        ];
        let ncells = dims[0] * dims[1] * dims[2];
        let mut grid = SpatialGrid {
            points: points.to_vec(),
            origin: lo,
            cell,
            dims,
            cell_start: vec![0; ncells + 1],
            entries: vec![0; points.len()],
        };
        let ids: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = grid.cell_of(p);
                grid.flat(c)
            })
            .collect();
        for &id in &ids {
            grid.cell_start[id + 1] += 1;
        }
        for i in 0..ncells {
            grid.cell_start[i + 1] += grid.cell_start[i];
        }
        let mut cursor = grid.cell_start.clone();
        for (i, &id) in ids.iter().enumerate() {
            grid.entries[cursor[id]] = i;
            cursor[id] += 1;
        }
        grid
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_of(&self, p: &Point) -> [usize; 3] {
        let rel = p - self.origin;
        let f = |v: f64, d: usize| -> usize {
            let c = (v / self.cell).floor();
            if c.is_nan() || c < 0.0 {
                0
            } else {
                (c as usize).min(d - 1)
            }
        };
        [f(rel.x, self.dims[0]), f(rel.y, self.dims[1]), f(rel.z, self.dims[2])]
    }

    #[inline]
    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_entries(&self, c: [usize; 3]) -> &[usize] {
        let id = self.flat(c);
        &self.entries[self.cell_start[id]..self.cell_start[id + 1]]
    }

    /// Visits every cell on the Chebyshev ring `ring` around `center`.
    fn for_ring(&self, center: [usize; 3], ring: usize, mut f: impl FnMut([usize; 3])) {
        let r = ring as isize;
        let lo = |c: usize| (c as isize - r).max(0) as usize;
        let hi = |c: usize, d: usize| ((c as isize + r) as usize).min(d - 1);
        for z in lo(center[2])..=hi(center[2], self.dims[2]) {
            let dz = (z as isize - center[2] as isize).abs();
            for y in lo(center[1])..=hi(center[1], self.dims[1]) {
                let dy = (y as isize - center[1] as isize).abs();
                for x in lo(center[0])..=hi(center[0], self.dims[0]) {
                    let dx = (x as isize - center[0] as isize).abs();
                    if dx.max(dy).max(dz) == r {
                        f([x, y, z]);
                    }
                }
            }
        }
    }

    fn max_ring(&self) -> usize {
        self.dims.iter().copied().max().unwrap_or(1)
    }

    /// Lower bound on the distance from a query to any point in rings beyond `ring`.
    #[inline]
    fn ring_bound_sq(&self, ring: usize) -> f64 {
        let lb = (ring as f64 - 1e-3).max(0.0) * self.cell;
        lb * lb
    }

    /// Nearest stored point as `(index, squared distance)`; ties go to the
    /// lowest index.
    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        let center = self.cell_of(q);
        let mut best = (f64::INFINITY, usize::MAX);
        for ring in 0..=self.max_ring() {
            self.for_ring(center, ring, |c| {
                for &i in self.cell_entries(c) {
                    let d = squared_distance(q, &self.points[i]);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        best = (d, i);
                    }
                }
            });
            if best.0 < self.ring_bound_sq(ring) {
                break;
            }
        }
        (best.1, best.0)
    }

    /// k nearest stored points, sorted by (distance, index).
    pub fn knn(&self, q: &Point, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let center = self.cell_of(q);
        let mut found: Vec<(f64, usize)> = Vec::new();
        for ring in 0..=self.max_ring() {
            self.for_ring(center, ring, |c| {
                for &i in self.cell_entries(c) {
                    found.push((squared_distance(q, &self.points[i]), i));
                }
            });
            if found.len() >= k {
                found.sort_by(by_distance_then_index);
                found.truncate(k);
                if found[k - 1].0 < self.ring_bound_sq(ring) {
                    break;
                }
            }
        }
        found.sort_by(by_distance_then_index);
        found.truncate(k);
        found.into_iter().map(|(d, i)| (i, d)).collect()
    }

    /// All stored points with squared distance `<= radius²`, in ascending
    /// index order.
    pub fn within_radius(&self, q: &Point, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let lo = self.cell_of(&(q - nalgebra::Vector3::repeat(radius)));
        let hi = self.cell_of(&(q + nalgebra::Vector3::repeat(radius)));
        let mut out = Vec::new();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    for &i in self.cell_entries([x, y, z]) {
                        if squared_distance(q, &self.points[i]) <= r2 {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn bounds(points: &[Point]) -> (Point, Point) {
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if points.is_empty() {
        (Point::origin(), Point::origin())
    } else {
        (lo, hi)
    }
}
