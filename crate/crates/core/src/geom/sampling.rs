use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{squared_distance, Point, PointCloud, TriangleMesh};
use crate::error::{GeomError, Result};

/// Farthest point sampling starting from `seed_index`.
///
/// Each subsequent pick maximizes the distance to the already chosen set;
/// among equal candidates the lowest index wins.
pub fn farthest_point_sample(cloud: &PointCloud, k: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(GeomError::Size(format!("farthest point sample of {k} from {n} points")));
    }
    if seed_index >= n {
        return Err(GeomError::Size(format!("seed index {seed_index} out of range for {n} points")));
    }
    let pts = &cloud.points;
    let mut chosen = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = seed_index;
    chosen.push(current);
    min_d[current] = f64::NEG_INFINITY;
    while chosen.len() < k {
        let c = pts[current];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, p) in pts.iter().enumerate() {
            let m = &mut min_d[i];
            if *m == f64::NEG_INFINITY {
                continue;
            }
            let d = squared_distance(&c, p);
            if d < *m {
                *m = d;
            }
            if *m > best.0 {
                best = (*m, i);
            }
        }
        current = best.1;
        min_d[current] = f64::NEG_INFINITY;
        chosen.push(current);
    }
    Ok(chosen)
}

/// Index of the lexicographically smallest point (x, then y, then z).
/// Used as a canonical FPS seed so that sampling depends only on the point set.
pub fn lexicographic_min_index(cloud: &PointCloud) -> Option<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        })
        .map(|(i, _)| i)
}

/// Independent sub-seed for stream `stream` of a base seed (splitmix64 mix),
/// so separate sampling passes never share random numbers.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Area-weighted uniform sampling of a triangle mesh surface.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    sample_mesh_surface_with_faces(mesh, n, seed).map(|(cloud, _)| cloud)
}

/// Like [`sample_mesh_surface`] but also returns the source face of each point.
pub fn sample_mesh_surface_with_faces(
    mesh: &TriangleMesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if n == 0 {
        return Ok((PointCloud::default(), Vec::new()));
    }
    mesh.validate()?;
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(GeomError::DegenerateMesh("mesh has zero total area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.gen::<f64>() * total;
        let mut f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        // skip zero-area faces that share the cumulative value
        while mesh.face_area(f) == 0.0 && f + 1 < cdf.len() {
            f += 1;
        }
        let [a, b, c] = mesh.face_points(f);
        let s = rng.gen::<f64>().sqrt();
        let t = rng.gen::<f64>();
        let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - t)) + c.coords * (s * t);
        points.push(Point::from(p));
        faces.push(f);
    }
    Ok((PointCloud::new(points), faces))
}
