use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Point, PointCloud, Vector};
use crate::error::{GeomError, Result};

/// `normalized = (world - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub mean: [f64; 3],
    pub scale: f64,
}

impl NormalizationTransform {
    pub const IDENTITY: Self = Self {
        mean: [0.0; 3],
        scale: 1.0,
    };

    fn mean_vec(&self) -> Vector {
        Vector::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        Point::from((p.coords - self.mean_vec()) / self.scale)
    }

    pub fn invert_point(&self, p: &Point) -> Point {
        Point::from(p.coords * self.scale + self.mean_vec())
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::new(cloud.points.iter().map(|p| self.apply_point(p)).collect())
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::new(cloud.points.iter().map(|p| self.invert_point(p)).collect())
    }
}

/// Centers a cloud on its centroid and divides by the scalar standard
/// deviation of all 3N coordinate residuals.
pub fn normalize(cloud: &PointCloud) -> Result<(PointCloud, NormalizationTransform)> {
    if cloud.len() < 2 {
        return Err(GeomError::DegenerateCloud(format!(
            "normalization needs at least 2 points, got {}",
            cloud.len()
        )));
    }
    cloud.validate()?;
    let mean = cloud.centroid().expect("non-empty").coords;
    let sum_sq: f64 = cloud
        .points
        .iter()
        .map(|p| (p.coords - mean).norm_squared())
        .sum();
    let scale = (sum_sq / (3 * cloud.len()) as f64).sqrt();
    if !(scale > 0.0) {
        return Err(GeomError::DegenerateCloud("all points coincide".into()));
    }
    let t = NormalizationTransform {
        mean: [mean.x, mean.y, mean.z],
        scale,
    };
    Ok((t.apply(cloud), t))
}

/// One concrete similarity transform: rotation about the vertical (z) axis,
/// then isotropic scaling, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub rotation_deg: f64,
    pub translation: [f64; 3],
    pub scale: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            rotation_deg: 0.0,
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Augmentation {
    pub fn apply_point(&self, p: &Point) -> Point {
        let rot = Rotation3::from_axis_angle(&Vector::z_axis(), self.rotation_deg.to_radians());
        let t = Vector::new(self.translation[0], self.translation[1], self.translation[2]);
        Point::from(rot * p.coords * self.scale + t)
    }
}

/// Sampling ranges for random augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_translation: 0.05,
            min_scale: 0.95,
            max_scale: 1.05,
        }
    }
}

impl AugmentRanges {
    /// Draws one augmentation, deterministic in `seed`.
    pub fn draw(&self, seed: u64) -> Augmentation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let rotation_deg = sym(self.max_rotation_deg);
        let translation = [
            sym(self.max_translation),
            sym(self.max_translation),
            sym(self.max_translation),
        ];
        let scale = if self.max_scale > self.min_scale {
            rng.gen_range(self.min_scale..=self.max_scale)
        } else {
            self.min_scale
        };
        Augmentation {
            rotation_deg,
            translation,
            scale,
        }
    }
}

/// Applies the same similarity transform to every cloud of a sample so that
/// their mutual geometry is preserved.
pub fn augment(clouds: &[PointCloud], aug: &Augmentation) -> Result<Vec<PointCloud>> {
    if !(aug.scale > 0.0) {
        return Err(GeomError::Parameter(format!(
            "augmentation scale must be positive, got {}",
            aug.scale
        )));
    }
    Ok(clouds
        .iter()
        .map(|c| PointCloud::new(c.points.iter().map(|p| aug.apply_point(p)).collect()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Point, b: &Point, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::from_xyz(&[[0., 0., 0.], [2., 2., 2.]]);
        let (n, t) = normalize(&c).unwrap();
        assert_eq!(t.mean, [1.0, 1.0, 1.0]);
        assert!((t.scale - 1.0).abs() < 1e-15);
        assert!(close(&n.points[0], &Point::new(-1., -1., -1.), 1e-15));
        assert!(close(&n.points[1], &Point::new(1., 1., 1.), 1e-15));
    }

    #[test]
    fn normalize_already_standard_is_identity() {
        // zero mean, residual std exactly 1
        let c = PointCloud::from_xyz(&[[1., 1., 1.], [-1., -1., -1.], [1., -1., 1.], [-1., 1., -1.]]);
        let (n, t) = normalize(&c).unwrap();
        assert_eq!(t.mean, [0.0; 3]);
        assert_eq!(t.scale, 1.0);
        assert_eq!(n, c);
    }

    #[test]
    fn normalize_rejects_repeated_point() {
        let c = PointCloud::from_xyz(&[[3., 1., 2.]; 5]);
        assert!(matches!(normalize(&c), Err(GeomError::DegenerateCloud(_))));
        assert!(normalize(&PointCloud::from_xyz(&[[0., 0., 0.]])).is_err());
    }

    #[test]
    fn identity_augmentation() {
        let c = PointCloud::from_xyz(&[[1., 2., 3.], [-4., 0.5, 2.]]);
        let out = augment(&[c.clone()], &Augmentation::default()).unwrap();
        assert_eq!(out[0], c);
    }

    #[test]
    fn half_turn_twice_is_identity() {
        let c = PointCloud::from_xyz(&[[1., 2., 3.], [-4., 0.5, 2.]]);
        let half = Augmentation {
            rotation_deg: 180.0,
            ..Default::default()
        };
        let once = augment(&[c.clone()], &half).unwrap();
        let twice = augment(&once, &half).unwrap();
        for (a, b) in twice[0].points.iter().zip(&c.points) {
            assert!(close(a, b, 1e-9));
        }
    }

    #[test]
    fn quarter_turn_about_z() {
        let q = Augmentation {
            rotation_deg: 90.0,
            ..Default::default()
        };
        assert!(close(&q.apply_point(&Point::new(1., 0., 0.)), &Point::new(0., 1., 0.), 1e-12));
    }

    #[test]
    fn non_positive_scale_rejected() {
        let bad = Augmentation {
            scale: 0.0,
            ..Default::default()
        };
        assert!(matches!(augment(&[PointCloud::default()], &bad), Err(GeomError::Parameter(_))));
    }

    #[test]
    fn draw_is_deterministic_and_in_range() {
        let r = AugmentRanges::default();
        assert_eq!(r.draw(42), r.draw(42));
        let a = r.draw(7);
        assert!(a.rotation_deg.abs() <= 10.0 && (0.95..=1.05).contains(&a.scale));
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Point::new(x, y, z))
    }

    proptest! {
        #[test]
        fn normalize_round_trip(pts in prop::collection::vec(arb_point(), 2..40)) {
            let c = PointCloud::new(pts);
            if let Ok((n, t)) = normalize(&c) {
                let centroid = n.centroid().unwrap();
                prop_assert!(centroid.coords.norm() < 1e-9);
                for (a, b) in t.invert(&n).points.iter().zip(&c.points) {
                    prop_assert!(close(a, b, 1e-9));
                }
            }
        }

        #[test]
        fn augmentation_preserves_distance_ratios(
            pts in prop::collection::vec(arb_point(), 4..5),
            rot in -180.0..180.0f64,
            s in 0.2..5.0f64,
            t in prop::array::uniform3(-5.0..5.0f64),
        ) {
            let d0 = (pts[0] - pts[1]).norm();
            let d1 = (pts[2] - pts[3]).norm();
            prop_assume!(d0 > 1e-3 && d1 > 1e-3);
            let aug = Augmentation { rotation_deg: rot, translation: t, scale: s };
            let out = augment(&[PointCloud::new(pts.clone())], &aug).unwrap();
            let q = &out[0].points;
            let ratio = (q[0] - q[1]).norm() / (q[2] - q[3]).norm();
            prop_assert!((ratio - d0 / d1).abs() <= 1e-9 * (d0 / d1).max(1.0));
        }
    }
}
