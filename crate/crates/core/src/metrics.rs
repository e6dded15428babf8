//! Chamfer distances and margin-line distance statistics.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};
use crate::geom::{nearest_neighbors, PointCloud};

/// Millimetres to micrometres.
pub const MM_TO_UM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChamferVariant {
    /// Mean nearest-neighbor Euclidean distance, both directions summed.
    L1,
    /// Same with squared distances.
    L2,
}

/// Symmetric Chamfer distance between two non-empty clouds.
///
/// Nearest neighbors come from a bucket grid for large inputs; the result is
/// bit-identical to an exhaustive scan because the minimum squared distance
/// is exact and the per-point terms are summed in index order.
pub fn chamfer(p: &PointCloud, g: &PointCloud, variant: ChamferVariant) -> Result<f64> {
    if p.is_empty() || g.is_empty() {
        return Err(GeomError::Size("chamfer distance of an empty cloud".into()));
    }
    Ok(one_sided(p, g, variant)? + one_sided(g, p, variant)?)
}

fn one_sided(from: &PointCloud, to: &PointCloud, variant: ChamferVariant) -> Result<f64> {
    let nn = nearest_neighbors(to, from)?;
    let sum: f64 = nn
        .iter()
        .map(|&(_, d2)| match variant {
            ChamferVariant::L1 => d2.sqrt(),
            ChamferVariant::L2 => d2,
        })
        .sum();
    Ok(sum / from.len() as f64)
}

/// Which way margin distances are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MarginDirection {
    /// Each predicted point to its nearest ground-truth point.
    #[default]
    PredToGt,
    /// Both directions pooled into one distance multiset.
    Symmetric,
}

/// Distance statistics of a predicted margin line, in micrometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub max_um: f64,
    pub min_um: f64,
    pub avg_um: f64,
    pub std_um: f64,
}

impl MarginReport {
    pub const ZERO: MarginReport = MarginReport {
        max_um: 0.0,
        min_um: 0.0,
        avg_um: 0.0,
        std_um: 0.0,
    };

    /// Max, min, mean and population standard deviation of `distances`.
    pub fn from_distances(distances: &[f64]) -> Result<Self> {
        if distances.is_empty() {
            return Err(GeomError::Size("no margin distances".into()));
        }
        let n = distances.len() as f64;
        let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = distances.iter().sum::<f64>() / n;
        let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
        Ok(MarginReport {
            max_um: max,
            min_um: min,
            avg_um: mean.clamp(min, max),
            std_um: var.sqrt(),
        })
    }

    /// Per-statistic mean over cases.
    pub fn mean_of(reports: &[MarginReport]) -> Option<MarginReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MarginReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MarginReport {
            max_um: avg(|r| r.max_um),
            min_um: avg(|r| r.min_um),
            avg_um: avg(|r| r.avg_um),
            std_um: avg(|r| r.std_um),
        })
    }
}

/// Nearest-neighbor distances from the predicted margin to the ground truth,
/// multiplied by `unit_scale`.
pub fn margin_distances(
    pred: &PointCloud,
    gt: &PointCloud,
    unit_scale: f64,
    direction: MarginDirection,
) -> Result<Vec<f64>> {
    if pred.is_empty() || gt.is_empty() {
        return Err(GeomError::Size("margin statistics of an empty cloud".into()));
    }
    let mut d: Vec<f64> = nearest_neighbors(gt, pred)?
        .into_iter()
        .map(|(_, d2)| d2.sqrt() * unit_scale)
        .collect();
    if direction == MarginDirection::Symmetric {
        d.extend(
            nearest_neighbors(pred, gt)?
                .into_iter()
                .map(|(_, d2)| d2.sqrt() * unit_scale),
        );
    }
    Ok(d)
}

/// One-sided (pred → gt) margin statistics.
pub fn margin_distance_stats(pred: &PointCloud, gt: &PointCloud, unit_scale: f64) -> Result<MarginReport> {
    MarginReport::from_distances(&margin_distances(pred, gt, unit_scale, MarginDirection::PredToGt)?)
}

/// Per-case metrics record as written by the evaluation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub margin: MarginReport,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;
    use proptest::prelude::*;

    #[test]
    fn identical_clouds_are_zero() {
        let c = PointCloud::from_xyz(&[[0., 1., 2.], [3., -1., 0.5], [7., 7., 7.]]);
        assert_eq!(chamfer(&c, &c, ChamferVariant::L1).unwrap(), 0.0);
        assert_eq!(chamfer(&c, &c, ChamferVariant::L2).unwrap(), 0.0);
    }

    #[test]
    fn single_pair() {
        let p = PointCloud::from_xyz(&[[0., 0., 0.]]);
        let g = PointCloud::from_xyz(&[[3., 4., 0.]]);
        assert_eq!(chamfer(&p, &g, ChamferVariant::L1).unwrap(), 10.0);
        assert_eq!(chamfer(&p, &g, ChamferVariant::L2).unwrap(), 50.0);
    }

    #[test]
    fn unequal_sizes() {
        let p = PointCloud::from_xyz(&[[0., 0., 0.], [1., 0., 0.]]);
        let g = PointCloud::from_xyz(&[[0., 0., 0.]]);
        assert_eq!(chamfer(&p, &g, ChamferVariant::L1).unwrap(), 0.5);
    }

    #[test]
    fn empty_is_size_error() {
        let p = PointCloud::from_xyz(&[[0., 0., 0.]]);
        assert!(matches!(chamfer(&p, &PointCloud::default(), ChamferVariant::L1), Err(GeomError::Size(_))));
        assert!(margin_distance_stats(&PointCloud::default(), &p, MM_TO_UM).is_err());
    }

    fn circle(n: usize, z: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 / n as f64 * std::f64::consts::TAU;
                    Point::new(5.0 * t.cos(), 5.0 * t.sin(), z)
                })
                .collect(),
        )
    }

    #[test]
    fn identical_margins_report_zero() {
        let c = circle(100, 0.0);
        assert_eq!(margin_distance_stats(&c, &c, MM_TO_UM).unwrap(), MarginReport::ZERO);
    }

    #[test]
    fn lifted_margin_is_uniform_offset() {
        let gt = circle(200, 0.0);
        let pred = circle(200, 0.5);
        let r = margin_distance_stats(&pred, &gt, MM_TO_UM).unwrap();
        assert!((r.max_um - 500.0).abs() < 1e-9);
        assert!((r.min_um - 500.0).abs() < 1e-9);
        assert!((r.avg_um - 500.0).abs() < 1e-9);
        assert!(r.std_um < 1e-9);
    }

    #[test]
    fn symmetric_direction_pools_both_sides() {
        let gt = PointCloud::from_xyz(&[[0., 0., 0.], [10., 0., 0.]]);
        let pred = PointCloud::from_xyz(&[[0., 0., 1.]]);
        let one = margin_distances(&pred, &gt, 1.0, MarginDirection::PredToGt).unwrap();
        let both = margin_distances(&pred, &gt, 1.0, MarginDirection::Symmetric).unwrap();
        assert_eq!(one, vec![1.0]);
        assert_eq!(both.len(), 3);
        assert!((both[2] - 101f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_of_reports() {
        let a = MarginReport { max_um: 4.0, min_um: 0.0, avg_um: 2.0, std_um: 1.0 };
        let b = MarginReport { max_um: 8.0, min_um: 2.0, avg_um: 4.0, std_um: 3.0 };
        let m = MarginReport::mean_of(&[a, b]).unwrap();
        assert_eq!(m, MarginReport { max_um: 6.0, min_um: 1.0, avg_um: 3.0, std_um: 2.0 });
        assert!(MarginReport::mean_of(&[]).is_none());
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 1..max).prop_map(|v| PointCloud::from_xyz(&v))
    }

    proptest! {
        #[test]
        fn chamfer_is_symmetric(p in arb_cloud(40), g in arb_cloud(40)) {
            for v in [ChamferVariant::L1, ChamferVariant::L2] {
                prop_assert_eq!(chamfer(&p, &g, v).unwrap(), chamfer(&g, &p, v).unwrap());
            }
        }

        #[test]
        fn chamfer_zero_iff_same_set(p in arb_cloud(12), g in arb_cloud(12)) {
            let same = p.points.iter().all(|a| g.points.iter().any(|b| (a - b).norm() <= 1e-12))
                && g.points.iter().all(|a| p.points.iter().any(|b| (a - b).norm() <= 1e-12));
            let d = chamfer(&p, &g, ChamferVariant::L1).unwrap();
            prop_assert_eq!(d <= 1e-12, same);
            let mut shuffled = p.points.clone();
            shuffled.reverse();
            shuffled.extend_from_slice(&p.points[..1]);
            prop_assert_eq!(chamfer(&p, &PointCloud::new(shuffled), ChamferVariant::L1).unwrap(), 0.0);
        }

        #[test]
        fn chamfer_scales_homogeneously(p in arb_cloud(30), g in arb_cloud(30), s in 0.1..10.0f64) {
            let scale = |c: &PointCloud| PointCloud::new(c.points.iter().map(|q| q * s).collect());
            let (ps, gs) = (scale(&p), scale(&g));
            let l1 = chamfer(&p, &g, ChamferVariant::L1).unwrap();
            let l2 = chamfer(&p, &g, ChamferVariant::L2).unwrap();
            prop_assert!((chamfer(&ps, &gs, ChamferVariant::L1).unwrap() - s * l1).abs() <= 1e-9 * (1.0 + s * l1));
            prop_assert!((chamfer(&ps, &gs, ChamferVariant::L2).unwrap() - s * s * l2).abs() <= 1e-9 * (1.0 + s * s * l2));
        }

        #[test]
        fn margin_report_ordering_and_translation(p in arb_cloud(30), g in arb_cloud(30), t in prop::array::uniform3(-100.0..100.0f64)) {
            let r = margin_distance_stats(&p, &g, MM_TO_UM).unwrap();
            prop_assert!(r.min_um <= r.avg_um && r.avg_um <= r.max_um && r.std_um >= 0.0);
            let shift = nalgebra::Vector3::new(t[0], t[1], t[2]);
            let mv = |c: &PointCloud| PointCloud::new(c.points.iter().map(|q| q + shift).collect());
            let r2 = margin_distance_stats(&mv(&p), &mv(&g), MM_TO_UM).unwrap();
            // 1e-9 mm, expressed in micrometres
            for (a, b) in [(r.max_um, r2.max_um), (r.min_um, r2.min_um), (r.avg_um, r2.avg_um), (r.std_um, r2.std_um)] {
                prop_assert!((a - b).abs() <= 1e-9 * MM_TO_UM);
            }
        }
    }
}
