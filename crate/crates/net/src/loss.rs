use crowngen_autodiff::{Graph, Var};
use crowngen_core::geom::{farthest_point_sample, lexicographic_min_index};
use crowngen_core::metrics::ChamferVariant;
use crowngen_core::{GeomError, PointCloud};

use crate::error::Result;
use crate::model::cloud_to_tensor;

/// Coarse supervision: `n` canonical FPS points of the target (fewer when
/// the target itself is smaller).
pub fn coarse_target(target: &PointCloud, n: usize) -> Result<PointCloud> {
    let seed = lexicographic_min_index(target).ok_or_else(|| GeomError::Size("empty target cloud".into()))?;
    let idx = farthest_point_sample(target, n.min(target.len()), seed)?;
    Ok(PointCloud::new(idx.into_iter().map(|i| target.points[i]).collect()))
}

/// `CD_L1(fine, target) + CD_L1(coarse, fps(target, |coarse|))`.
pub fn completion_loss(g: &mut Graph, coarse: Var, fine: Var, target: &PointCloud) -> Result<Var> {
    if target.is_empty() {
        return Err(GeomError::Size("completion loss against an empty target".into()).into());
    }
    let sub = coarse_target(target, g.value(coarse).rows())?;
    let t = g.constant(cloud_to_tensor(target));
    let s = g.constant(cloud_to_tensor(&sub));
    let fine_term = g.chamfer(fine, t, ChamferVariant::L1)?;
    let coarse_term = g.chamfer(coarse, s, ChamferVariant::L1)?;
    Ok(g.add(fine_term, coarse_term)?)
}
