//! Point-to-point ICP with the scale held fixed.

use rayon::prelude::*;

use super::{kabsch, CoarseConfig, CoarseResult};
use crate::error::Result;
use crate::nn::KdTree;
use crate::sampler::SurfacePointSet;
use crate::transform::{rotation_angle, SimTransform};
use crate::Vec3;

/// Matched `(moved source, target)` pairs within `threshold`.
fn correspondences(
    src: &[Vec3],
    tree: &KdTree,
    map: &(dyn Fn(&Vec3) -> Vec3 + Sync),
    threshold: f64,
) -> Vec<(Vec3, Vec3, f64)> {
    let t2 = threshold * threshold;
    src.par_iter()
        .map(|p| {
            let y = map(p);
            tree.nearest(&y)
                .filter(|&(_, d2)| d2 <= t2)
                .map(|(j, d2)| (y, tree.points()[j], d2))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn rmse(pairs: &[(Vec3, Vec3, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    (pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64).sqrt()
}

/// Refines `init` so that `init(source)` lies on `target`. Rotation and
/// translation are updated; the scale of `init` is kept.
pub fn icp_refine(
    source: &SurfacePointSet,
    target: &SurfacePointSet,
    init: &SimTransform,
    cfg: &CoarseConfig,
) -> Result<CoarseResult> {
    cfg.validate()?;
    init.validate()?;
    let tree = KdTree::build(&target.points);
    let threshold = cfg.icp_threshold_factor * cfg.voxel;
    let scale = init.scale;
    let mut r = init.rotation();
    let mut t = init.translation_vec();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.icp_max_iterations {
        let map = |p: &Vec3| r * p * scale + t;
        let pairs = correspondences(&source.points, &tree, &map, threshold);
        if pairs.len() < 3 {
            if iterations == 0 {
                return Ok(CoarseResult::failed(*init, pairs.len()));
            }
            break;
        }
        history.push(rmse(&pairs));
        let (moved, fixed): (Vec<Vec3>, Vec<Vec3>) = pairs.iter().map(|p| (p.0, p.1)).unzip();
        let Some((dr, dt)) = kabsch(&moved, &fixed) else { break };
        r = dr * r;
        t = dr * t + dt;
        iterations += 1;
        let step = (dt.norm_squared() + rotation_angle(&dr).powi(2)).sqrt();
        if step < cfg.icp_tolerance {
            converged = true;
            break;
        }
    }
    let map = |p: &Vec3| r * p * scale + t;
    let pairs = correspondences(&source.points, &tree, &map, threshold);
    Ok(CoarseResult {
        transform: SimTransform::from_parts(&r, &t, scale)?,
        inlier_count: pairs.len(),
        correspondence_count: source.len(),
        inlier_rmse: rmse(&pairs),
        converged,
        iterations,
        rmse_history: history,
    })
}
