//! Rigid coarse alignment of two point sets: voxel downsampling, FPFH
//! descriptors, RANSAC over descriptor matches and point-to-point ICP.
//!
//! The recovered transform maps source points onto target points and always
//! carries the scale it started with (1 unless an ICP init says otherwise).

mod fpfh;
mod icp;
mod ransac;

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::KdTree;
use crate::sampler::SurfacePointSet;
use crate::transform::SimTransform;
use crate::Vec3;

pub use fpfh::{compute_fpfh, FpfhDescriptor, FPFH_BINS};
pub use icp::icp_refine;
pub use ransac::{match_descriptors, ransac_align};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub voxel: f64,
    /// Neighbourhood radius for PCA normals, in voxels.
    pub normal_radius_factor: f64,
    /// Neighbourhood radius for FPFH, in voxels.
    pub fpfh_radius_factor: f64,
    /// Re-estimate normals by PCA instead of using the sampler's field normals.
    pub estimate_normals: bool,
    pub ransac_max_iterations: usize,
    pub ransac_confidence: f64,
    /// Correspondence inlier distance, in voxels.
    pub inlier_factor: f64,
    pub edge_similarity: f64,
    pub mutual_filter: bool,
    /// Rotationally distinct RANSAC hypotheses polished by ICP and compared
    /// by coverage; 0 keeps the single best correspondence count.
    pub rerank_candidates: usize,
    /// ICP correspondence distance, in voxels.
    pub icp_threshold_factor: f64,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
}

impl CoarseConfig {
    /// Defaults with the voxel size tied to the scene radius (`r / 50`).
    pub fn for_scene_radius(radius: f64) -> Self {
        CoarseConfig {
            voxel: radius / 50.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("voxel", self.voxel),
            ("normal radius factor", self.normal_radius_factor),
            ("fpfh radius factor", self.fpfh_radius_factor),
            ("inlier factor", self.inlier_factor),
            ("icp threshold factor", self.icp_threshold_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return Err(Error::input("ransac confidence must lie in (0, 1)"));
        }
        if !(self.edge_similarity > 0.0 && self.edge_similarity <= 1.0) {
            return Err(Error::input("edge similarity must lie in (0, 1]"));
        }
        Ok(())
    }
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            voxel: 0.05,
            normal_radius_factor: 2.0,
            fpfh_radius_factor: 5.0,
            estimate_normals: false,
            ransac_max_iterations: 100_000,
            ransac_confidence: 0.999,
            inlier_factor: 1.5,
            edge_similarity: 0.9,
            mutual_filter: true,
            rerank_candidates: 8,
            icp_threshold_factor: 2.0,
            icp_max_iterations: 50,
            icp_tolerance: 1e-6,
        }
    }
}

/// Outcome of RANSAC or ICP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseResult {
    pub transform: SimTransform,
    pub inlier_count: usize,
    pub correspondence_count: usize,
    pub inlier_rmse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// ICP only: inlier RMSE before each update.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rmse_history: Vec<f64>,
}

impl CoarseResult {
    pub(crate) fn failed(transform: SimTransform, correspondence_count: usize) -> Self {
        CoarseResult {
            transform,
            inlier_count: 0,
            correspondence_count,
            inlier_rmse: 0.0,
            converged: false,
            iterations: 0,
            rmse_history: Vec::new(),
        }
    }
}

/// One centroid per occupied voxel, in order of first occupancy.
pub fn voxel_downsample(set: &SurfacePointSet, voxel: f64) -> Result<SurfacePointSet> {
    if !(voxel.is_finite() && voxel > 0.0) {
        return Err(Error::input("voxel size must be positive"));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::new();
    let mut sums: Vec<(Vec3, Vec3, usize)> = Vec::new();
    for (i, p) in set.points.iter().enumerate() {
        let key = [0, 1, 2].map(|k| (p[k] / voxel).floor() as i64);
        let n = set.normals.as_ref().map_or(Vec3::zeros(), |ns| ns[i]);
        let slot = *slots.entry(key).or_insert_with(|| {
            sums.push((Vec3::zeros(), Vec3::zeros(), 0));
            sums.len() - 1
        });
        let s = &mut sums[slot];
        s.0 += p;
        s.1 += n;
        s.2 += 1;
    }
    let points = sums.iter().map(|(p, _, c)| p / *c as f64).collect();
    let normals = set.normals.as_ref().map(|_| {
        sums.iter()
            .map(|(_, n, _)| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect()
    });
    Ok(SurfacePointSet {
        points,
        source: set.source.clone(),
        normals,
    })
}

/// PCA normals from neighbours within `radius`, oriented away from the cloud
/// centroid. Points with fewer than three neighbours keep +z.
pub fn estimate_normals(set: &SurfacePointSet, radius: f64) -> Result<SurfacePointSet> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::input("normal radius must be positive"));
    }
    let tree = KdTree::build(&set.points);
    let centroid = set.centroid();
    let normals = set
        .points
        .iter()
        .map(|p| {
            let nbrs = tree.within_radius(p, radius);
            if nbrs.len() < 3 {
                return Vec3::z();
            }
            let mean = nbrs.iter().map(|&(i, _)| set.points[i]).sum::<Vec3>() / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for &(i, _) in &nbrs {
                let d = set.points[i] - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let n: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imin()).into();
            if n.dot(&(p - centroid)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    Ok(SurfacePointSet {
        points: set.points.clone(),
        source: set.source.clone(),
        normals: Some(normals),
    })
}

/// Least-squares rotation and translation with `R·src + t ≈ dst`.
pub fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Option<(Matrix3<f64>, Vec3)> {
    if src.len() != dst.len() || src.len() < 3 {
        return None;
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - cs) * (b - cd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v = svd.v_t?.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    Some((r, cd - r * cs))
}

/// Full rigid pipeline: downsample, describe, RANSAC, then ICP from the RANSAC
/// pose. Returns `(ransac, icp)`.
pub fn coarse_align(
    source: &SurfacePointSet,
    target: &SurfacePointSet,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<(CoarseResult, CoarseResult)> {
    cfg.validate()?;
    let prep = |set: &SurfacePointSet| -> Result<SurfacePointSet> {
        let down = voxel_downsample(set, cfg.voxel)?;
        if cfg.estimate_normals || down.normals.is_none() {
            estimate_normals(&down, cfg.normal_radius_factor * cfg.voxel)
        } else {
            Ok(down)
        }
    };
    let src = prep(source)?;
    let tgt = prep(target)?;
    let radius = cfg.fpfh_radius_factor * cfg.voxel;
    let src_desc = compute_fpfh(&src, radius)?;
    let tgt_desc = compute_fpfh(&tgt, radius)?;
    let ransac = ransac_align(&src, &tgt, &src_desc, &tgt_desc, cfg, seed)?;
    let icp = icp_refine(source, target, &ransac.transform, cfg)?;
    Ok((ransac, icp))
}

/// [`coarse_align`] for clouds of unknown relative size.
///
/// Each cloud is centred on its centroid and divided by its RMS radius before
/// alignment, with the voxel shrunk by the source spread. The rotation found
/// there is returned at scale 1, translated so the source centroid lands on
/// the target centroid plus the normalized offset rescaled to target units.
/// Returns `(ransac, icp, init)`; the first two are in normalized units.
pub fn coarse_align_normalized(
    source: &SurfacePointSet,
    target: &SurfacePointSet,
    cfg: &CoarseConfig,
    seed: u64,
) -> Result<(CoarseResult, CoarseResult, SimTransform)> {
    let (src, ca, sa) = normalize(source)?;
    let (tgt, cb, sb) = normalize(target)?;
    let ncfg = CoarseConfig {
        voxel: cfg.voxel / sa,
        ..*cfg
    };
    let (ransac, icp) = coarse_align(&src, &tgt, &ncfg, seed)?;
    let r = icp.transform.rotation();
    let t = cb + icp.transform.translation_vec() * sb - r * ca;
    let init = SimTransform::from_parts(&r, &t, 1.0)?;
    Ok((ransac, icp, init))
}

/// Centred copy scaled to unit RMS radius, with the centroid and spread.
fn normalize(set: &SurfacePointSet) -> Result<(SurfacePointSet, Vec3, f64)> {
    if set.is_empty() {
        return Err(Error::EmptySamples(format!("'{}' has no points", set.source)));
    }
    let c = set.centroid();
    let spread = (set.points.iter().map(|p| (p - c).norm_squared()).sum::<f64>()
        / set.len() as f64)
        .sqrt();
    if !(spread > 0.0) {
        return Err(Error::input(format!("'{}' has zero spread", set.source)));
    }
    let out = SurfacePointSet {
        points: set.points.iter().map(|p| (p - c) / spread).collect(),
        source: set.source.clone(),
        normals: set.normals.clone(),
    };
    Ok((out, c, spread))
}

#[cfg(test)]
mod tests;
