//! Fast point feature histograms.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::KdTree;
use crate::sampler::SurfacePointSet;
use crate::Vec3;

pub const FPFH_BINS: usize = 33;
const BINS_PER_FEATURE: usize = 11;
const BRANCH_SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct FpfhDescriptor {
    pub histogram: [f64; FPFH_BINS],
    /// No neighbours within the radius; the histogram is all zeros.
    pub isolated: bool,
}

impl FpfhDescriptor {
    pub fn distance_squared(&self, other: &FpfhDescriptor) -> f64 {
        self.histogram
            .iter()
            .zip(&other.histogram)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Darboux-frame angles `(alpha, phi, theta)` between two oriented points.
fn pair_features(p1: &Vec3, n1: &Vec3, p2: &Vec3, n2: &Vec3) -> Option<[f64; 3]> {
    let mut dp = p2 - p1;
    let len = dp.norm();
    if len == 0.0 {
        return None;
    }
    let a1 = n1.dot(&dp) / len;
    let a2 = n2.dot(&dp) / len;
    let (u, n_other, phi) = if a1.abs().acos() > a2.abs().acos() {
        dp = -dp;
        (n2, n1, -a2)
    } else {
        (n1, n2, a1)
    };
    let v = dp.cross(u);
    let vn = v.norm();
    if vn == 0.0 {
        return None;
    }
    let v = v / vn;
    let w = u.cross(&v);
    let alpha = v.dot(n_other);
    let mut theta = w.dot(n_other).atan2(u.dot(n_other));
    // +π and −π are the same angle; pick one so round-off cannot flip bins
    if theta > std::f64::consts::PI - BRANCH_SNAP {
        theta = -std::f64::consts::PI;
    }
    Some([alpha, phi, theta])
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let idx = ((value - lo) / (hi - lo) * BINS_PER_FEATURE as f64).floor();
    (idx.max(0.0) as usize).min(BINS_PER_FEATURE - 1)
}

/// FPFH for every point using neighbours within `radius`.
///
/// Each point's simplified histogram is combined with its neighbours'
/// histograms weighted by inverse squared distance, each 11-bin block of the
/// neighbour sum normalized to 100.
pub fn compute_fpfh(set: &SurfacePointSet, radius: f64) -> Result<Vec<FpfhDescriptor>> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::input("fpfh radius must be positive"));
    }
    let normals = set
        .normals
        .as_ref()
        .ok_or_else(|| Error::input("fpfh requires normals"))?;
    let pts = &set.points;
    let tree = KdTree::build(pts);
    let neighbours: Vec<Vec<(usize, f64)>> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            tree.within_radius(p, radius)
                .into_iter()
                .filter(|&(j, _)| j != i)
                .collect()
        })
        .collect();

    let spfh: Vec<[f64; FPFH_BINS]> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut h = [0.0; FPFH_BINS];
            let nbrs = &neighbours[i];
            if nbrs.is_empty() {
                return h;
            }
            let incr = 100.0 / nbrs.len() as f64;
            for &(j, _) in nbrs {
                if let Some([alpha, phi, theta]) =
                    pair_features(&pts[i], &normals[i], &pts[j], &normals[j])
                {
                    h[bin(theta, -std::f64::consts::PI, std::f64::consts::PI)] += incr;
                    h[BINS_PER_FEATURE + bin(alpha, -1.0, 1.0)] += incr;
                    h[2 * BINS_PER_FEATURE + bin(phi, -1.0, 1.0)] += incr;
                }
            }
            h
        })
        .collect();

    Ok((0..pts.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = &neighbours[i];
            let mut h = [0.0; FPFH_BINS];
            let mut sums = [0.0; 3];
            for &(j, d2) in nbrs {
                if d2 == 0.0 {
                    continue;
                }
                for b in 0..FPFH_BINS {
                    let v = spfh[j][b] / d2;
                    sums[b / BINS_PER_FEATURE] += v;
                    h[b] += v;
                }
            }
            for b in 0..FPFH_BINS {
                let s = sums[b / BINS_PER_FEATURE];
                if s != 0.0 {
                    h[b] *= 100.0 / s;
                }
                h[b] += spfh[i][b];
            }
            FpfhDescriptor {
                histogram: h,
                isolated: nbrs.is_empty(),
            }
        })
        .collect())
}
