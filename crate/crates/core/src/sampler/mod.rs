//! Surface sampling: camera placement, sphere tracing, multi-view point sets
//! and the rejection resampler used during optimization.

mod mh;
mod ply;

use std::collections::HashMap;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdf::SdfField;
use crate::Vec3;

pub use mh::{mh_resample, mh_resample_logged, passes_predicates, ResampleOutcome, SamplerConfig};
pub use ply::{read_ply, write_ply};

/// Camera looking at `target` from `position`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub position: Vec3,
    pub target: Vec3,
    pub up: Vec3,
}

impl ViewPose {
    pub fn new(position: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = target - position;
        if !(forward.norm() > 0.0) || !up.iter().all(|v| v.is_finite()) {
            return Err(Error::input("view position must differ from its target"));
        }
        Ok(ViewPose {
            position,
            target,
            up,
        })
    }

    /// Columns are camera right, up and backward; the camera looks along −z.
    pub fn orientation(&self) -> Matrix3<f64> {
        let forward = (self.target - self.position).normalize();
        let mut right = forward.cross(&self.up);
        if right.norm() < 1e-9 {
            // up hint parallel to the viewing direction
            let alt = if forward.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            right = forward.cross(&alt);
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        Matrix3::from_columns(&[right, up, -forward])
    }
}

/// `n − 1` poses on a ring at 30° elevation plus one top-down pose (last),
/// all at distance `radius` from `centroid` and looking at it.
pub fn generate_view_poses(centroid: Vec3, radius: f64, n: usize) -> Result<Vec<ViewPose>> {
    if n == 0 {
        return Err(Error::input("at least one view is required"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::input("view radius must be positive"));
    }
    let ring = n - 1;
    let elev = 30f64.to_radians();
    let mut poses = Vec::with_capacity(n);
    for k in 0..ring {
        let phi = std::f64::consts::TAU * k as f64 / ring as f64;
        let dir = Vec3::new(elev.cos() * phi.cos(), elev.cos() * phi.sin(), elev.sin());
        poses.push(ViewPose::new(centroid + dir * radius, centroid, Vec3::z())?);
    }
    poses.push(ViewPose::new(
        centroid + Vec3::z() * radius,
        centroid,
        Vec3::y(),
    )?);
    Ok(poses)
}

/// Sphere-tracing parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub step_scale: f64,
    pub max_steps: usize,
    /// Convergence tolerance as a fraction of the field diameter.
    pub tolerance: f64,
    pub refinements: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            step_scale: 0.8,
            max_steps: 256,
            tolerance: 1e-4,
            refinements: 8,
        }
    }
}

/// First zero crossing along the ray, using the default [`TraceConfig`].
pub fn trace_ray(field: &SdfField, origin: &Vec3, direction: &Vec3) -> Option<Vec3> {
    trace_ray_with(field, origin, direction, &TraceConfig::default())
}

pub fn trace_ray_with(
    field: &SdfField,
    origin: &Vec3,
    direction: &Vec3,
    cfg: &TraceConfig,
) -> Option<Vec3> {
    let bounds = field.bounds()?;
    let tol = cfg.tolerance * bounds.diagonal();
    let t_max = (origin - bounds.center()).norm() + bounds.bounding_radius();
    let at = |t: f64| origin + direction * t;
    let mut f_prev = field.value(origin);
    if !(f_prev >= 0.0) {
        return None;
    }
    if f_prev <= tol {
        return Some(*origin);
    }
    let mut t_prev = 0.0;
    let mut t = cfg.step_scale * f_prev;
    for _ in 0..cfg.max_steps {
        if t > t_max {
            return None;
        }
        let f = field.value(&at(t));
        if f < 0.0 {
            return Some(at(bisect(field, origin, direction, t_prev, t, tol, cfg.refinements)));
        }
        if f <= tol {
            let t2 = t + 2.0 * tol;
            if field.value(&at(t2)) < 0.0 {
                return Some(at(bisect(field, origin, direction, t, t2, tol, cfg.refinements)));
            }
            return Some(at(t));
        }
        t_prev = t;
        f_prev = f;
        t += cfg.step_scale * f_prev;
    }
    None
}

/// Bisects a sign change on `[lo, hi]` (positive at `lo`). Runs at least
/// `min_iters` halvings and continues until the bracket is below `tol`.
fn bisect(
    field: &SdfField,
    origin: &Vec3,
    dir: &Vec3,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    min_iters: usize,
) -> f64 {
    let mut iters = 0;
    while iters < min_iters || (hi - lo > tol && iters < 64) {
        let mid = 0.5 * (lo + hi);
        if field.value(&(origin + dir * mid)) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    0.5 * (lo + hi)
}

/// Surface points extracted from one field.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<Vec3>,
    pub source: String,
    pub normals: Option<Vec<Vec3>>,
}

impl SurfacePointSet {
    pub fn new(points: Vec<Vec3>, source: impl Into<String>) -> Self {
        SurfacePointSet {
            points,
            source: source.into(),
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }
}

/// Multi-view sampling parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiViewConfig {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Camera distance as a multiple of the object radius.
    pub view_radius_factor: f64,
    /// Hits farther than this multiple of the object radius are dropped.
    pub filter_factor: f64,
    /// Minimum spacing between kept points, as a fraction of the object radius.
    pub dedup_factor: f64,
    pub trace: TraceConfig,
}

impl Default for MultiViewConfig {
    fn default() -> Self {
        MultiViewConfig {
            views: 8,
            width: 64,
            height: 64,
            view_radius_factor: 2.5,
            filter_factor: 1.5,
            dedup_factor: 0.01,
            trace: TraceConfig::default(),
        }
    }
}

/// Samples `field` from the default ring-plus-top camera layout around `centroid`.
pub fn multi_view_surface_sample(
    field: &SdfField,
    source: &str,
    centroid: Vec3,
    object_radius: f64,
    cfg: &MultiViewConfig,
) -> Result<SurfacePointSet> {
    if !(object_radius.is_finite() && object_radius > 0.0) {
        return Err(Error::input("object radius must be positive"));
    }
    let views = generate_view_poses(centroid, cfg.view_radius_factor * object_radius, cfg.views)?;
    sample_from_views(field, source, &views, centroid, object_radius, cfg)
}

/// Samples `field` from explicit cameras; each camera's field of view is sized
/// to frame the object's bounding sphere.
pub fn sample_from_views(
    field: &SdfField,
    source: &str,
    views: &[ViewPose],
    centroid: Vec3,
    object_radius: f64,
    cfg: &MultiViewConfig,
) -> Result<SurfacePointSet> {
    if cfg.width < 2 || cfg.height < 2 {
        return Err(Error::input("ray grid must be at least 2x2"));
    }
    if views.is_empty() {
        return Err(Error::input("no views given"));
    }
    let (w, h) = (cfg.width, cfg.height);
    let frames: Vec<(Vec3, Matrix3<f64>, f64)> = views
        .iter()
        .map(|v| {
            let d = (v.position - centroid).norm();
            let framed = 1.15 * object_radius;
            let tan_half = if d > framed {
                framed / (d * d - framed * framed).sqrt()
            } else {
                1.0
            };
            (v.position, v.orientation(), tan_half)
        })
        .collect();
    let hits: Vec<Option<Vec3>> = (0..views.len() * w * h)
        .into_par_iter()
        .map(|idx| {
            let (view, pix) = (idx / (w * h), idx % (w * h));
            let (row, col) = (pix / w, pix % w);
            let (origin, rot, tan_half) = &frames[view];
            let u = ((col as f64 + 0.5) / w as f64 * 2.0 - 1.0) * tan_half;
            let v = (1.0 - (row as f64 + 0.5) / h as f64 * 2.0) * tan_half;
            let dir = (-rot.column(2) + rot.column(0) * u + rot.column(1) * v).normalize();
            trace_ray_with(field, origin, &dir, &cfg.trace)
        })
        .collect();

    let max_dist = cfg.filter_factor * object_radius;
    let surface_tol = 1e-3 * field.diameter();
    let mut dedup = SpatialHash::new(cfg.dedup_factor * object_radius);
    let mut points = Vec::new();
    for p in hits.into_iter().flatten() {
        if (p - centroid).norm() > max_dist || field.value(&p).abs() > surface_tol {
            continue;
        }
        if dedup.insert_if_clear(p) {
            points.push(p);
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySamples(format!(
            "no rays hit field '{source}' near {centroid:?}"
        )));
    }
    let normals = points
        .par_iter()
        .map(|p| {
            let g = field.value_and_gradient(p).1;
            let n = g.norm();
            if n > 0.0 {
                g / n
            } else {
                Vec3::z()
            }
        })
        .collect();
    Ok(SurfacePointSet {
        points,
        source: source.to_string(),
        normals: Some(normals),
    })
}

/// Uniform hash grid for minimum-spacing checks.
#[derive(Clone, Debug)]
pub(crate) struct SpatialHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<Vec3>>,
}

impl SpatialHash {
    pub(crate) fn new(spacing: f64) -> Self {
        SpatialHash {
            cell: spacing,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] / self.cell).floor() as i64)
    }

    pub(crate) fn insert(&mut self, p: Vec3) {
        let k = self.key(&p);
        self.buckets.entry(k).or_default().push(p);
    }

    /// True if no stored point lies strictly closer than the spacing.
    pub(crate) fn is_clear(&self, p: &Vec3) -> bool {
        if self.cell <= 0.0 {
            return true;
        }
        let [x, y, z] = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[x + dx, y + dy, z + dz]) {
                        if b.iter().any(|q| (q - p).norm() < self.cell) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub(crate) fn insert_if_clear(&mut self, p: Vec3) -> bool {
        let clear = self.is_clear(&p);
        if clear {
            self.insert(p);
        }
        clear
    }
}
