//! Sphere-traced depth images for figures.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampler::{trace_ray_with, write_ply, SurfacePointSet, TraceConfig, ViewPose};
use crate::sdf::SdfField;
use crate::Vec3;

/// Depth along each pixel's ray (row-major, top row first); `None` is a miss.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Depth written for misses and the top of the 16-bit range.
    pub max_depth: f64,
    pub depth: Vec<Option<f64>>,
    pub hits: Vec<Vec3>,
}

impl DepthImage {
    pub fn hit_fraction(&self) -> f64 {
        self.depth.iter().filter(|d| d.is_some()).count() as f64 / self.depth.len() as f64
    }

    pub fn at(&self, row: usize, col: usize) -> Option<f64> {
        self.depth[row * self.width + col]
    }

    /// Binary 16-bit PGM; depth scaled linearly to `[0, 65535]`, misses white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for d in &self.depth {
            let v = match d {
                Some(d) => (d / self.max_depth * 65535.0).round().clamp(0.0, 65535.0) as u16,
                None => u16::MAX,
            };
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    /// Writes `<stem>.pgm` and `<stem>.ply`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        fs::write(stem.with_extension("pgm"), self.to_pgm())?;
        write_ply(&stem.with_extension("ply"), &SurfacePointSet::new(self.hits.clone(), "render"))
    }
}

/// Renders `field` from `view` with a square pinhole camera of vertical field
/// of view `fov_deg`.
pub fn render_depth(field: &SdfField, view: &ViewPose, resolution: [usize; 2], fov_deg: f64) -> Result<DepthImage> {
    let [w, h] = resolution;
    if w < 16 || h < 16 {
        return Err(Error::input("render resolution must be at least 16x16"));
    }
    if !(fov_deg > 0.0 && fov_deg < 180.0) {
        return Err(Error::input("field of view must lie in (0, 180) degrees"));
    }
    let max_depth = field
        .bounds()
        .map_or(1.0, |b| (view.position - b.center()).norm() + b.bounding_radius());
    let rot = view.orientation();
    let tan_half = (fov_deg.to_radians() / 2.0).tan();
    let aspect = w as f64 / h as f64;
    let cfg = TraceConfig::default();
    let hits: Vec<Option<Vec3>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            let u = ((col as f64 + 0.5) / w as f64 * 2.0 - 1.0) * tan_half * aspect;
            let v = (1.0 - (row as f64 + 0.5) / h as f64 * 2.0) * tan_half;
            let dir = (-rot.column(2) + rot.column(0) * u + rot.column(1) * v).normalize();
            trace_ray_with(field, &view.position, &dir, &cfg)
        })
        .collect();
    let depth = hits
        .iter()
        .map(|p| p.map(|p| (p - view.position).norm()))
        .collect();
    Ok(DepthImage {
        width: w,
        height: h,
        max_depth,
        depth,
        hits: hits.into_iter().flatten().collect(),
    })
}

/// Elevated corner view of a room of bounding radius `radius`, looking
/// across it towards the far corner.
pub fn room_view(radius: f64) -> Result<ViewPose> {
    ViewPose::new(
        Vec3::new(-0.45 * radius, -0.45 * radius, 0.3 * radius),
        Vec3::new(0.2 * radius, 0.2 * radius, 0.1 * radius),
        Vec3::z(),
    )
}
