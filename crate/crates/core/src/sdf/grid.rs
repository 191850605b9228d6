//! Dense trilinear SDF grids and their on-disk format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Aabb, SdfField};
use crate::error::{Error, Result};
use crate::Vec3;

pub const GRID_SCHEMA_VERSION: u32 = 1;

/// JSON header stored next to the raw value blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub schema_version: u32,
    pub resolution: [usize; 3],
    pub bounds: Aabb,
    pub seed: u64,
    pub noise_amplitude: f64,
    /// Blob path relative to the header's directory.
    pub data: String,
    pub dtype: String,
    pub order: String,
}

/// Values sampled on a regular lattice spanning `bounds`, corners included.
///
/// Stored as `f32`, x varying fastest. Queries outside the bounds are clamped
/// to the box and the Euclidean distance to the box is added.
#[derive(Clone, Debug)]
pub struct GridField {
    resolution: [usize; 3],
    bounds: Aabb,
    values: Vec<f32>,
    seed: u64,
    noise_amplitude: f64,
    fd_step: f64,
}

/// Samples `source` on a `resolution³`-style lattice over `bounds`, adding
/// seeded uniform noise in `[-noise_amplitude, noise_amplitude]`.
pub fn make_grid_field(
    source: &SdfField,
    resolution: [usize; 3],
    bounds: Aabb,
    noise_amplitude: f64,
    seed: u64,
) -> Result<GridField> {
    bounds.validate()?;
    if resolution.iter().any(|&n| n < 2) {
        return Err(Error::input("grid resolution must be at least 2 per axis"));
    }
    if !(noise_amplitude.is_finite() && noise_amplitude >= 0.0) {
        return Err(Error::input("noise amplitude must be non-negative"));
    }
    let [nx, ny, nz] = resolution;
    let lo = bounds.lo();
    let step = (bounds.hi() - lo).component_div(&Vec3::new(
        (nx - 1) as f64,
        (ny - 1) as f64,
        (nz - 1) as f64,
    ));
    let mut values = vec![0f32; nx * ny * nz];
    values
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slab)| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = lo + Vec3::new(i as f64, j as f64, k as f64).component_mul(&step);
                    slab[j * nx + i] = source.value(&p) as f32;
                }
            }
        });
    if noise_amplitude > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut values {
            *v += rng.random_range(-noise_amplitude..=noise_amplitude) as f32;
        }
    }
    Ok(GridField::from_parts(resolution, bounds, values, seed, noise_amplitude))
}

impl GridField {
    fn from_parts(
        resolution: [usize; 3],
        bounds: Aabb,
        values: Vec<f32>,
        seed: u64,
        noise_amplitude: f64,
    ) -> Self {
        GridField {
            resolution,
            bounds,
            values,
            seed,
            noise_amplitude,
            fd_step: 1e-4 * bounds.diagonal(),
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn noise_amplitude(&self) -> f64 {
        self.noise_amplitude
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Central-difference step used for gradients.
    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn with_fd_step(mut self, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::input("finite-difference step must be positive"));
        }
        self.fd_step = h;
        Ok(self)
    }

    pub fn cell_size(&self) -> Vec3 {
        let [nx, ny, nz] = self.resolution;
        (self.bounds.hi() - self.bounds.lo()).component_div(&Vec3::new(
            (nx - 1) as f64,
            (ny - 1) as f64,
            (nz - 1) as f64,
        ))
    }

    pub fn lattice_point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bounds.lo() + Vec3::new(i as f64, j as f64, k as f64).component_mul(&self.cell_size())
    }

    pub fn lattice_value(&self, i: usize, j: usize, k: usize) -> f32 {
        let [nx, ny, _] = self.resolution;
        self.values[(k * ny + j) * nx + i]
    }

    /// Trilinear interpolation inside cell `cell` at local coordinates `t ∈ [0,1]³`.
    fn interpolate(&self, cell: [usize; 3], t: Vec3) -> f64 {
        let [i, j, k] = cell;
        let lerp = |a: f64, b: f64, s: f64| a * (1.0 - s) + b * s;
        let at = |di: usize, dj: usize, dk: usize| self.lattice_value(i + di, j + dj, k + dk) as f64;
        let c00 = lerp(at(0, 0, 0), at(1, 0, 0), t.x);
        let c10 = lerp(at(0, 1, 0), at(1, 1, 0), t.x);
        let c01 = lerp(at(0, 0, 1), at(1, 0, 1), t.x);
        let c11 = lerp(at(0, 1, 1), at(1, 1, 1), t.x);
        lerp(lerp(c00, c10, t.y), lerp(c01, c11, t.y), t.z)
    }

    fn locate(&self, p: &Vec3) -> ([usize; 3], Vec3) {
        let u = (p - self.bounds.lo()).component_div(&self.cell_size());
        let mut cell = [0usize; 3];
        let mut t = Vec3::zeros();
        for a in 0..3 {
            let last = self.resolution[a] - 2;
            let c = (u[a].floor().max(0.0) as usize).min(last);
            cell[a] = c;
            t[a] = u[a] - c as f64;
        }
        (cell, t)
    }

    pub fn value(&self, p: &Vec3) -> f64 {
        let q = self.bounds.clamp(p);
        let (cell, t) = self.locate(&q);
        self.interpolate(cell, t) + (p - q).norm()
    }

    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = self.fd_step;
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut hi = *p;
            let mut lo = *p;
            hi[a] += h;
            lo[a] -= h;
            g[a] = (self.value(&hi) - self.value(&lo)) / (2.0 * h);
        }
        g
    }

    /// Resamples this grid on a new lattice over the same bounds.
    ///
    /// Lattice points shared with the original keep their exact values.
    pub fn resample(&self, resolution: [usize; 3]) -> Result<GridField> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::input("grid resolution must be at least 2 per axis"));
        }
        let [nx, ny, nz] = resolution;
        let src = self.resolution;
        let mut values = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = [i, j, k];
                    let n = [nx, ny, nz];
                    // land exactly on source lattice nodes when the index maps to one
                    let mut cell = [0usize; 3];
                    let mut t = Vec3::zeros();
                    for a in 0..3 {
                        let num = idx[a] * (src[a] - 1);
                        let den = n[a] - 1;
                        let c = (num / den).min(src[a] - 2);
                        cell[a] = c;
                        t[a] = (num as f64 - (c * den) as f64) / den as f64;
                    }
                    values.push(self.interpolate(cell, t) as f32);
                }
            }
        }
        Ok(GridField::from_parts(
            resolution,
            self.bounds,
            values,
            self.seed,
            self.noise_amplitude,
        ))
    }

    pub fn header(&self, data: impl Into<String>) -> GridHeader {
        GridHeader {
            schema_version: GRID_SCHEMA_VERSION,
            resolution: self.resolution,
            bounds: self.bounds,
            seed: self.seed,
            noise_amplitude: self.noise_amplitude,
            data: data.into(),
            dtype: "f32le".into(),
            order: "x-fastest".into(),
        }
    }

    /// Writes `<header_path>` (JSON) and a sibling `.bin` blob.
    pub fn write(&self, header_path: &Path) -> Result<()> {
        let blob_path = header_path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::input("grid header path has no file name"))?
            .to_string();
        let mut bytes = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&blob_path, bytes)?;
        let header = serde_json::to_string_pretty(&self.header(blob_name))?;
        fs::write(header_path, header)?;
        Ok(())
    }

    pub fn read(header_path: &Path) -> Result<GridField> {
        let header: GridHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
        if header.schema_version != GRID_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported grid schema version {}",
                header.schema_version
            )));
        }
        if header.dtype != "f32le" || header.order != "x-fastest" {
            return Err(Error::Parse(format!(
                "unsupported grid layout {} / {}",
                header.dtype, header.order
            )));
        }
        header.bounds.validate()?;
        if header.resolution.iter().any(|&n| n < 2) {
            return Err(Error::Parse("grid resolution must be at least 2".into()));
        }
        let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
        let bytes = fs::read(dir.join(&header.data))?;
        let count: usize = header.resolution.iter().product();
        if bytes.len() != count * 4 {
            return Err(Error::Parse(format!(
                "grid blob has {} bytes, expected {}",
                bytes.len(),
                count * 4
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse("grid blob contains non-finite values".into()));
        }
        Ok(GridField::from_parts(
            header.resolution,
            header.bounds,
            values,
            header.seed,
            header.noise_amplitude,
        ))
    }
}
