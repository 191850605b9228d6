//! Multi-seed runs over (object, seed) cells.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate_onr_like, GenerationParams};
use super::pipeline::{detection, run_registration, PipelineConfig};
use super::report::ReportRow;
use super::spec::LoadedScene;
use crate::error::{Error, Result};
use crate::sdf::{make_grid_field, Aabb, SdfField};
use crate::seed;
use crate::Vec3;

/// Where the scenes come from.
#[derive(Clone, Debug)]
pub enum Scenario {
    /// One scene shared by every seed; only the pipeline seed varies.
    Fixed(LoadedScene),
    /// A fresh room per seed (placements follow the seed) over one library.
    Generated {
        params: GenerationParams,
        library_seed: u64,
    },
}

impl Scenario {
    pub fn scene_for(&self, run_seed: u64) -> Result<LoadedScene> {
        match self {
            Scenario::Fixed(scene) => Ok(scene.clone()),
            Scenario::Generated {
                params,
                library_seed,
            } => {
                let params = GenerationParams {
                    library_seed: Some(*library_seed),
                    ..params.clone()
                };
                let (spec, library) = generate_onr_like(run_seed, &params)?;
                LoadedScene::new(spec, library, Path::new("."))
            }
        }
    }

    /// Placed object ids of the first seed's scene.
    pub fn object_ids(&self, first_seed: u64) -> Result<Vec<String>> {
        Ok(self
            .scene_for(first_seed)?
            .spec
            .objects
            .iter()
            .map(|p| p.object_id.clone())
            .collect())
    }
}

/// Replaces the scene around the detected object by a sampled grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDegradation {
    pub resolution: usize,
    /// Uniform noise amplitude, in detection radii.
    pub noise: f64,
    /// Grid half-size, in detection radii.
    pub extent: f64,
}

impl GridDegradation {
    pub fn new(resolution: usize, noise: f64) -> Self {
        GridDegradation {
            resolution,
            noise,
            extent: 1.6,
        }
    }

    pub fn apply(&self, scene: &LoadedScene, object_id: &str, run_seed: u64) -> Result<LoadedScene> {
        let (center, r) = detection(scene, object_id)?;
        let half = Vec3::repeat(self.extent * r);
        let bounds = Aabb::new((center - half).into(), (center + half).into())?;
        let grid = make_grid_field(
            &scene.scene_field,
            [self.resolution; 3],
            bounds,
            self.noise * r,
            seed::derive(run_seed, seed::tag("grid")),
        )?;
        Ok(scene.with_scene_field(SdfField::grid(grid)))
    }
}

/// Rows in (object, seed) order plus the wall time of each run in seconds.
#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub rows: Vec<ReportRow>,
    pub wall_times: Vec<f64>,
}

/// Runs every (object, seed) cell in parallel and collects in cell order, so
/// the rows do not depend on the worker count.
pub fn run_bench(
    scenario: &Scenario,
    objects: &[String],
    seeds: &[u64],
    cfg: &PipelineConfig,
    variant: &str,
    degradation: Option<GridDegradation>,
) -> Result<BenchOutcome> {
    if objects.is_empty() || seeds.is_empty() {
        return Err(Error::input("bench needs at least one object and one seed"));
    }
    let scenes: Vec<LoadedScene> = seeds
        .iter()
        .map(|&s| scenario.scene_for(s))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..objects.len())
        .flat_map(|o| (0..seeds.len()).map(move |s| (o, s)))
        .collect();
    let results: Vec<Result<(ReportRow, f64)>> = cells
        .par_iter()
        .map(|&(o, s)| {
            let start = Instant::now();
            let id = &objects[o];
            let scene = match degradation {
                Some(d) => d.apply(&scenes[s], id, seeds[s])?,
                None => scenes[s].clone(),
            };
            let run = run_registration(&scene, id, cfg, seeds[s])?;
            let row = ReportRow {
                variant: variant.to_string(),
                run,
            };
            Ok((row, start.elapsed().as_secs_f64()))
        })
        .collect();
    let mut rows = Vec::with_capacity(cells.len());
    let mut wall_times = Vec::with_capacity(cells.len());
    for r in results {
        let (row, t) = r?;
        rows.push(row);
        wall_times.push(t);
    }
    Ok(BenchOutcome { rows, wall_times })
}
