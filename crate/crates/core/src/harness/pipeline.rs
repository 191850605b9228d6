//! Single registration run: sample both fields, coarse-align, optimize, score.

use serde::{Deserialize, Serialize};

use super::spec::LoadedScene;
use crate::coarse::{coarse_align, coarse_align_normalized, CoarseConfig};
use crate::error::Result;
use crate::optimizer::{optimize, OptimizeOutcome, OptimizeStatus, OptimizerConfig};
use crate::sampler::{
    multi_view_surface_sample, sample_from_views, MultiViewConfig, SurfacePointSet, ViewPose,
};
use crate::sdf::{Aabb, SdfField};
use crate::seed;
use crate::transform::{transform_error, SimTransform};
use crate::Vec3;

/// Which cameras see the scene object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Ring plus top-down layout.
    Multi,
    /// One camera behind the object (canonical −y side), 30° up.
    Rear,
}

/// Pipeline settings. Lengths marked "in radii" scale with the detected
/// object's bounding radius in scene units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sampling: MultiViewConfig,
    pub scene_views: ViewMode,
    pub coarse: CoarseConfig,
    pub optimizer: OptimizerConfig,
    /// Coarse voxel, in radii.
    pub voxel_factor: f64,
    /// Initial kernel scale `p`, in radii.
    pub kernel_scale_factor: f64,
    /// Resampling perturbation `rho`, in radii.
    pub rho_factor: f64,
    /// Detection box inflation, in object bounding radii.
    pub crop_margin: f64,
    /// Coarse-align on spread-normalized clouds.
    pub normalize_coarse: bool,
    /// Optimize in units of the library object's bounding radius.
    pub normalize_units: bool,
    /// A run counts as converged when the final mean forward residual is at
    /// or below this and the optimizer did not abort.
    pub converged_residual: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sampling: MultiViewConfig::default(),
            scene_views: ViewMode::Multi,
            coarse: CoarseConfig::default(),
            optimizer: OptimizerConfig::default(),
            voxel_factor: 1.0 / 50.0,
            kernel_scale_factor: 0.1,
            rho_factor: 1.0 / 20.0,
            crop_margin: 0.05,
            normalize_coarse: true,
            normalize_units: true,
            converged_residual: 2e-3,
        }
    }
}

impl PipelineConfig {
    /// Coarse and optimizer settings for a detection of radius `r`.
    pub fn resolved(&self, r: f64) -> (CoarseConfig, OptimizerConfig) {
        let coarse = CoarseConfig {
            voxel: self.voxel_factor * r,
            ..self.coarse
        };
        let mut opt = self.optimizer;
        opt.initial_p = self.kernel_scale_factor * r;
        opt.sampler.rho = self.rho_factor * r;
        (coarse, opt)
    }
}

/// One scored run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub object_id: String,
    pub seed: u64,
    pub truth: SimTransform,
    pub init: SimTransform,
    pub estimate: SimTransform,
    /// Position error of the object in the scene, in scene units: the
    /// translation difference of the inverse (object to scene) transforms.
    pub delta_t: f64,
    /// Translation difference of the scene-to-object transforms, in object
    /// units.
    pub delta_t_object: f64,
    /// `delta_t_object` over the object's canonical bounding radius.
    pub delta_t_normalized: f64,
    pub delta_r: f64,
    pub delta_s: f64,
    pub init_delta_t: f64,
    pub init_delta_r: f64,
    pub coarse_converged: bool,
    pub converged: bool,
    pub status: OptimizeStatus,
    pub iterations: usize,
    pub final_residual: f64,
    pub scene_samples: usize,
    pub object_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Row plus the raw optimizer outcome.
#[derive(Clone, Debug)]
pub struct RunDetail {
    pub row: RunRow,
    pub scene_samples: SurfacePointSet,
    pub object_samples: SurfacePointSet,
    pub outcome: OptimizeOutcome,
    pub optimizer: OptimizerConfig,
}

/// Ground-truth detection: scene-space centre and bounding radius.
pub fn detection(scene: &LoadedScene, object_id: &str) -> Result<(Vec3, f64)> {
    let p = scene.spec.placement(object_id)?;
    let entry = scene.library.get(object_id)?;
    Ok((p.center()?, entry.bounding_radius / p.transform.scale))
}

/// Single camera behind the object, looking at its centre.
pub fn rear_view(truth: &SimTransform, center: Vec3, radius: f64, cfg: &MultiViewConfig) -> Result<ViewPose> {
    let elev = 30f64.to_radians();
    let back = Vec3::new(0.0, -elev.cos(), elev.sin());
    let dir = (truth.rotation().transpose() * back).normalize();
    ViewPose::new(center + dir * (cfg.view_radius_factor * radius), center, Vec3::z())
}

/// Keeps the points whose image under `truth` falls inside the object's
/// canonical box grown by `margin` on every side.
fn crop_to_box(set: SurfacePointSet, truth: &SimTransform, half: &[f64; 3], margin: f64) -> SurfacePointSet {
    let sim = truth.similarity();
    let keep: Vec<bool> = set
        .points
        .iter()
        .map(|p| {
            let q = sim.apply(p);
            (0..3).all(|k| q[k].abs() <= half[k] + margin)
        })
        .collect();
    let pick = |v: &Vec<Vec3>| -> Vec<Vec3> {
        v.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect()
    };
    SurfacePointSet {
        points: pick(&set.points),
        normals: set.normals.as_ref().map(pick),
        source: set.source,
    }
}

/// Scene samples of the detected object as the configured cameras see them.
pub fn sample_scene_object(scene: &LoadedScene, object_id: &str, cfg: &PipelineConfig) -> Result<SurfacePointSet> {
    let (center, r) = detection(scene, object_id)?;
    let truth = scene.spec.placement(object_id)?.transform;
    let entry = scene.library.get(object_id)?;
    // trace tolerances follow the detection cube, not the whole room
    let half = Vec3::repeat(r);
    let field = scene
        .scene_field
        .clone()
        .with_bounds(Aabb::new((center - half).into(), (center + half).into())?)?;
    let raw = match cfg.scene_views {
        ViewMode::Multi => multi_view_surface_sample(&field, "scene", center, r, &cfg.sampling)?,
        ViewMode::Rear => {
            let view = rear_view(&truth, center, r, &cfg.sampling)?;
            sample_from_views(&field, "scene", &[view], center, r, &cfg.sampling)?
        }
    };
    let cropped = crop_to_box(raw, &truth, &entry.half_extents, cfg.crop_margin * entry.bounding_radius);
    if cropped.is_empty() {
        return Err(crate::Error::EmptySamples(format!(
            "no scene samples inside the detection box of '{object_id}'"
        )));
    }
    Ok(cropped)
}

/// Samples of a library object in its canonical frame.
pub fn sample_library_object(scene: &LoadedScene, object_id: &str, cfg: &PipelineConfig) -> Result<SurfacePointSet> {
    let entry = scene.library.get(object_id)?;
    multi_view_surface_sample(
        scene.object_field(object_id)?,
        "object",
        Vec3::zeros(),
        entry.bounding_radius,
        &cfg.sampling,
    )
}

/// Same transform expressed with both frames shrunk by `unit`.
fn shrink(g: &SimTransform, unit: f64) -> SimTransform {
    let t = g.translation_vec() / unit;
    SimTransform { translation: t.into(), ..*g }
}

fn scaled(set: &SurfacePointSet, k: f64) -> SurfacePointSet {
    SurfacePointSet {
        points: set.points.iter().map(|p| p * k).collect(),
        ..set.clone()
    }
}

/// Full pipeline for one placed object.
pub fn run_registration(scene: &LoadedScene, object_id: &str, cfg: &PipelineConfig, run_seed: u64) -> Result<RunRow> {
    Ok(run_registration_detailed(scene, object_id, cfg, run_seed)?.row)
}

pub fn run_registration_detailed(
    scene: &LoadedScene,
    object_id: &str,
    cfg: &PipelineConfig,
    run_seed: u64,
) -> Result<RunDetail> {
    let truth = scene.spec.placement(object_id)?.transform;
    let entry = scene.library.get(object_id)?;
    let (_, r) = detection(scene, object_id)?;
    let (coarse_cfg, _) = cfg.resolved(r);

    let a = sample_scene_object(scene, object_id, cfg)?;
    let b = sample_library_object(scene, object_id, cfg)?;

    let coarse_seed = seed::derive(run_seed, seed::tag("coarse"));
    let (coarse_converged, init) = if cfg.normalize_coarse {
        let (ransac, _, init) = coarse_align_normalized(&a, &b, &coarse_cfg, coarse_seed)?;
        (ransac.converged, init)
    } else {
        let (ransac, icp) = coarse_align(&a, &b, &coarse_cfg, coarse_seed)?;
        (ransac.converged, icp.transform)
    };
    let init = if coarse_converged {
        init
    } else {
        // identity rotation, centroids matched
        SimTransform::from_translation((b.centroid() - a.centroid()).into())
    };

    let unit = if cfg.normalize_units { entry.bounding_radius } else { 1.0 };
    let (_, opt_cfg) = cfg.resolved(r / unit);
    let mut outcome = optimize(
        &SdfField::posed(scene.scene_field.clone(), SimTransform::from_scale(unit)?)?,
        &SdfField::posed(scene.object_field(object_id)?.clone(), SimTransform::from_scale(unit)?)?,
        &shrink(&init, unit),
        &scaled(&a, 1.0 / unit),
        &scaled(&b, 1.0 / unit),
        &opt_cfg,
        seed::derive(run_seed, seed::tag("optimize")),
        Some(&shrink(&truth, unit)),
    )?;
    outcome.transform = shrink(&outcome.transform, 1.0 / unit);
    let err = transform_error(&outcome.transform, &truth);
    let pose_err = transform_error(&outcome.transform.inverse()?, &truth.inverse()?);
    let init_err = transform_error(&init.inverse()?, &truth.inverse()?);
    let final_residual = outcome.final_mean_forward_residual();
    let converged = outcome.status != OptimizeStatus::Aborted && final_residual <= cfg.converged_residual;
    let row = RunRow {
        object_id: object_id.to_string(),
        seed: run_seed,
        truth,
        init,
        estimate: outcome.transform,
        delta_t: pose_err.delta_t,
        delta_t_object: err.delta_t,
        delta_t_normalized: err.delta_t / entry.bounding_radius,
        delta_r: err.delta_r,
        delta_s: err.delta_s,
        init_delta_t: init_err.delta_t,
        init_delta_r: init_err.delta_r,
        coarse_converged,
        converged,
        status: outcome.status,
        iterations: outcome.iterations,
        final_residual,
        scene_samples: a.len(),
        object_samples: b.len(),
        message: outcome.message.clone(),
    };
    Ok(RunDetail {
        row,
        scene_samples: a,
        object_samples: b,
        outcome,
        optimizer: opt_cfg,
    })
}
