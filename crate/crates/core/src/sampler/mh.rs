//! Perturb-and-accept resampling of surface points during optimization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SpatialHash, SurfacePointSet};
use crate::error::{Error, Result};
use crate::sdf::SdfField;
use crate::transform::SimTransform;
use crate::Vec3;

/// Acceptance thresholds and resampling schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Band around the source surface: `|S_src(x)| ≤ omega1`.
    pub omega1: f64,
    /// Band around the target surface: `|S_tgt(g·x)| ≤ omega2`.
    pub omega2: f64,
    /// Bound on the scale-corrected residual `|S_src(x) − S_tgt(g·x)/s|`.
    pub xi: f64,
    /// Perturbation radius; accepted points keep `rho / 10` spacing.
    pub rho: f64,
    /// Iterations between resampling passes.
    pub resample_period: usize,
    /// Set size cap; the oldest points are evicted first.
    pub max_samples: usize,
    /// Leading points of the current set that are never evicted and do not
    /// count towards `max_samples`.
    pub pinned: usize,
}

impl SamplerConfig {
    pub fn with_rho(rho: f64) -> Self {
        SamplerConfig {
            rho,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("xi", self.xi),
            ("rho", self.rho),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if self.resample_period == 0 || self.max_samples == 0 {
            return Err(Error::input("resample period and sample cap must be positive"));
        }
        Ok(())
    }

    pub fn min_spacing(&self) -> f64 {
        self.rho / 10.0
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            omega1: 0.01,
            omega2: 0.02,
            xi: 0.02,
            rho: 0.05,
            resample_period: 10,
            max_samples: 4096,
            pinned: 0,
        }
    }
}

/// Result of one resampling pass.
#[derive(Clone, Debug)]
pub struct ResampleOutcome {
    pub samples: SurfacePointSet,
    /// Newly accepted points, in acceptance order.
    pub accepted: Vec<Vec3>,
    pub candidates: usize,
}

/// The three field predicates (spacing is checked separately).
pub fn passes_predicates(
    x: &Vec3,
    source: &SdfField,
    target: &SdfField,
    g: &SimTransform,
    cfg: &SamplerConfig,
) -> bool {
    let s_src = source.value(x);
    if !(s_src.abs() <= cfg.omega1) {
        return false;
    }
    let s_tgt = target.value(&g.apply(x));
    if !(s_tgt.abs() <= cfg.omega2) {
        return false;
    }
    (s_src - s_tgt / g.scale).abs() <= cfg.xi
}

pub fn mh_resample(
    current: &SurfacePointSet,
    source: &SdfField,
    target: &SdfField,
    g: &SimTransform,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<SurfacePointSet> {
    Ok(mh_resample_logged(current, source, target, g, cfg, seed)?.samples)
}

/// One pass: each current point spawns one uniformly perturbed candidate,
/// candidates are accepted in order, and the survivors are appended.
pub fn mh_resample_logged(
    current: &SurfacePointSet,
    source: &SdfField,
    target: &SdfField,
    g: &SimTransform,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<ResampleOutcome> {
    cfg.validate()?;
    if current.is_empty() {
        return Err(Error::EmptySamples("cannot resample an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Vec3> = current
        .points
        .iter()
        .map(|p| {
            p + Vec3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            ) * cfg.rho
        })
        .collect();

    let mut hash = SpatialHash::new(cfg.min_spacing());
    for p in &current.points {
        hash.insert(*p);
    }
    let mut accepted = Vec::new();
    for c in &candidates {
        if passes_predicates(c, source, target, g, cfg) && hash.insert_if_clear(*c) {
            accepted.push(*c);
        }
    }

    let mut points = current.points.clone();
    points.extend_from_slice(&accepted);
    let pinned = cfg.pinned.min(current.len());
    if points.len() - pinned > cfg.max_samples {
        points.drain(pinned..points.len() - cfg.max_samples);
    }
    Ok(ResampleOutcome {
        samples: SurfacePointSet::new(points, current.source.clone()),
        accepted,
        candidates: candidates.len(),
    })
}
