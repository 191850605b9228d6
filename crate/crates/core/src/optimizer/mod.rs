//! Gradient-descent registration of a source field against a target field.
//!
//! The loss averages a robust kernel of field-value residuals over samples of
//! both surfaces, plus a nearest-neighbour point regularizer. Both sample sets
//! are refreshed periodically by [`crate::sampler::mh_resample_logged`].

mod kernel;
mod loss;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{mh_resample_logged, SamplerConfig, SurfacePointSet};
use crate::sdf::SdfField;
use crate::seed;
use crate::transform::{euler_partials, transform_error, SimTransform};
use crate::Vec3;

pub use kernel::{kernel, kernel_eval, KernelEval, KernelParams, MAX_SHAPE, MIN_SCALE, MIN_SHAPE};
pub use loss::{
    loss_gradient, pack, regularizer, residual_backward, residual_forward, total_loss, unpack,
    Evaluator, Gradient, LossBreakdown, LossOptions, N_PARAMS,
};

pub const MIN_TRANSFORM_SCALE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub lr_scale: f64,
    pub lr_kernel: f64,
    pub max_iterations: usize,
    /// Stop once the mean absolute forward residual is at or below this.
    pub early_stop: f64,
    pub reg_weight: f64,
    pub bidirectional: bool,
    pub initial_p: f64,
    pub initial_alpha: f64,
    /// Upper clamp on `p` as a multiple of `initial_p`. The loss never
    /// increases with `p`, so without a cap descent only inflates it.
    pub max_p_ratio: f64,
    /// Abort when either sample set has fewer points.
    pub min_samples: usize,
    /// Rotate and scale about the centroid of the initial source samples
    /// instead of the source origin.
    pub pivot_at_centroid: bool,
    /// Keep every resampling pass in the outcome.
    pub record_resamples: bool,
    /// Never evict the initial samples; only resampled points are capped.
    pub keep_initial_samples: bool,
    pub sampler: SamplerConfig,
}

impl OptimizerConfig {
    /// Defaults with `p` and `rho` tied to the scene radius.
    pub fn for_scene_radius(radius: f64) -> Self {
        OptimizerConfig {
            initial_p: 0.1 * radius,
            sampler: SamplerConfig::with_rho(radius / 20.0),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rotation rate", self.lr_rotation),
            ("translation rate", self.lr_translation),
            ("scale rate", self.lr_scale),
            ("kernel rate", self.lr_kernel),
            ("early stop threshold", self.early_stop),
            ("initial p", self.initial_p),
            ("p cap ratio", self.max_p_ratio),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.reg_weight.is_finite() && self.reg_weight >= 0.0) {
            return Err(Error::input("regularizer weight must be non-negative"));
        }
        self.sampler.validate()
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            bidirectional: self.bidirectional,
            reg_weight: self.reg_weight,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr_rotation: 0.02,
            lr_translation: 0.01,
            lr_scale: 0.01,
            lr_kernel: 0.005,
            max_iterations: 200,
            early_stop: 0.0005,
            reg_weight: 1.0,
            bidirectional: true,
            initial_p: 0.1,
            initial_alpha: 1.0,
            max_p_ratio: 1.0,
            min_samples: 10,
            pivot_at_centroid: true,
            record_resamples: false,
            keep_initial_samples: true,
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizeStatus {
    EarlyStopped,
    MaxIterations,
    Aborted,
}

/// One line of the diagnostics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub iteration: usize,
    pub loss: f64,
    pub mean_forward_residual: f64,
    pub mean_backward_residual: f64,
    pub regularizer: f64,
    pub delta_t: Option<f64>,
    pub delta_r: Option<f64>,
    pub delta_s: Option<f64>,
    pub p: f64,
    pub alpha: f64,
    pub scale: f64,
}

/// One resampling pass over one set.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampleRecord {
    pub iteration: usize,
    /// True for the source set `A`, false for `B`.
    pub source_side: bool,
    /// Transform taking this set's field into the other field's frame.
    pub transform: SimTransform,
    pub accepted: Vec<Vec3>,
    pub samples_after: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct OptimizeOutcome {
    pub transform: SimTransform,
    pub kernel: KernelParams,
    pub status: OptimizeStatus,
    pub iterations: usize,
    pub loss_history: Vec<f64>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub resamples: Vec<ResampleRecord>,
    pub message: Option<String>,
    pub final_a: SurfacePointSet,
    pub final_b: SurfacePointSet,
}

impl OptimizeOutcome {
    pub fn final_mean_forward_residual(&self) -> f64 {
        self.diagnostics
            .last()
            .map_or(f64::INFINITY, |d| d.mean_forward_residual)
    }
}

/// Keeps every `ceil(n / cap)`-th point so large initial sets fit the cap.
fn thin(set: &SurfacePointSet, cap: usize) -> SurfacePointSet {
    if set.len() <= cap {
        return SurfacePointSet::new(set.points.clone(), set.source.clone());
    }
    let stride = set.len().div_ceil(cap);
    SurfacePointSet::new(
        set.points.iter().step_by(stride).copied().collect(),
        set.source.clone(),
    )
}

/// Chain rule from `(t, e, s)` to `(t', e, s)` with `t' = t + s·R·c`.
fn pivot_gradient(grad: &Gradient, g: &SimTransform, c: &Vec3) -> Gradient {
    let mut out = *grad;
    let gt = Vec3::new(grad[0], grad[1], grad[2]);
    let dr = euler_partials(g.euler);
    for k in 0..3 {
        out[3 + k] -= g.scale * (dr[k] * c).dot(&gt);
    }
    out[6] -= (g.rotation() * c).dot(&gt);
    out
}

/// Runs gradient descent from `init`.
///
/// `sa`/`a0` is the source field and its samples, `sb`/`b0` the target. The
/// returned transform maps source coordinates into target coordinates.
/// `truth`, when given, only feeds the error columns of the diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    sa: &SdfField,
    sb: &SdfField,
    init: &SimTransform,
    a0: &SurfacePointSet,
    b0: &SurfacePointSet,
    cfg: &OptimizerConfig,
    seed: u64,
    truth: Option<&SimTransform>,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    init.validate()?;
    if a0.is_empty() || b0.is_empty() {
        return Err(Error::EmptySamples("optimizer needs initial samples on both fields".into()));
    }
    let cap = cfg.sampler.max_samples;
    let mut a = thin(a0, cap);
    let mut b = thin(b0, cap);
    let pinned = |n: usize| SamplerConfig {
        pinned: if cfg.keep_initial_samples { n } else { 0 },
        ..cfg.sampler
    };
    let (cfg_a, cfg_b) = (pinned(a.len()), pinned(b.len()));
    let pivot = if cfg.pivot_at_centroid { a.centroid() } else { Vec3::zeros() };

    let mut g = *init;
    let max_p = cfg.initial_p * cfg.max_p_ratio;
    let clamp = |k: KernelParams| {
        let k = k.clamped();
        KernelParams { p: k.p.min(max_p), ..k }
    };
    let mut k = clamp(KernelParams {
        p: cfg.initial_p,
        alpha: cfg.initial_alpha,
    });
    let mut status = OptimizeStatus::MaxIterations;
    let mut message = None;
    let mut history = Vec::new();
    let mut diagnostics = Vec::new();
    let mut resamples = Vec::new();
    let mut it = 0;
    'periods: while it < cfg.max_iterations {
        if it > 0 {
            let ginv = g.inverse()?;
            let tag = (it as u64) << 1;
            let out_a = mh_resample_logged(&a, sa, sb, &g, &cfg_a, seed::derive(seed, tag))?;
            let out_b = mh_resample_logged(&b, sb, sa, &ginv, &cfg_b, seed::derive(seed, tag | 1))?;
            if cfg.record_resamples {
                resamples.push(ResampleRecord {
                    iteration: it,
                    source_side: true,
                    transform: g,
                    accepted: out_a.accepted.clone(),
                    samples_after: out_a.samples.points.clone(),
                });
                resamples.push(ResampleRecord {
                    iteration: it,
                    source_side: false,
                    transform: ginv,
                    accepted: out_b.accepted.clone(),
                    samples_after: out_b.samples.points.clone(),
                });
            }
            a = out_a.samples;
            b = out_b.samples;
        }
        if a.len() < cfg.min_samples || b.len() < cfg.min_samples {
            status = OptimizeStatus::Aborted;
            message = Some(format!(
                "samples depleted at iteration {it}: |A| = {}, |B| = {}",
                a.len(),
                b.len()
            ));
            break;
        }
        let ev = Evaluator::new(sa, sb, &a.points, &b.points, cfg.loss_options())?;
        let period_end = (it + cfg.sampler.resample_period).min(cfg.max_iterations);
        while it < period_end {
            let (terms, grad) = ev.loss_and_gradient(&g, &k);
            history.push(terms.total);
            let err = truth.map(|t| transform_error(&g, t));
            diagnostics.push(DiagnosticRow {
                iteration: it,
                loss: terms.total,
                mean_forward_residual: terms.mean_forward_residual,
                mean_backward_residual: terms.mean_backward_residual,
                regularizer: terms.regularizer,
                delta_t: err.map(|e| e.delta_t),
                delta_r: err.map(|e| e.delta_r),
                delta_s: err.map(|e| e.delta_s),
                p: k.p,
                alpha: k.alpha,
                scale: g.scale,
            });
            if !terms.total.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                status = OptimizeStatus::Aborted;
                message = Some(format!("non-finite loss at iteration {it}"));
                break 'periods;
            }
            if terms.mean_forward_residual <= cfg.early_stop {
                status = OptimizeStatus::EarlyStopped;
                break 'periods;
            }

            let grad = pivot_gradient(&grad, &g, &pivot);
            let mut tp = g.translation_vec() + g.rotation() * pivot * g.scale;
            for c in 0..3 {
                tp[c] -= cfg.lr_translation * grad[c];
                g.euler[c] -= cfg.lr_rotation * grad[3 + c];
            }
            g.scale = (g.scale - cfg.lr_scale * grad[6]).max(MIN_TRANSFORM_SCALE);
            g.translation = (tp - g.rotation() * pivot * g.scale).into();
            k = clamp(KernelParams {
                p: k.p - cfg.lr_kernel * grad[7],
                alpha: k.alpha - cfg.lr_kernel * grad[8],
            });
            it += 1;
        }
    }

    Ok(OptimizeOutcome {
        transform: g,
        kernel: k,
        status,
        iterations: history.len(),
        loss_history: history,
        diagnostics,
        resamples,
        message,
        final_a: a,
        final_b: b,
    })
}

pub const DIAGNOSTICS_HEADER: &str =
    "iteration,loss,mean_forward_residual,mean_backward_residual,regularizer,delta_t,delta_r,delta_s,p,alpha,scale";

pub fn write_diagnostics_csv(rows: &[DiagnosticRow], out: &mut impl Write) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.loss,
            r.mean_forward_residual,
            r.mean_backward_residual,
            r.regularizer,
            opt(r.delta_t),
            opt(r.delta_r),
            opt(r.delta_s),
            r.p,
            r.alpha,
            r.scale
        )?;
    }
    Ok(())
}
