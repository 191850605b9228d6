//! Matched-pair experiments that differ in a single factor.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bench::{run_bench, GridDegradation, Scenario};
use super::generate::GenerationParams;
use super::pipeline::{PipelineConfig, ViewMode};
use super::report::{ExperimentReport, ReportRow};
use crate::error::{Error, Result};

/// Iteration budget of every scale-sweep run.
pub const SCALE_SWEEP_ITERATIONS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationSuite {
    /// With and without the backward residual term.
    Bidirectional,
    /// Regularizer weight 0, 0.1, 1 and 10.
    RegularizerWeight,
    /// One rear camera against the default multi-view layout.
    SingleVsMultiView,
    /// Scene replaced by 128³, 32³ and noisy 32³ grids around the object.
    GridDegradation,
    /// Placement scales 2, 0.5, 0.25 and 0.1; needs a generated scenario.
    ScaleSweep,
}

impl AblationSuite {
    pub const ALL: [AblationSuite; 5] = [
        AblationSuite::Bidirectional,
        AblationSuite::RegularizerWeight,
        AblationSuite::SingleVsMultiView,
        AblationSuite::GridDegradation,
        AblationSuite::ScaleSweep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AblationSuite::Bidirectional => "bidirectional",
            AblationSuite::RegularizerWeight => "regularizer-weight",
            AblationSuite::SingleVsMultiView => "single-vs-multi-view",
            AblationSuite::GridDegradation => "grid-degradation",
            AblationSuite::ScaleSweep => "scale-sweep",
        }
    }

    /// Variant labels in the order they are run.
    pub fn variants(&self) -> Vec<String> {
        self.plans(&PipelineConfig::default())
            .into_iter()
            .map(|p| p.label)
            .collect()
    }

    fn plans(&self, base: &PipelineConfig) -> Vec<VariantPlan> {
        let plan = |label: &str, cfg: PipelineConfig| VariantPlan {
            label: label.to_string(),
            cfg,
            degradation: None,
            scale: None,
        };
        match self {
            AblationSuite::Bidirectional => {
                let mut fwd = *base;
                fwd.optimizer.bidirectional = false;
                vec![plan("bidirectional", *base), plan("forward_only", fwd)]
            }
            AblationSuite::RegularizerWeight => [0.0, 0.1, 1.0, 10.0]
                .iter()
                .map(|&w| {
                    let mut c = *base;
                    c.optimizer.reg_weight = w;
                    plan(&format!("w={w}"), c)
                })
                .collect(),
            AblationSuite::SingleVsMultiView => {
                let mut rear = *base;
                rear.scene_views = ViewMode::Rear;
                vec![plan("multi_view", *base), plan("rear_view", rear)]
            }
            AblationSuite::GridDegradation => [("grid_128", 128, 0.0), ("grid_32", 32, 0.0), ("grid_32_noise", 32, 0.05)]
                .iter()
                .map(|&(label, res, noise)| VariantPlan {
                    degradation: Some(GridDegradation::new(res, noise)),
                    ..plan(label, *base)
                })
                .collect(),
            AblationSuite::ScaleSweep => {
                let mut long = *base;
                long.optimizer.max_iterations = SCALE_SWEEP_ITERATIONS;
                [2.0, 0.5, 0.25, 0.1]
                    .iter()
                    .map(|&s| VariantPlan {
                        scale: Some(s),
                        ..plan(&format!("s={s}"), long)
                    })
                    .collect()
            }
        }
    }
}

impl FromStr for AblationSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationSuite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = AblationSuite::ALL.iter().map(|a| a.name()).collect();
                Error::input(format!("unknown suite '{s}', expected one of {}", names.join(", ")))
            })
    }
}

struct VariantPlan {
    label: String,
    cfg: PipelineConfig,
    degradation: Option<GridDegradation>,
    scale: Option<f64>,
}

/// Room big enough for the default camera ring around objects shrunk by `scale`.
fn scaled_params(params: &GenerationParams, scale: f64) -> GenerationParams {
    GenerationParams {
        scale,
        room_half: params.room_half / scale.min(1.0),
        ..params.clone()
    }
}

/// Runs every variant of `suite` on the same objects and seeds.
pub fn run_ablation(
    suite: AblationSuite,
    scenario: &Scenario,
    objects: &[String],
    seeds: &[u64],
    base: &PipelineConfig,
) -> Result<(ExperimentReport, Vec<f64>)> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut times = Vec::new();
    for plan in suite.plans(base) {
        let scaled;
        let scenario = match (plan.scale, scenario) {
            (None, s) => s,
            (Some(s), Scenario::Generated { params, library_seed }) => {
                scaled = Scenario::Generated {
                    params: scaled_params(params, s),
                    library_seed: *library_seed,
                };
                &scaled
            }
            (Some(_), Scenario::Fixed(_)) => {
                return Err(Error::input("the scale sweep needs generated scenes"));
            }
        };
        let out = run_bench(scenario, objects, seeds, &plan.cfg, &plan.label, plan.degradation)?;
        rows.extend(out.rows);
        times.extend(out.wall_times);
    }
    let title = format!("ablation: {}", suite.name());
    Ok((ExperimentReport::from_rows(title, *base, rows), times))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_parse_by_name() {
        for s in AblationSuite::ALL {
            assert_eq!(s.name().parse::<AblationSuite>().unwrap(), s);
        }
        assert!("nope".parse::<AblationSuite>().is_err());
    }

    #[test]
    fn variants_differ_in_one_factor() {
        let base = PipelineConfig::default();
        let p = AblationSuite::Bidirectional.plans(&base);
        assert_eq!(p[0].cfg, base);
        assert!(!p[1].cfg.optimizer.bidirectional);
        let w: Vec<f64> = AblationSuite::RegularizerWeight
            .plans(&base)
            .iter()
            .map(|p| p.cfg.optimizer.reg_weight)
            .collect();
        assert_eq!(w, vec![0.0, 0.1, 1.0, 10.0]);
        let g = AblationSuite::GridDegradation.plans(&base);
        assert!(g.iter().all(|p| p.cfg == base));
        assert_eq!(g[2].degradation.unwrap().noise, 0.05);
        assert_eq!(AblationSuite::ScaleSweep.variants(), vec!["s=2", "s=0.5", "s=0.25", "s=0.1"]);
    }

    #[test]
    fn scale_sweep_rejects_fixed_scene() {
        let (spec, lib) = super::super::generate_onr_like(0, &GenerationParams::default()).unwrap();
        let scene = super::super::LoadedScene::new(spec, lib, std::path::Path::new(".")).unwrap();
        let err = run_ablation(
            AblationSuite::ScaleSweep,
            &Scenario::Fixed(scene),
            &["chair_0".to_string()],
            &[0],
            &PipelineConfig::default(),
        );
        assert!(err.is_err());
    }
}
