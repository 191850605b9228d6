//! Experiment layer: file formats, synthetic rooms, runs and reports.

mod ablation;
mod bench;
mod generate;
mod pipeline;
mod render;
mod report;
mod spec;
mod substitute;

pub use ablation::{run_ablation, AblationSuite, SCALE_SWEEP_ITERATIONS};
pub use bench::{run_bench, BenchOutcome, GridDegradation, Scenario};
pub use generate::{generate_onr_like, GenerationParams};
pub use pipeline::{
    detection, rear_view, run_registration, run_registration_detailed, sample_library_object,
    sample_scene_object, PipelineConfig, RunDetail, RunRow, ViewMode,
};
pub use render::{render_depth, room_view, DepthImage};
pub use report::{median, rmse, Aggregate, ExperimentReport, ReportRow};
pub use spec::{
    read_json, to_json, write_json, FieldDesc, LibraryEntry, LoadedScene, ObjectKind,
    ObjectLibrary, Placement, SceneSpec, SCHEMA_VERSION,
};
pub use substitute::{
    compose_substitution, compose_with_mask, mask_ball, probe_deviation, substitution_desc, MASK_FACTOR,
};
