//! `sdfreg`: generate synthetic rooms, register library objects into them,
//! and run seeded benchmarks and ablations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sdfreg::harness::*;
use sdfreg::optimizer::write_diagnostics_csv;
use sdfreg::sampler::ViewPose;
use sdfreg::{SimTransform, Vec3};

#[derive(Parser)]
#[command(name = "sdfreg", version, about = "Register library SDFs into scene SDFs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic room and its object library.
    Generate(GenerateArgs),
    /// Register one placed object and score it against ground truth.
    Register(RegisterArgs),
    /// Multi-seed table over several objects.
    Bench(BenchArgs),
    /// Matched-pair ablation suite.
    Ablate(AblateArgs),
    /// Replace a registered object by a library object.
    Substitute(SubstituteArgs),
    /// Depth image and hit cloud of a scene.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON generation parameters; flags below override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    chairs: Option<usize>,
    #[arg(long)]
    tables: Option<usize>,
    /// Object units per scene unit for every placement.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    room_half: Option<f64>,
    #[arg(long)]
    library_seed: Option<u64>,
    /// Output directory for scene.json and library.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Views {
    Multi,
    Rear,
}

/// Pipeline configuration shared by the running subcommands.
#[derive(Args)]
struct ConfigArgs {
    /// JSON pipeline configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, value_enum)]
    views: Option<Views>,
    #[arg(long)]
    reg_weight: Option<f64>,
    /// Drop the backward residual term.
    #[arg(long)]
    forward_only: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = match &self.config {
            Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        if let Some(n) = self.iterations {
            cfg.optimizer.max_iterations = n;
        }
        if let Some(v) = self.views {
            cfg.scene_views = match v {
                Views::Multi => ViewMode::Multi,
                Views::Rear => ViewMode::Rear,
            };
        }
        if let Some(w) = self.reg_weight {
            cfg.optimizer.reg_weight = w;
        }
        if self.forward_only {
            cfg.optimizer.bidirectional = false;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    library: PathBuf,
}

impl SceneArgs {
    fn load(&self) -> Result<LoadedScene> {
        LoadedScene::load(&self.scene, &self.library)
            .with_context(|| format!("loading {} with {}", self.scene.display(), self.library.display()))
    }
}

#[derive(Args)]
struct RegisterArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    object: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for result.json, transform.json and diagnostics.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Scenes for multi-run commands: a fixed scene from files, or a fresh room
/// per seed over a fixed library.
#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, requires = "library")]
    scene: Option<PathBuf>,
    #[arg(long, requires = "scene")]
    library: Option<PathBuf>,
    /// Generation parameters for per-seed rooms (used without --scene).
    #[arg(long, conflicts_with = "scene")]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0, conflicts_with = "scene")]
    library_seed: u64,
    /// Comma-separated object ids; all placed objects when absent.
    #[arg(long, value_delimiter = ',')]
    objects: Vec<String>,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
}

impl ScenarioArgs {
    fn scenario(&self) -> Result<Scenario> {
        match (&self.scene, &self.library) {
            (Some(s), Some(l)) => Ok(Scenario::Fixed(
                LoadedScene::load(s, l).with_context(|| format!("loading {}", s.display()))?,
            )),
            _ => {
                let params = match &self.params {
                    Some(p) => read_json(p)?,
                    None => GenerationParams::default(),
                };
                Ok(Scenario::Generated {
                    params,
                    library_seed: self.library_seed,
                })
            }
        }
    }

    fn seeds(&self) -> Result<Vec<u64>> {
        if self.seeds == 0 {
            bail!(sdfreg::Error::InvalidInput("at least one seed is required".into()));
        }
        Ok((self.first_seed..self.first_seed + self.seeds).collect())
    }

    fn objects(&self, scenario: &Scenario) -> Result<Vec<String>> {
        if self.objects.is_empty() {
            Ok(scenario.object_ids(self.first_seed)?)
        } else {
            Ok(self.objects.clone())
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// One of: bidirectional, regularizer-weight, single-vs-multi-view,
    /// grid-degradation, scale-sweep.
    #[arg(long)]
    suite: String,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SubstituteArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    object: String,
    /// Registered scene-to-object transform (JSON); ground truth when absent.
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Library object to put in its place; the same object when absent.
    #[arg(long)]
    replacement: Option<String>,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Frame this object instead of the whole room.
    #[arg(long)]
    object: Option<String>,
    #[arg(long, default_value_t = 256)]
    resolution: usize,
    #[arg(long, default_value_t = 60.0)]
    fov: f64,
    /// Output stem; `.pgm` and `.ply` are appended.
    #[arg(long)]
    out: PathBuf,
}

/// Raised when a registration finishes without converging.
#[derive(Debug)]
struct NotConverged(String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "registration did not converge: {}", self.0)
    }
}

impl std::error::Error for NotConverged {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || match cli.command {
        Command::Generate(a) => generate(a),
        Command::Register(a) => register(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a),
        Command::Substitute(a) => substitute(a),
        Command::Render(a) => render(a),
    };
    let result = match cli.workers {
        Some(0) => Err(anyhow::anyhow!(sdfreg::Error::InvalidInput("--workers must be positive".into()))),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(e.into()),
        },
        None => run(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<NotConverged>() => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(2)
        }
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut p: GenerationParams = match &a.params {
        Some(path) => read_json(path)?,
        None => GenerationParams::default(),
    };
    p.chairs = a.chairs.unwrap_or(p.chairs);
    p.tables = a.tables.unwrap_or(p.tables);
    p.scale = a.scale.unwrap_or(p.scale);
    p.room_half = a.room_half.unwrap_or(p.room_half);
    p.library_seed = a.library_seed.or(p.library_seed);
    let (spec, library) = generate_onr_like(a.seed, &p)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("scene.json"), &spec)?;
    write_json(&a.out.join("library.json"), &library)?;
    for note in &spec.notes {
        eprintln!("{note}");
    }
    println!(
        "wrote {} objects and a scene with {} placements to {}",
        library.objects.len(),
        spec.objects.len(),
        a.out.display()
    );
    Ok(())
}

fn register(a: RegisterArgs) -> Result<()> {
    let scene = a.scene.load()?;
    let cfg = a.config.resolve()?;
    let detail = run_registration_detailed(&scene, &a.object, &cfg, a.seed)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("result.json"), &detail.row)?;
    write_json(&a.out.join("transform.json"), &detail.row.estimate)?;
    let mut csv = Vec::new();
    write_diagnostics_csv(&detail.outcome.diagnostics, &mut csv)?;
    fs::write(a.out.join("diagnostics.csv"), csv)?;
    let r = &detail.row;
    println!(
        "{}: dt {:.5} dR {:.5} ds {:.5} ({:?}, {} iterations, residual {:.5})",
        r.object_id, r.delta_t, r.delta_r, r.delta_s, r.status, r.iterations, r.final_residual
    );
    if !r.converged {
        return Err(NotConverged(format!("{:?} with residual {:.5}", r.status, r.final_residual)).into());
    }
    Ok(())
}

fn write_report(out: &Path, report: &ExperimentReport, times: &[f64]) -> Result<()> {
    create_dir(out)?;
    write_json(&out.join("report.json"), report)?;
    fs::write(out.join("rows.csv"), report.rows_csv())?;
    fs::write(out.join("table.md"), report.table())?;
    // timings vary run to run, so they stay out of the report
    write_json(&out.join("timings.json"), &times)?;
    print!("{}", report.table());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let scenario = a.scenario.scenario()?;
    let objects = a.scenario.objects(&scenario)?;
    let seeds = a.scenario.seeds()?;
    let out = run_bench(&scenario, &objects, &seeds, &cfg, "default", None)?;
    let report = ExperimentReport::from_rows("bench", cfg, out.rows);
    write_report(&a.out, &report, &out.wall_times)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let suite: AblationSuite = a.suite.parse()?;
    let cfg = a.config.resolve()?;
    let scenario = a.scenario.scenario()?;
    let objects = a.scenario.objects(&scenario)?;
    let seeds = a.scenario.seeds()?;
    let (report, times) = run_ablation(suite, &scenario, &objects, &seeds, &cfg)?;
    write_report(&a.out, &report, &times)
}

fn substitute(a: SubstituteArgs) -> Result<()> {
    let scene = a.scene.load()?;
    let g: SimTransform = match &a.transform {
        Some(p) => read_json(p)?,
        None => scene.spec.placement(&a.object)?.transform,
    };
    let desc = substitution_desc(&scene, &a.object, &g, a.replacement.as_deref())?;
    let field = compose_substitution(&scene, &a.object, &g, a.replacement.as_deref())?;
    create_dir(&a.out)?;
    write_json(&a.out.join("composite.json"), &desc)?;
    let (center, radius) = mask_ball(&scene, &a.object, &g)?;
    let view = ViewPose::new(center + Vec3::new(-2.0, -2.0, 1.5) * radius, center, Vec3::z())?;
    let img = render_depth(&field, &view, [a.resolution; 2], 50.0)?;
    img.write(&a.out.join("composite"))?;
    println!("wrote composite field and render to {}", a.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let scene = a.scene.load()?;
    let view = match &a.object {
        Some(id) => {
            let (center, r) = detection(&scene, id)?;
            ViewPose::new(center + Vec3::new(-2.0, -2.0, 1.5) * r, center, Vec3::z())?
        }
        None => room_view(scene.spec.radius)?,
    };
    let img = render_depth(&scene.scene_field, &view, [a.resolution; 2], a.fov)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    img.write(&a.out)?;
    println!("hit fraction {:.3}", img.hit_fraction());
    Ok(())
}
