//! The `easel` command line: `generate`, `replay`, `check` and `eval`.
//!
//! Exit codes: 0 success, 1 a verification failed (`check --strict` found
//! violations, or a replay diverged or missed a fixture), 2 the pipeline run
//! failed (its partial transcript is still written), 3 bad flags, config or
//! input files.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use easel_core::checker::{full_check_with, CheckerConfig, Constraints};
use easel_core::clock::SystemClock;
use easel_core::eval;
use easel_core::gateway::{FixtureStore, Gateway, GatewayMode, MissPolicy, ModelAccess};
use easel_core::orchestrator::{self, Ablation, Agents, ModeChoice, ReplayError, Run, Transcript};
use easel_core::painter::{BackendKind, PainterBackend};
use easel_core::scene::{BBox, LayoutSet, PlacedObject, Prompt, ProposedObject, RawBox, Relation, RelationKind};
use easel_core::transport::{HttpTransport, OfflineTransport, UreqTransport};
use serde::Deserialize;
use serde_json::json;

pub use config::CliConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_RUN_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "easel",
    version,
    about = "Plan, check and paint multi-object scenes from text prompts"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one prompt through the pipeline.
    Generate(GenerateArgs),
    /// Re-run a transcript against its recorded fixtures.
    Replay(ReplayArgs),
    /// Validate and repair a layout file.
    Check(CheckArgs),
    /// Score every transcript under a directory.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeFlag {
    Auto,
    Free,
    Aware,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationFlag {
    LayoutFree,
    LayoutAware,
    VisualContext,
    Full,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    prompt: String,
    /// Stable prompt id used for output file names.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeFlag,
    #[arg(long, value_enum)]
    ablation: Option<AblationFlag>,
    #[arg(long)]
    seed: Option<u64>,
    /// Record model exchanges into this fixture file.
    #[arg(long, conflicts_with = "mock")]
    record: Option<PathBuf>,
    /// Offline: mock painter, fixture replay, rule-based fallbacks.
    #[arg(long)]
    mock: bool,
    /// Fixture file to replay from under `--mock`.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Fixture file (defaults to the one named in the transcript header).
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    layout: PathBuf,
    /// Exit 1 when the input had any violation.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path)?,
        None => CliConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Generate(a) => generate(&cfg, a),
        Command::Replay(a) => replay(&cfg, a),
        Command::Check(a) => check(&cfg, a),
        Command::Eval(a) => evaluate(&cfg, a),
    }
}

fn out_dir(cfg: &CliConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(&cfg.out_dir)
}

/// `to` as a path relative to directory `from`, so transcripts do not
/// depend on where the tree is checked out.
fn relative_to(to: &Path, from: &Path) -> String {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (to_abs, from_abs) = (abs(to), abs(from));
    let to_parts: Vec<_> = to_abs.components().collect();
    let from_parts: Vec<_> = from_abs.components().collect();
    let common = to_parts.iter().zip(&from_parts).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in common..from_parts.len() {
        rel.push("..");
    }
    for part in &to_parts[common..] {
        rel.push(part);
    }
    rel.to_string_lossy().replace('\\', "/")
}

fn write_run(dir: &Path, stem: &str, run: &Run) -> Result<()> {
    let trace = dir.join(format!("{stem}.transcript.jsonl"));
    run.transcript.write(&trace)?;
    println!("transcript: {}", trace.display());
    if let Some(png) = run.png_bytes() {
        let image = dir.join(format!("{stem}.png"));
        fs::write(&image, png).with_context(|| format!("writing {}", image.display()))?;
        println!("image: {}", image.display());
    }
    Ok(())
}

fn print_summary(t: &Transcript) {
    let s = &t.summary;
    let c = s.counters;
    let mode = match s.mode {
        Some(m) => format!("{m:?}"),
        None => "-".into(),
    };
    println!(
        "mode {mode}, {} objects in {} groups; calls: interpreter {}, planner {}, checker {}, painter {}",
        s.object_count, s.group_count, c.interpreter, c.planner, c.checker, c.painter
    );
}

fn existing_store(path: &Path) -> Result<FixtureStore> {
    if !path.is_file() {
        bail!("fixture file {} does not exist", path.display());
    }
    Ok(FixtureStore::open(path)?)
}

fn generate(cfg: &CliConfig, a: GenerateArgs) -> Result<i32> {
    let prompt = match &a.id {
        Some(id) => Prompt::with_id(id.clone(), a.prompt.clone()),
        None => Prompt::new(a.prompt.clone()),
    }
    .context("invalid prompt")?;
    let mut run_cfg = cfg.run_config(a.ablation.map(|f| match f {
        AblationFlag::LayoutFree => Ablation::LayoutFree,
        AblationFlag::LayoutAware => Ablation::LayoutAware,
        AblationFlag::VisualContext => Ablation::VisualContext,
        AblationFlag::Full => Ablation::Full,
    }))?;
    run_cfg.mode = match a.mode {
        ModeFlag::Auto => ModeChoice::Auto,
        ModeFlag::Free => ModeChoice::Free,
        ModeFlag::Aware => ModeChoice::Aware,
    };
    if let Some(seed) = a.seed {
        run_cfg.seed = seed;
    }
    let dir = out_dir(cfg)?;

    let fixtures_path = if a.mock {
        a.fixtures.clone().or(cfg.fixtures.clone())
    } else {
        a.record.clone()
    };
    let mut run = if a.mock {
        let store = match &fixtures_path {
            Some(p) => existing_store(p)?,
            None => FixtureStore::in_memory(),
        };
        orchestrator::generate_offline(&prompt, &run_cfg, Arc::new(store), cfg.width, cfg.height)
    } else {
        let transport: Arc<dyn HttpTransport> = Arc::new(UreqTransport::new(cfg.timeout()));
        let (store, mode) = match &a.record {
            Some(p) => (FixtureStore::open(p)?, GatewayMode::Record),
            None => (FixtureStore::in_memory(), GatewayMode::Live),
        };
        let gateway = Gateway::new(cfg.gateway(), mode, transport.clone(), Arc::new(store));
        let painter = PainterBackend::http_with_transport(
            cfg.painter_endpoints(),
            transport,
            run_cfg.seed,
            cfg.width,
            cfg.height,
        );
        let policy = MissPolicy::Fallback;
        let clock = SystemClock;
        let agents = Agents {
            access: ModelAccess::new(&gateway, &policy),
            painter: &painter,
            clock: &clock,
            detector: None,
        };
        orchestrator::generate(&prompt, &run_cfg, &agents)
    };
    run.transcript.header.fixtures = fixtures_path.as_deref().map(|p| relative_to(p, dir));
    write_run(dir, &prompt.id, &run)?;
    print_summary(&run.transcript);
    match &run.error {
        Some(e) => {
            eprintln!("run failed: {e}");
            Ok(EXIT_RUN_FAILED)
        }
        None => Ok(EXIT_OK),
    }
}

fn replay(cfg: &CliConfig, a: ReplayArgs) -> Result<i32> {
    let recorded = Transcript::read(&a.trace)?;
    let base = a.trace.parent().unwrap_or(Path::new(""));
    let fixtures = match (&a.fixtures, &recorded.header.fixtures) {
        (Some(p), _) => existing_store(p)?,
        (None, Some(rel)) => existing_store(&base.join(rel))?,
        (None, None) => FixtureStore::in_memory(),
    };
    let info = recorded.header.painter;
    let painter = if info.free_kind == BackendKind::Mock && info.step_kind == BackendKind::Mock {
        PainterBackend::mock(info.seed, info.width, info.height)
    } else {
        PainterBackend::http_with_transport(
            cfg.painter_endpoints(),
            Arc::new(OfflineTransport),
            info.seed,
            info.width,
            info.height,
        )
    };
    match orchestrator::replay(&recorded, Arc::new(fixtures), &painter) {
        Ok(run) => {
            let dir = out_dir(cfg)?;
            write_run(dir, &format!("{}.replay", recorded.header.prompt.id), &run)?;
            let same_image = run.transcript.summary.image_sha256 == recorded.summary.image_sha256;
            println!(
                "replay matches: {} events, image {}",
                run.transcript.events.len(),
                if same_image { "identical" } else { "differs" }
            );
            Ok(if same_image { EXIT_OK } else { EXIT_VERIFY })
        }
        Err(e @ (ReplayError::FixtureMiss { .. } | ReplayError::Divergence { .. })) => {
            eprintln!("{e}");
            Ok(EXIT_VERIFY)
        }
        Err(e) => {
            eprintln!("{e}");
            Ok(EXIT_RUN_FAILED)
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutObject {
    id: String,
    name: Option<String>,
    bbox: [f64; 4],
    z_order: Option<i64>,
    iteration: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutRelation {
    subject: String,
    relation: RelationKind,
    object: String,
    #[serde(default)]
    margin: f64,
}

/// Input of `check --layout`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    objects: Vec<LayoutObject>,
    #[serde(default)]
    history: Vec<LayoutObject>,
    #[serde(default)]
    relations: Vec<LayoutRelation>,
    #[serde(default = "unit_aspect")]
    canvas_aspect: f64,
    checker: Option<CheckerConfig>,
}

fn unit_aspect() -> f64 {
    1.0
}

fn noun_of(id: &str) -> String {
    id.split('#').next().unwrap_or(id).to_string()
}

impl LayoutFile {
    fn parts(&self) -> Result<(Vec<ProposedObject>, LayoutSet, Constraints)> {
        let mut history = Vec::new();
        for (i, o) in self.history.iter().enumerate() {
            let [x0, y0, x1, y1] = o.bbox;
            let bbox = BBox::new(x0, y0, x1, y1).with_context(|| format!("history object {}", o.id))?;
            history.push(PlacedObject::new(
                &o.id,
                bbox,
                o.iteration.unwrap_or(1),
                o.z_order.unwrap_or(i as i64 + 1),
            ));
        }
        let history = LayoutSet::with_aspect(history, self.canvas_aspect)?;
        let next = if history.is_empty() { 1 } else { 2 };
        let first_z = history.max_z().unwrap_or(0) + 1;
        let proposal = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                ProposedObject::new(
                    &o.id,
                    RawBox::from_array(o.bbox),
                    o.iteration.unwrap_or(next),
                    o.z_order.unwrap_or(first_z + i as i64),
                )
            })
            .collect();
        let names = self
            .objects
            .iter()
            .chain(&self.history)
            .map(|o| (o.id.clone(), o.name.clone().unwrap_or_else(|| noun_of(&o.id))))
            .collect();
        let mut relations = Vec::new();
        for r in &self.relations {
            let rel = Relation::new(&r.subject, r.relation, &r.object).with_margin(r.margin);
            rel.validate()?;
            relations.push(rel);
        }
        Ok((proposal, history, Constraints { names, relations }))
    }
}

fn check(cfg: &CliConfig, a: CheckArgs) -> Result<i32> {
    let text = fs::read_to_string(&a.layout).with_context(|| format!("reading {}", a.layout.display()))?;
    let doc: LayoutFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", a.layout.display()))?;
    let (proposal, history, constraints) = doc.parts()?;
    let checker_cfg = match &doc.checker {
        Some(c) => c.clone(),
        None => cfg.run_config(None)?.checker,
    };
    let (layout, report) = full_check_with(&proposal, &constraints, &history, &checker_cfg);

    let name = a.layout.display();
    let found = report.violations_before.len();
    println!("{found} violation{} in {name}", if found == 1 { "" } else { "s" });
    for v in &report.violations_before {
        println!("  {}", v.describe());
    }
    if !report.repairs_applied.is_empty() {
        println!(
            "{} repairs in {} passes",
            report.repairs_applied.len(),
            report.passes_used
        );
    }
    for v in &report.violations_after {
        println!("  remaining: {}", v.describe());
    }
    for n in &report.notes {
        println!("  note: {n}");
    }

    let dir = out_dir(cfg)?;
    let stem = a
        .layout
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "layout".into());
    let path = dir.join(format!("{stem}.report.json"));
    let body = json!({"report": report, "layout": layout});
    fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("report: {}", path.display());
    Ok(if a.strict && found > 0 { EXIT_VERIFY } else { EXIT_OK })
}

fn evaluate(cfg: &CliConfig, a: EvalArgs) -> Result<i32> {
    if !a.corpus.is_dir() {
        bail!("{} is not a directory", a.corpus.display());
    }
    let Some(stats) = eval::evaluate_dir(&a.corpus)? else {
        bail!("no transcripts under {}", a.corpus.display());
    };
    let dir = out_dir(cfg)?;
    let summary = stats.summary_csv()?;
    fs::write(dir.join("eval_summary.csv"), &summary)?;
    fs::write(dir.join("eval_prompts.csv"), stats.rows_csv()?)?;
    fs::write(dir.join("eval.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    println!("{} transcripts, {} failed", stats.prompt_count, stats.failures);
    print!("{summary}");
    for n in &stats.notes {
        println!("note: {n}");
    }
    println!("reports: {}", dir.display());
    Ok(EXIT_OK)
}
