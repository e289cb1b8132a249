//! Drives one prompt through interpreter, planner, checker and painter and
//! records what each agent was asked and answered.

pub mod transcript;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::checker::{self, CheckerConfig};
use crate::clock::{Clock, LogicalClock};
use crate::gateway::{fallback_keys, Exchange, FixtureStore, Gateway, GatewayError, MissPolicy, ModelAccess};
use crate::interpreter::{InterpretError, Interpreter, DEFAULT_MAX_PRIORITY_LEVELS};
use crate::painter::{CanvasState, PainterBackend, PainterError, RegionSpec};
use crate::planner::{self, Detector, PlanningContext};
use crate::scene::{GenerationMode, LayoutSet, PlacedObject, Prompt, SceneError, ScenePlan};

pub use transcript::{
    fold_counters, Agent, Counters, Event, Header, PainterInfo, Status, Summary, Transcript, TranscriptError,
    TRANSCRIPT_SCHEMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    /// Let the interpreter decide.
    #[default]
    Auto,
    Free,
    Aware,
}

/// The four configurations of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    LayoutFree,
    LayoutAware,
    VisualContext,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::LayoutFree,
        Ablation::LayoutAware,
        Ablation::VisualContext,
        Ablation::Full,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub layout_aware_enabled: bool,
    pub visual_context_enabled: bool,
    pub checker_enabled: bool,
    pub mode: ModeChoice,
    pub seed: u64,
    pub max_priority_levels: u32,
    /// Count the local checker as an agent call even when it makes no
    /// model request.
    pub count_checker_as_call: bool,
    /// Ask the model to review each checked layout (notes only).
    pub checker_advisory: bool,
    pub checker: CheckerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            layout_aware_enabled: true,
            visual_context_enabled: true,
            checker_enabled: true,
            mode: ModeChoice::Auto,
            seed: 0,
            max_priority_levels: DEFAULT_MAX_PRIORITY_LEVELS,
            count_checker_as_call: true,
            checker_advisory: false,
            checker: CheckerConfig::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid run configuration: {0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    pub fn ablation(step: Ablation) -> Self {
        let base = Self::default();
        match step {
            Ablation::LayoutFree => Self {
                layout_aware_enabled: false,
                visual_context_enabled: false,
                checker_enabled: false,
                ..base
            },
            Ablation::LayoutAware => Self {
                visual_context_enabled: false,
                checker_enabled: false,
                ..base
            },
            Ablation::VisualContext => Self {
                checker_enabled: false,
                ..base
            },
            Ablation::Full => base,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.checker;
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        if self.max_priority_levels == 0 {
            return bad("max_priority_levels must be at least 1");
        }
        if !(c.min_area > 0.0 && c.min_area < c.max_area && c.max_area <= 1.0) {
            return bad("checker areas need 0 < min_area < max_area <= 1");
        }
        if !(c.min_aspect > 0.0 && c.min_aspect <= 1.0 && c.max_aspect >= 1.0 && c.max_aspect.is_finite()) {
            return bad("checker aspect bounds need 0 < min_aspect <= 1 <= max_aspect");
        }
        if !(c.max_iou > 0.0 && c.max_iou < 1.0) {
            return bad("checker max_iou must lie in (0, 1)");
        }
        if !(c.max_drift_ratio >= 1.0 && c.max_drift_ratio.is_finite()) {
            return bad("checker max_drift_ratio must be at least 1");
        }
        if c.max_passes == 0 {
            return bad("checker max_passes must be at least 1");
        }
        Ok(())
    }

    fn forced_mode(&self) -> Option<GenerationMode> {
        if !self.layout_aware_enabled {
            return Some(GenerationMode::LayoutFree);
        }
        match self.mode {
            ModeChoice::Auto => None,
            ModeChoice::Free => Some(GenerationMode::LayoutFree),
            ModeChoice::Aware => Some(GenerationMode::LayoutAware),
        }
    }
}

/// Why a run stopped early.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("interpreter: {0}")]
    Interpreter(#[from] InterpretError),
    #[error("planner: {0}")]
    Planner(GatewayError),
    #[error("checker: {0}")]
    Checker(GatewayError),
    #[error("painter: {0}")]
    Painter(#[from] PainterError),
    #[error("layout: {0}")]
    Layout(#[from] SceneError),
}

impl RunError {
    /// Key of the missing fixture when the run stopped on a replay miss.
    pub fn fixture_miss(&self) -> Option<&str> {
        let g = match self {
            RunError::Interpreter(InterpretError::Gateway(g)) | RunError::Planner(g) | RunError::Checker(g) => g,
            _ => return None,
        };
        match g {
            GatewayError::FixtureMiss { key } => Some(key),
            _ => None,
        }
    }
}

/// Collaborators for one run.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub access: ModelAccess<'a>,
    pub painter: &'a PainterBackend,
    pub clock: &'a dyn Clock,
    pub detector: Option<&'a dyn Detector>,
}

/// Outcome of a run. A failed run keeps the canvas it had reached.
#[derive(Debug, Clone)]
pub struct Run {
    pub canvas: Option<CanvasState>,
    pub transcript: Transcript,
    pub error: Option<RunError>,
}

impl Run {
    pub fn png_bytes(&self) -> Option<&[u8]> {
        self.canvas.as_ref()?.image.as_ref().map(|i| i.png_bytes())
    }
}

struct Recorder<'a> {
    clock: &'a dyn Clock,
    count_local_checker: bool,
    events: Vec<Event>,
    counters: Counters,
}

impl Recorder<'_> {
    fn start(&self) -> u64 {
        self.clock.now_ms()
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        agent: Agent,
        iteration: u32,
        started_ms: u64,
        request: Value,
        response: Value,
        exchanges: Vec<Exchange>,
        error: Option<String>,
    ) {
        if agent != Agent::Checker || self.count_local_checker || !exchanges.is_empty() {
            self.counters.bump(agent);
        }
        self.events.push(Event {
            seq: self.events.len() as u32,
            agent,
            iteration,
            started_ms,
            finished_ms: self.clock.now_ms(),
            request,
            response,
            exchanges,
            error,
        });
    }
}

fn regions_for(plan: &ScenePlan, layout: &LayoutSet) -> BTreeMap<String, RegionSpec> {
    layout
        .placed
        .iter()
        .filter_map(|p| {
            let d = plan.descriptor(&p.descriptor_id)?;
            Some((
                p.descriptor_id.clone(),
                RegionSpec {
                    caption: d.enriched_caption.clone(),
                    content_key: d.content_key(),
                },
            ))
        })
        .collect()
}

fn image_json(canvas: &CanvasState) -> Value {
    match &canvas.image {
        Some(i) => {
            json!({"image_sha256": i.content_hash(), "width": i.width(), "height": i.height(), "iteration": canvas.iteration})
        }
        None => json!({"image_sha256": null, "iteration": canvas.iteration}),
    }
}

struct State {
    plan: Option<ScenePlan>,
    canvas: Option<CanvasState>,
    layout: Option<LayoutSet>,
}

/// Runs the full dialogue for `prompt`.
pub fn generate(prompt: &Prompt, cfg: &RunConfig, agents: &Agents) -> Run {
    let mut rec = Recorder {
        clock: agents.clock,
        count_local_checker: cfg.count_checker_as_call,
        events: Vec::new(),
        counters: Counters::default(),
    };
    let mut state = State {
        plan: None,
        canvas: None,
        layout: None,
    };
    let result = cfg
        .validate()
        .map_err(RunError::from)
        .and_then(|()| drive(prompt, cfg, agents, &mut rec, &mut state));
    let painter = agents.painter;
    let header = Header {
        schema: TRANSCRIPT_SCHEMA.to_string(),
        prompt: prompt.clone(),
        config: cfg.clone(),
        painter: PainterInfo {
            free_kind: painter.free_kind(),
            step_kind: painter.step_kind(),
            seed: painter.seed,
            width: painter.width,
            height: painter.height,
        },
        fixtures: None,
        template: planner::VCOT_VERSION.to_string(),
    };
    let error = result.err();
    let summary = Summary {
        status: if error.is_some() {
            Status::Failed
        } else {
            Status::Completed
        },
        error: error.as_ref().map(|e| e.to_string()),
        counters: rec.counters,
        object_count: state.plan.as_ref().map_or(0, ScenePlan::object_count),
        group_count: state.plan.as_ref().map_or(0, |p| p.groups.len()),
        mode: state.plan.as_ref().map(|p| p.mode),
        plan: state.plan,
        final_layout: state.layout,
        image_sha256: state
            .canvas
            .as_ref()
            .and_then(|c| c.image.as_ref())
            .map(|i| i.content_hash()),
    };
    Run {
        canvas: state.canvas,
        transcript: Transcript {
            header,
            events: rec.events,
            summary,
        },
        error,
    }
}

fn drive(
    prompt: &Prompt,
    cfg: &RunConfig,
    agents: &Agents,
    rec: &mut Recorder,
    state: &mut State,
) -> Result<(), RunError> {
    let painter = agents.painter;
    let forced = cfg.forced_mode();
    let t0 = rec.start();
    let mut exchanges = Vec::new();
    let request = json!({"prompt": prompt.text, "forced_mode": forced});
    let interpreted = Interpreter::new(agents.access)
        .with_max_levels(cfg.max_priority_levels)
        .interpret_logged(prompt, forced, &mut exchanges);
    let (plan, notes) = match interpreted {
        Ok(i) => i,
        Err(e) => {
            rec.push(
                Agent::Interpreter,
                0,
                t0,
                request,
                Value::Null,
                exchanges,
                Some(e.to_string()),
            );
            return Err(e.into());
        }
    };
    rec.push(
        Agent::Interpreter,
        0,
        t0,
        request,
        json!({"plan": plan, "notes": notes}),
        exchanges,
        None,
    );
    state.plan = Some(plan.clone());

    if plan.mode == GenerationMode::LayoutFree {
        let t0 = rec.start();
        let request = json!({"iteration": 1, "backend": painter.free_kind(), "prompt": prompt.text, "background": plan.background});
        return match painter.paint_free(prompt, &plan.background) {
            Ok(canvas) => {
                rec.push(Agent::Painter, 1, t0, request, image_json(&canvas), Vec::new(), None);
                state.canvas = Some(canvas);
                Ok(())
            }
            Err(e) => {
                rec.push(
                    Agent::Painter,
                    1,
                    t0,
                    request,
                    Value::Null,
                    Vec::new(),
                    Some(e.to_string()),
                );
                Err(e.into())
            }
        };
    }

    let aspect = painter.canvas_aspect();
    let mut canvas = CanvasState::blank(plan.background.clone(), aspect);
    let mut history = LayoutSet::empty(aspect);
    for group in &plan.groups {
        let iteration = group.priority;

        let t0 = rec.start();
        let grounding = planner::ground_existing(&canvas, &history, agents.detector);
        let ctx = PlanningContext {
            prompt_text: &prompt.text,
            plan: &plan,
            group,
            history: &history,
            canvas: &canvas,
            grounding: &grounding,
            visual_context_enabled: cfg.visual_context_enabled,
        };
        let members: Vec<&str> = group.members.iter().map(|d| d.id.as_str()).collect();
        let request = json!({
            "iteration": iteration,
            "members": members,
            "history": history.placed.iter().map(|p| p.descriptor_id.as_str()).collect::<Vec<_>>(),
            "image_attached": ctx.attaches_image(),
            "template": planner::VCOT_VERSION,
        });
        let mut exchanges = Vec::new();
        let proposal = match planner::propose_layout(&ctx, agents.access, &mut exchanges) {
            Ok(p) => p,
            Err(e) => {
                rec.push(
                    Agent::Planner,
                    iteration,
                    t0,
                    request,
                    Value::Null,
                    exchanges,
                    Some(e.to_string()),
                );
                return Err(RunError::Planner(e));
            }
        };
        rec.push(
            Agent::Planner,
            iteration,
            t0,
            request,
            json!({"proposal": proposal}),
            exchanges,
            None,
        );

        let merged = if cfg.checker_enabled {
            let t0 = rec.start();
            let request = json!({"iteration": iteration, "proposal": proposal.objects});
            let (merged, report) = checker::full_check(&proposal.objects, &plan, &history, &cfg.checker);
            let mut exchanges = Vec::new();
            let advisory = if cfg.checker_advisory {
                match checker::advisory_review(&plan, &merged, agents.access, &mut exchanges) {
                    Ok(a) => a,
                    Err(e) => {
                        rec.push(
                            Agent::Checker,
                            iteration,
                            t0,
                            request,
                            Value::Null,
                            exchanges,
                            Some(e.to_string()),
                        );
                        return Err(RunError::Checker(e));
                    }
                }
            } else {
                Vec::new()
            };
            rec.push(
                Agent::Checker,
                iteration,
                t0,
                request,
                json!({"report": report, "layout": merged, "advisory": advisory}),
                exchanges,
                None,
            );
            merged
        } else {
            history.merged(&checker::pass_through(&proposal.objects))?
        };

        let t0 = rec.start();
        let (new_objects, earlier): (Vec<PlacedObject>, Vec<PlacedObject>) =
            merged.placed.iter().cloned().partition(|p| p.iteration == iteration);
        let before = canvas.with_layout(LayoutSet::with_aspect(earlier, aspect)?);
        let request = json!({
            "iteration": iteration,
            "backend": painter.step_kind(),
            "new_objects": new_objects.iter().map(|p| p.descriptor_id.as_str()).collect::<Vec<_>>(),
            "regions": merged.len(),
        });
        match painter.paint_step(&before, &new_objects, &regions_for(&plan, &merged)) {
            Ok(next) => {
                rec.push(
                    Agent::Painter,
                    iteration,
                    t0,
                    request,
                    image_json(&next),
                    Vec::new(),
                    None,
                );
                canvas = next;
            }
            Err(e) => {
                rec.push(
                    Agent::Painter,
                    iteration,
                    t0,
                    request,
                    Value::Null,
                    Vec::new(),
                    Some(e.to_string()),
                );
                state.canvas = Some(canvas);
                state.layout = Some(history);
                return Err(e.into());
            }
        }
        history = canvas.layout_so_far.clone();
        state.canvas = Some(canvas.clone());
        state.layout = Some(history.clone());
    }
    Ok(())
}

/// Runs `prompt` without touching the network: replies come from
/// `fixtures`, misses fall back to the rule-based agents, the painter is the
/// mock and time is logical. Identical inputs give byte-identical output.
pub fn generate_offline(prompt: &Prompt, cfg: &RunConfig, fixtures: Arc<FixtureStore>, width: u32, height: u32) -> Run {
    let gateway = Gateway::replay(fixtures);
    generate_with_gateway(prompt, cfg, &gateway, width, height)
}

/// [`generate_offline`] over a caller-built gateway.
pub fn generate_with_gateway(prompt: &Prompt, cfg: &RunConfig, gateway: &Gateway, width: u32, height: u32) -> Run {
    let policy = MissPolicy::Fallback;
    let painter = PainterBackend::mock(cfg.seed, width, height);
    let clock = LogicalClock::default();
    let agents = Agents {
        access: ModelAccess::new(gateway, &policy),
        painter: &painter,
        clock: &clock,
        detector: None,
    };
    generate(prompt, cfg, &agents)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("fixture miss: no recorded reply for key {key}")]
    FixtureMiss { key: String },
    #[error("replay diverged at event {seq}: {detail}")]
    Divergence { seq: usize, detail: String },
    #[error("replay failed: {0}")]
    Run(RunError),
}

/// Re-runs a recorded transcript against its fixtures. Requests that fell
/// back during recording may fall back again; any other miss is an error.
pub fn replay(
    recorded: &Transcript,
    fixtures: Arc<FixtureStore>,
    painter: &PainterBackend,
) -> Result<Run, ReplayError> {
    let gateway = Gateway::replay(fixtures);
    let policy = MissPolicy::FallbackFor(fallback_keys(recorded.exchanges()));
    let clock = LogicalClock::default();
    let agents = Agents {
        access: ModelAccess::new(&gateway, &policy),
        painter,
        clock: &clock,
        detector: None,
    };
    let run = generate(&recorded.header.prompt, &recorded.header.config, &agents);
    if let Some(key) = run.error.as_ref().and_then(RunError::fixture_miss) {
        return Err(ReplayError::FixtureMiss { key: key.to_string() });
    }
    compare(recorded, &run.transcript)?;
    if let Some(e) = run.error.clone() {
        if !recorded.failed() {
            return Err(ReplayError::Run(e));
        }
    }
    Ok(run)
}

/// First difference between two event sequences, ignoring wall-clock time.
pub fn compare(expected: &Transcript, actual: &Transcript) -> Result<(), ReplayError> {
    for (i, (a, b)) in expected.events.iter().zip(&actual.events).enumerate() {
        if a.fingerprint() != b.fingerprint() {
            return Err(ReplayError::Divergence {
                seq: i,
                detail: format!("{:?} event differs", a.agent),
            });
        }
    }
    if expected.events.len() != actual.events.len() {
        return Err(ReplayError::Divergence {
            seq: expected.events.len().min(actual.events.len()),
            detail: format!(
                "{} events recorded, {} replayed",
                expected.events.len(),
                actual.events.len()
            ),
        });
    }
    Ok(())
}
