//! Transcript JSONL: one `header` line, one line per `event`, one `summary`
//! line. Every line carries a `type` tag.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::RunConfig;
use crate::gateway::{Exchange, ExchangeOutcome};
use crate::painter::BackendKind;
use crate::scene::{GenerationMode, LayoutSet, Prompt, ScenePlan};

pub const TRANSCRIPT_SCHEMA: &str = "easel-transcript/1";

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("{0}")]
    Io(String),
    #[error("transcript line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("transcript is missing its {0} line")]
    Missing(&'static str),
    #[error("unsupported transcript schema `{0}`")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Agent {
    Interpreter,
    Planner,
    Checker,
    Painter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PainterInfo {
    pub free_kind: BackendKind,
    pub step_kind: BackendKind,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub prompt: Prompt,
    pub config: RunConfig,
    pub painter: PainterInfo,
    /// Fixture store used by the run, relative to the transcript file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<String>,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u32,
    pub agent: Agent,
    pub iteration: u32,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub request: Value,
    pub response: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Event {
    /// The event without wall-clock fields, for comparing two runs. An
    /// exchange counts as the same whether its reply came live or from a
    /// fixture, and every fallback counts alike.
    pub fn fingerprint(&self) -> Value {
        let exchanges: Vec<Value> = self
            .exchanges
            .iter()
            .map(|x| {
                let answered = matches!(x.outcome, ExchangeOutcome::Fixture | ExchangeOutcome::Live);
                json!({
                    "key": x.key,
                    "answered": answered,
                    "reply": x.response.as_ref().map(|r| r.raw_text.as_str()),
                })
            })
            .collect();
        json!({
            "seq": self.seq,
            "agent": self.agent,
            "iteration": self.iteration,
            "request": self.request,
            "response": self.response,
            "exchanges": exchanges,
            "error": self.error,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub interpreter: u32,
    pub planner: u32,
    pub checker: u32,
    pub painter: u32,
}

impl Counters {
    pub fn get(&self, agent: Agent) -> u32 {
        match agent {
            Agent::Interpreter => self.interpreter,
            Agent::Planner => self.planner,
            Agent::Checker => self.checker,
            Agent::Painter => self.painter,
        }
    }

    pub fn bump(&mut self, agent: Agent) {
        match agent {
            Agent::Interpreter => self.interpreter += 1,
            Agent::Planner => self.planner += 1,
            Agent::Checker => self.checker += 1,
            Agent::Painter => self.painter += 1,
        }
    }
}

/// Counts events per agent. Checker events without a model exchange count
/// only when `count_local_checker` is set.
pub fn fold_counters(events: &[Event], count_local_checker: bool) -> Counters {
    events.iter().fold(Counters::default(), |mut c, e| {
        if e.agent != Agent::Checker || count_local_checker || !e.exchanges.is_empty() {
            c.bump(e.agent);
        }
        c
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub counters: Counters,
    pub object_count: usize,
    pub group_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<GenerationMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ScenePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_layout: Option<LayoutSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub header: Header,
    pub events: Vec<Event>,
    pub summary: Summary,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
enum Line {
    Header(Header),
    Event(Event),
    Summary(Summary),
}

impl Transcript {
    pub fn failed(&self) -> bool {
        self.summary.status == Status::Failed
    }

    pub fn exchanges(&self) -> impl Iterator<Item = &Exchange> {
        self.events.iter().flat_map(|e| e.exchanges.iter())
    }

    pub fn events_of(&self, agent: Agent) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.agent == agent)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("transcript line serializes"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for e in &self.events {
            push(&Line::Event(e.clone()));
        }
        push(&Line::Summary(self.summary.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut header = None;
        let mut events = Vec::new();
        let mut summary = None;
        for (n, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(raw).map_err(|e| TranscriptError::Parse {
                line: n + 1,
                reason: e.to_string(),
            })?;
            match line {
                Line::Header(h) => header = Some(h),
                Line::Event(e) => events.push(e),
                Line::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or(TranscriptError::Missing("header"))?;
        if header.schema != TRANSCRIPT_SCHEMA {
            return Err(TranscriptError::Schema(header.schema));
        }
        Ok(Self {
            header,
            events,
            summary: summary.ok_or(TranscriptError::Missing("summary"))?,
        })
    }

    pub fn read(path: &Path) -> Result<Self, TranscriptError> {
        let text = fs::read_to_string(path).map_err(|e| TranscriptError::Io(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), TranscriptError> {
        fs::write(path, self.to_jsonl()).map_err(|e| TranscriptError::Io(format!("{}: {e}", path.display())))
    }
}
