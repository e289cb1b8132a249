//! `easel.toml`: backend endpoints, run defaults and output location.
//!
//! ```toml
//! out_dir = "out"
//! seed = 7
//! width = 512
//! height = 512
//! fixtures = "fixtures.jsonl"     # relative to this file
//! ablation = "full"               # layout-free | layout-aware | visual-context | full
//!
//! [model]
//! endpoint = "https://api.example.com/v1/chat/completions"
//! model = "gpt-5"
//! token_env = "EASEL_CHAT_TOKEN"
//! timeout_secs = 120
//! retries = 3
//!
//! [painter]
//! t2i_endpoint = "http://localhost:8000/t2i"
//! l2i_endpoint = "http://localhost:8000/l2i"
//! token_env = "EASEL_PAINTER_TOKEN"
//!
//! [run]                          # overrides applied after `ablation`
//! max_priority_levels = 8
//! [run.checker]
//! max_iou = 0.4
//! ```
//!
//! Tokens are never read from this file, only the names of the environment
//! variables that hold them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use easel_core::gateway::GatewayConfig;
use easel_core::orchestrator::{Ablation, RunConfig};
use easel_core::painter::{HttpEndpoints, DEFAULT_RESOLUTION};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PainterSection {
    pub t2i_endpoint: Option<String>,
    pub l2i_endpoint: Option<String>,
    pub token_env: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub fixtures: Option<PathBuf>,
    pub ablation: Ablation,
    pub model: ModelSection,
    pub painter: PainterSection,
    pub run: toml::Table,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            fixtures: None,
            ablation: Ablation::Full,
            model: ModelSection::default(),
            painter: PainterSection::default(),
            run: toml::Table::new(),
        }
    }
}

impl CliConfig {
    /// Parses `path`; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: CliConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        if let Some(f) = cfg.fixtures.as_mut().filter(|f| f.is_relative()) {
            *f = base.join(&*f);
        }
        Ok(cfg)
    }

    /// The ablation preset with `[run]` keys layered on top.
    pub fn run_config(&self, ablation: Option<Ablation>) -> Result<RunConfig> {
        let preset = RunConfig::ablation(ablation.unwrap_or(self.ablation));
        let mut value = toml::Table::try_from(&preset).context("encoding run preset")?;
        merge(&mut value, &self.run);
        let mut cfg: RunConfig = toml::Value::Table(value).try_into().context("invalid [run] section")?;
        cfg.seed = self.seed;
        if let Err(e) = cfg.validate() {
            bail!(e);
        }
        Ok(cfg)
    }

    pub fn gateway(&self) -> GatewayConfig {
        let defaults = GatewayConfig::default();
        let m = &self.model;
        GatewayConfig {
            endpoint: m.endpoint.clone(),
            model: m.model.clone().unwrap_or(defaults.model.clone()),
            token_env: m.token_env.clone().or(defaults.token_env.clone()),
            retries: m.retries.unwrap_or(defaults.retries),
            ..defaults
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.model.timeout_secs.unwrap_or(120))
    }

    pub fn painter_endpoints(&self) -> HttpEndpoints {
        HttpEndpoints {
            t2i: self.painter.t2i_endpoint.clone(),
            l2i: self.painter.l2i_endpoint.clone(),
            token_env: self.painter.token_env.clone(),
        }
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
