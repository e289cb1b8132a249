//! The bundled prompt corpus: prompts, recorded fixtures, run settings and
//! golden digests of the offline output.
//!
//! Layout of a corpus directory:
//!
//! ```text
//! corpus.json      {"seed": 7, "width": 256, "height": 256, "fixtures": "fixtures.jsonl"}
//! prompts.jsonl    {"id": "...", "text": "..."} per line
//! fixtures.jsonl   recorded model replies (+ images/)
//! golden.json      {"<id>": {"png_sha256": "...", "transcript_sha256": "..."}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::FixtureStore;
use crate::hash::sha256_hex;
use crate::orchestrator::{generate_offline, Run, RunConfig, Transcript};
use crate::scene::Prompt;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| CorpusError::Read {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn bad(path: &Path, reason: impl ToString) -> CorpusError {
    CorpusError::Read {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub fixtures: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digest {
    pub png_sha256: String,
    pub transcript_sha256: String,
}

impl Digest {
    /// The transcript hash leaves out the fixture location, which depends on
    /// where the output is written.
    pub fn of(run: &Run) -> Self {
        let mut t: Transcript = run.transcript.clone();
        t.header.fixtures = None;
        Self {
            png_sha256: run.png_bytes().map(sha256_hex).unwrap_or_default(),
            transcript_sha256: sha256_hex(t.to_jsonl().as_bytes()),
        }
    }
}

pub struct Corpus {
    pub dir: PathBuf,
    pub settings: Settings,
    pub prompts: Vec<Prompt>,
    pub fixtures: Arc<FixtureStore>,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let settings_path = dir.join("corpus.json");
        let settings: Settings = serde_json::from_str(&read(&settings_path)?).map_err(|e| bad(&settings_path, e))?;
        let prompts_path = dir.join("prompts.jsonl");
        let mut prompts = Vec::new();
        for line in read(&prompts_path)?.lines().filter(|l| !l.trim().is_empty()) {
            let p: Prompt = serde_json::from_str(line).map_err(|e| bad(&prompts_path, e))?;
            let p = Prompt::with_id(p.id, p.text).map_err(|e| bad(&prompts_path, e))?;
            prompts.push(p);
        }
        let fixtures_path = dir.join(&settings.fixtures);
        let fixtures = FixtureStore::open(&fixtures_path).map_err(|e| bad(&fixtures_path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            settings,
            prompts,
            fixtures: Arc::new(fixtures),
        })
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.settings.seed,
            ..RunConfig::default()
        }
    }

    /// Offline run of one prompt with the corpus settings.
    pub fn run(&self, prompt: &Prompt, cfg: &RunConfig) -> Run {
        generate_offline(
            prompt,
            cfg,
            self.fixtures.clone(),
            self.settings.width,
            self.settings.height,
        )
    }

    pub fn golden_path(&self) -> PathBuf {
        self.dir.join("golden.json")
    }

    pub fn golden(&self) -> Result<BTreeMap<String, Digest>, CorpusError> {
        let path = self.golden_path();
        serde_json::from_str(&read(&path)?).map_err(|e| bad(&path, e))
    }
}
