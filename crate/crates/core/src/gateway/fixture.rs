//! Fixture store: recorded model exchanges keyed by request content hash.
//!
//! On disk a store is a JSONL file. Each line is one compact JSON object with
//! fields in this order:
//!
//! ```text
//! {"key":"<64 hex>","request":{...canonical request...},"response":{...}}
//! ```
//!
//! `request` is the canonical form hashed into `key` (sorted keys, images
//! replaced by the SHA-256 of their PNG bytes). Images themselves go to an
//! `images/` directory next to the JSONL file, named `<sha256>.png`.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GatewayError, ModelRequest, ModelResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub request: Value,
    pub response: ModelResponse,
}

#[derive(Debug, Default)]
pub struct FixtureStore {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, Fixture>>,
}

impl FixtureStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first write) a JSONL store at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let entries = if path.exists() {
            let text =
                fs::read_to_string(&path).map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
            parse_lines(&text)?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    /// Loads fixtures from JSONL text without binding the store to a file.
    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        Ok(Self {
            path: None,
            entries: Mutex::new(parse_lines(text)?),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<Fixture> {
        self.entries.lock().expect("fixture lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("fixture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> Vec<String> {
        self.entries.lock().expect("fixture lock").keys().cloned().collect()
    }

    /// Stores the exchange for `req`. A key that is already present is left
    /// untouched, so recording the same request twice yields one entry.
    /// Returns whether a new entry was written.
    pub fn insert(&self, req: &ModelRequest, response: &ModelResponse) -> Result<bool, GatewayError> {
        let key = super::fixture_key(req);
        let mut entries = self.entries.lock().expect("fixture lock");
        if entries.contains_key(&key) {
            return Ok(false);
        }
        let fixture = Fixture {
            key: key.clone(),
            request: req.canonical_json(),
            response: response.clone(),
        };
        if let Some(path) = &self.path {
            write_images(path, req)?;
            let line = serde_json::to_string(&fixture).map_err(|e| GatewayError::Store(e.to_string()))?;
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| GatewayError::Store(e.to_string()))?;
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
            writeln!(file, "{line}").map_err(|e| GatewayError::Store(e.to_string()))?;
        }
        entries.insert(key, fixture);
        Ok(true)
    }

    /// Drops an entry from memory (the backing file is not rewritten).
    pub fn remove(&self, key: &str) -> Option<Fixture> {
        self.entries.lock().expect("fixture lock").remove(key)
    }

    /// Serializes every entry as JSONL in key order.
    pub fn to_jsonl(&self) -> String {
        let entries = self.entries.lock().expect("fixture lock");
        let mut out = String::new();
        for f in entries.values() {
            out.push_str(&serde_json::to_string(f).expect("fixture serializes"));
            out.push('\n');
        }
        out
    }
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, Fixture>, GatewayError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Fixture =
            serde_json::from_str(line).map_err(|e| GatewayError::Store(format!("fixture line {}: {e}", n + 1)))?;
        map.entry(f.key.clone()).or_insert(f);
    }
    Ok(map)
}

fn write_images(store_path: &Path, req: &ModelRequest) -> Result<(), GatewayError> {
    if req.images.is_empty() {
        return Ok(());
    }
    let dir = store_path.parent().unwrap_or_else(|| Path::new(".")).join("images");
    fs::create_dir_all(&dir).map_err(|e| GatewayError::Store(e.to_string()))?;
    for img in &req.images {
        let file = dir.join(format!("{}.png", img.content_hash()));
        if !file.exists() {
            fs::write(&file, img.png_bytes()).map_err(|e| GatewayError::Store(e.to_string()))?;
        }
    }
    Ok(())
}
