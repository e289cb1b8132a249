//! Uniform access to chat and vision-chat models with record/replay.
//!
//! Every agent talks to models through [`Gateway::send`]. In `Replay` mode
//! responses come from a [`FixtureStore`] and the transport is never touched,
//! which is what keeps the whole test suite offline.

mod exchange;
mod fixture;
pub mod schema;
pub mod stub;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::hash::sha256_hex;
use crate::image::ImageHandle;
use crate::transport::{HttpTransport, TransportError};

pub use exchange::{fallback_keys, Exchange, ExchangeOutcome, MissPolicy, ModelAccess};
pub use fixture::{Fixture, FixtureStore};
pub use schema::{extract_json, SchemaId};

/// Text appended as a follow-up turn when a reply fails schema validation.
pub const REPAIR_INSTRUCTION: &str = "respond with valid JSON only";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no fixture recorded for request key {key}")]
    FixtureMiss { key: String },
    #[error("transport failed after {attempts} attempts: {source}")]
    Transport { attempts: u32, source: TransportError },
    #[error("reply for {key} violates schema `{schema}` after re-prompts: {reason}")]
    SchemaViolation {
        key: String,
        schema: SchemaId,
        reason: String,
    },
    #[error("no model endpoint configured")]
    NoEndpoint,
    #[error("fixture store: {0}")]
    Store(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleTag {
    Interpreter,
    Planner,
    CheckerAdvisory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub role_tag: RoleTag,
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<ImageHandle>,
    pub response_schema_id: SchemaId,
}

impl ModelRequest {
    pub fn new(
        role_tag: RoleTag,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        schema: SchemaId,
    ) -> Self {
        Self {
            role_tag,
            system_text: system_text.into(),
            user_text: user_text.into(),
            images: Vec::new(),
            response_schema_id: schema,
        }
    }

    pub fn with_image(mut self, image: ImageHandle) -> Self {
        self.images.push(image);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user_text is empty".into()));
        }
        if !self.images.is_empty() && self.role_tag != RoleTag::Planner {
            return Err(GatewayError::InvalidRequest(format!(
                "images are only allowed on planner requests (got {:?})",
                self.role_tag
            )));
        }
        Ok(())
    }

    /// The hashed form: all request fields, images replaced by their content
    /// hashes in order.
    pub fn canonical_json(&self) -> Value {
        json!({
            "role_tag": self.role_tag,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "images": self.images.iter().map(|i| i.content_hash()).collect::<Vec<_>>(),
            "response_schema_id": self.response_schema_id,
        })
    }
}

/// Serializes `value` with object keys sorted at every level.
pub fn canonical_string(value: &Value) -> String {
    let mut out = String::new();
    write_sorted(value, &mut out);
    out
}

fn write_sorted(v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_sorted(&m[k], out);
            }
            out.push('}');
        }
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_sorted(x, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Stable SHA-256 over the canonical request.
pub fn fixture_key(req: &ModelRequest) -> String {
    sha256_hex(canonical_string(&req.canonical_json()).as_bytes())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw_text: String,
    /// Schema-valid JSON extracted from `raw_text`; `None` marks a parse failure.
    pub parsed: Option<Value>,
    pub latency_ms: u64,
    pub token_counts: TokenCounts,
}

impl ModelResponse {
    /// Builds a response from raw text, keeping `parsed` only when the text
    /// validates against `schema`.
    pub fn from_raw(raw_text: impl Into<String>, schema: SchemaId) -> Self {
        let raw_text = raw_text.into();
        let parsed = extract_json(&raw_text).filter(|v| schema.validate(v).is_ok());
        Self {
            raw_text,
            parsed,
            latency_ms: 0,
            token_counts: TokenCounts::default(),
        }
    }

    pub fn parsed_as<T: serde::de::DeserializeOwned>(&self) -> Option<T> {
        self.parsed.as_ref().and_then(|v| T::deserialize(v).ok())
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// OpenAI-compatible chat completions URL.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub retries: u32,
    pub backoff_base: Duration,
    pub reprompts: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-5".into(),
            token_env: Some("EASEL_CHAT_TOKEN".into()),
            retries: 3,
            backoff_base: Duration::from_millis(500),
            reprompts: 2,
        }
    }
}

/// Where a response came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseSource {
    Fixture,
    Live,
}

pub struct Gateway {
    config: GatewayConfig,
    mode: GatewayMode,
    transport: Arc<dyn HttpTransport>,
    fixtures: Arc<FixtureStore>,
    clock: Arc<dyn Clock>,
}

impl Gateway {
    pub fn new(
        config: GatewayConfig,
        mode: GatewayMode,
        transport: Arc<dyn HttpTransport>,
        fixtures: Arc<FixtureStore>,
    ) -> Self {
        Self {
            config,
            mode,
            transport,
            fixtures,
            clock: Arc::new(SystemClock),
        }
    }

    /// Replay-only gateway backed by `fixtures` with a transport that refuses
    /// every request.
    pub fn replay(fixtures: Arc<FixtureStore>) -> Self {
        Self::new(
            GatewayConfig::default(),
            GatewayMode::Replay,
            Arc::new(crate::transport::OfflineTransport),
            fixtures,
        )
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_mode(mut self, mode: GatewayMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn fixtures(&self) -> &Arc<FixtureStore> {
        &self.fixtures
    }

    /// Sends in the gateway's configured mode.
    pub fn call(&self, req: &ModelRequest) -> Result<(ModelResponse, ResponseSource), GatewayError> {
        let resp = self.send(req, self.mode)?;
        let source = match self.mode {
            GatewayMode::Replay => ResponseSource::Fixture,
            _ => ResponseSource::Live,
        };
        Ok((resp, source))
    }

    pub fn send(&self, req: &ModelRequest, mode: GatewayMode) -> Result<ModelResponse, GatewayError> {
        req.validate()?;
        match mode {
            GatewayMode::Replay => {
                let key = fixture_key(req);
                self.fixtures
                    .get(&key)
                    .map(|f| f.response)
                    .ok_or(GatewayError::FixtureMiss { key })
            }
            GatewayMode::Live => self.send_live(req),
            GatewayMode::Record => {
                let resp = self.send_live(req)?;
                self.fixtures.insert(req, &resp)?;
                Ok(resp)
            }
        }
    }

    fn send_live(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let endpoint = self.config.endpoint.as_deref().ok_or(GatewayError::NoEndpoint)?;
        let token = self
            .config
            .token_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok());
        let start = self.clock.now_ms();
        let mut tokens = TokenCounts::default();
        let mut followups: Vec<String> = Vec::new();
        let mut last_reason = String::new();
        for attempt in 0..=self.config.reprompts {
            let body = self.chat_body(req, &followups);
            let reply = self.post_with_retries(endpoint, token.as_deref(), &body)?;
            let (text, usage) =
                parse_chat_reply(&reply).map_err(|source| GatewayError::Transport { attempts: 1, source })?;
            tokens.prompt += usage.prompt;
            tokens.completion += usage.completion;
            match extract_json(&text) {
                Some(v) => match req.response_schema_id.validate(&v) {
                    Ok(()) => {
                        return Ok(ModelResponse {
                            raw_text: text,
                            parsed: Some(v),
                            latency_ms: self.clock.now_ms().saturating_sub(start),
                            token_counts: tokens,
                        })
                    }
                    Err(e) => last_reason = e,
                },
                None => last_reason = "reply contains no JSON object".into(),
            }
            log::warn!(
                "schema `{}` violated (attempt {}): {last_reason}",
                req.response_schema_id,
                attempt + 1
            );
            followups.push(text);
        }
        Err(GatewayError::SchemaViolation {
            key: fixture_key(req),
            schema: req.response_schema_id,
            reason: last_reason,
        })
    }

    fn post_with_retries(&self, url: &str, token: Option<&str>, body: &Value) -> Result<Value, GatewayError> {
        let mut attempt = 0;
        loop {
            match self.transport.post_json(url, token, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    let wait = self.config.backoff_base * 2u32.pow(attempt);
                    log::warn!("transport error ({e}); retrying in {wait:?}");
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                    attempt += 1;
                }
                Err(source) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt + 1,
                        source,
                    })
                }
            }
        }
    }

    /// OpenAI-compatible chat body. Each malformed earlier reply is replayed as
    /// an assistant turn followed by the repair instruction.
    fn chat_body(&self, req: &ModelRequest, followups: &[String]) -> Value {
        let user_content = if req.images.is_empty() {
            Value::String(req.user_text.clone())
        } else {
            let mut parts = vec![json!({"type": "text", "text": req.user_text})];
            for img in &req.images {
                let b64 = base64::Engine::encode(&base64::engine::general_purpose::STANDARD, img.png_bytes());
                parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{b64}")}}));
            }
            Value::Array(parts)
        };
        let mut messages = vec![
            json!({"role": "system", "content": req.system_text}),
            json!({"role": "user", "content": user_content}),
        ];
        for bad in followups {
            messages.push(json!({"role": "assistant", "content": bad}));
            messages.push(json!({"role": "user", "content": REPAIR_INSTRUCTION}));
        }
        json!({
            "model": self.config.model,
            "messages": messages,
            "response_format": {"type": "json_object"},
        })
    }
}

fn parse_chat_reply(reply: &Value) -> Result<(String, TokenCounts), TransportError> {
    let text = reply
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::Decode("reply has no choices[0].message.content".into()))?;
    let usage = TokenCounts {
        prompt: reply
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion: reply
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok((text.to_string(), usage))
}

#[cfg(test)]
mod tests {
    use super::stub::ScriptedChat;
    use super::*;
    use crate::transport::CountingTransport;

    fn req(text: &str) -> ModelRequest {
        ModelRequest::new(RoleTag::Interpreter, "sys", text, SchemaId::ModeDecision)
    }

    fn live_gateway(transport: Arc<dyn HttpTransport>, store: Arc<FixtureStore>, mode: GatewayMode) -> Gateway {
        let cfg = GatewayConfig {
            endpoint: Some("http://stub.invalid/v1/chat/completions".into()),
            backoff_base: Duration::ZERO,
            ..GatewayConfig::default()
        };
        Gateway::new(cfg, mode, transport, store)
    }

    #[test]
    fn key_is_deterministic_and_sensitive() {
        let a = req("a red cube");
        assert_eq!(fixture_key(&a), fixture_key(&a.clone()));
        assert_ne!(fixture_key(&a), fixture_key(&req("a blue cube")));
        assert_eq!(fixture_key(&a).len(), 64);
    }

    #[test]
    fn image_order_changes_key() {
        let i1 = ImageHandle::from_rgb8(1, 1, vec![255, 0, 0]).unwrap();
        let i2 = ImageHandle::from_rgb8(1, 1, vec![0, 0, 255]).unwrap();
        let base = ModelRequest::new(RoleTag::Planner, "s", "u", SchemaId::LayoutProposal);
        let ab = base.clone().with_image(i1.clone()).with_image(i2.clone());
        let ba = base.with_image(i2).with_image(i1);
        assert_ne!(fixture_key(&ab), fixture_key(&ba));
    }

    #[test]
    fn canonical_string_sorts_nested_keys() {
        let v = json!({"b": 1, "a": {"d": [ {"z": 1, "y": 2} ], "c": null}});
        assert_eq!(canonical_string(&v), r#"{"a":{"c":null,"d":[{"y":2,"z":1}]},"b":1}"#);
    }

    #[test]
    fn images_only_on_planner_requests() {
        let img = ImageHandle::from_rgb8(1, 1, vec![0, 0, 0]).unwrap();
        let bad = req("x").with_image(img);
        assert!(matches!(bad.validate(), Err(GatewayError::InvalidRequest(_))));
        assert!(matches!(req("  ").validate(), Err(GatewayError::InvalidRequest(_))));
    }

    #[test]
    fn replay_returns_stored_response_without_network() {
        let store = Arc::new(FixtureStore::in_memory());
        let r = req("a photo of a dog");
        let stored = ModelResponse::from_raw(r#"{"object_count": 1}"#, SchemaId::ModeDecision);
        store.insert(&r, &stored).unwrap();
        let counting = Arc::new(CountingTransport::new(crate::transport::OfflineTransport));
        let gw = Gateway::new(GatewayConfig::default(), GatewayMode::Replay, counting.clone(), store);
        assert_eq!(gw.send(&r, GatewayMode::Replay).unwrap(), stored);
        assert_eq!(counting.calls(), 0);
        let miss = gw.send(&req("something else"), GatewayMode::Replay).unwrap_err();
        assert!(matches!(miss, GatewayError::FixtureMiss { ref key } if *key == fixture_key(&req("something else"))));
        assert_eq!(counting.calls(), 0);
    }

    #[test]
    fn malformed_then_valid_triggers_one_repair_turn() {
        let chat = Arc::new(ScriptedChat::new(["not json at all", r#"{"object_count": 2}"#]));
        let gw = live_gateway(chat.clone(), Arc::new(FixtureStore::in_memory()), GatewayMode::Live);
        let resp = gw.send(&req("two cats"), GatewayMode::Live).unwrap();
        assert_eq!(resp.parsed, Some(json!({"object_count": 2})));
        let bodies = chat.requests();
        assert_eq!(bodies.len(), 2);
        let msgs = bodies[1]["messages"].as_array().unwrap();
        assert_eq!(msgs.len(), 4);
        assert_eq!(msgs[2]["role"], "assistant");
        assert_eq!(msgs[3]["content"], REPAIR_INSTRUCTION);
    }

    #[test]
    fn persistent_garbage_is_a_schema_violation() {
        let chat = Arc::new(ScriptedChat::new(["nope", "{\"wrong\": 1}", "still nope"]));
        let gw = live_gateway(chat.clone(), Arc::new(FixtureStore::in_memory()), GatewayMode::Live);
        let err = gw.send(&req("two cats"), GatewayMode::Live).unwrap_err();
        assert!(matches!(
            err,
            GatewayError::SchemaViolation {
                schema: SchemaId::ModeDecision,
                ..
            }
        ));
        // Initial attempt plus two re-prompts.
        assert_eq!(chat.requests().len(), 3);
    }

    #[test]
    fn transport_errors_are_retried_then_surface() {
        let chat = Arc::new(ScriptedChat::from_results(vec![
            Err(TransportError::Network("reset".into())),
            Err(TransportError::Status(502, "bad gateway".into())),
            Ok(ScriptedChat::reply(r#"{"object_count": 1}"#)),
        ]));
        let gw = live_gateway(chat.clone(), Arc::new(FixtureStore::in_memory()), GatewayMode::Live);
        assert!(gw.send(&req("a dog"), GatewayMode::Live).is_ok());
        assert_eq!(chat.requests().len(), 3);

        let always_down = Arc::new(ScriptedChat::from_results(
            (0..10).map(|_| Err(TransportError::Network("down".into()))).collect(),
        ));
        let gw = live_gateway(
            always_down.clone(),
            Arc::new(FixtureStore::in_memory()),
            GatewayMode::Live,
        );
        let err = gw.send(&req("a dog"), GatewayMode::Live).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 4, .. }));
        assert_eq!(always_down.requests().len(), 4);
    }

    #[test]
    fn record_is_idempotent_and_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.jsonl");
        let store = Arc::new(FixtureStore::open(&path).unwrap());
        let chat = Arc::new(ScriptedChat::new([
            r#"{"object_count": 3, "count_cue": true}"#,
            r#"{"object_count": 3, "count_cue": true}"#,
        ]));
        let gw = live_gateway(chat, store.clone(), GatewayMode::Record);
        let r = req("three cats on a sofa");
        let first = gw.send(&r, GatewayMode::Record).unwrap();
        gw.send(&r, GatewayMode::Record).unwrap();
        assert_eq!(store.len(), 1);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);

        let reopened = Arc::new(FixtureStore::open(&path).unwrap());
        let replay = Gateway::replay(reopened);
        let again = replay.send(&r, GatewayMode::Replay).unwrap();
        assert_eq!(again.parsed, first.parsed);
        assert_eq!(again, first);
    }

    #[test]
    fn live_without_endpoint_fails_cleanly() {
        let gw = Gateway::new(
            GatewayConfig::default(),
            GatewayMode::Live,
            Arc::new(crate::transport::OfflineTransport),
            Arc::new(FixtureStore::in_memory()),
        );
        assert_eq!(
            gw.send(&req("a dog"), GatewayMode::Live).unwrap_err(),
            GatewayError::NoEndpoint
        );
    }
}
