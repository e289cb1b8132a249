use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{fixture_key, Gateway, GatewayError, GatewayMode, ModelRequest, ModelResponse, SchemaId};

/// What to do when replay finds no fixture for a request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MissPolicy {
    /// Surface [`GatewayError::FixtureMiss`].
    #[default]
    Fail,
    /// Fall back to the caller's deterministic rule.
    Fallback,
    /// Fall back only for these keys; any other miss is an error.
    FallbackFor(BTreeSet<String>),
}

impl MissPolicy {
    pub fn allows(&self, key: &str) -> bool {
        match self {
            MissPolicy::Fail => false,
            MissPolicy::Fallback => true,
            MissPolicy::FallbackFor(keys) => keys.contains(key),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeOutcome {
    Fixture,
    Live,
    /// No usable reply; the caller used its rule-based fallback.
    Fallback,
    /// The gateway error was passed back to the caller.
    Failed,
}

/// One request/response pair as it appears in a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub schema: SchemaId,
    pub key: String,
    pub outcome: ExchangeOutcome,
    pub request: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ModelResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Handle through which agents reach a model: an optional gateway plus the
/// miss policy in force for this run.
#[derive(Clone, Copy)]
pub struct ModelAccess<'a> {
    pub gateway: Option<&'a Gateway>,
    pub policy: &'a MissPolicy,
}

static FALLBACK_ONLY: MissPolicy = MissPolicy::Fallback;

impl<'a> ModelAccess<'a> {
    pub fn new(gateway: &'a Gateway, policy: &'a MissPolicy) -> Self {
        Self {
            gateway: Some(gateway),
            policy,
        }
    }

    /// No model at all: every request takes the fallback path.
    pub fn disabled() -> ModelAccess<'static> {
        ModelAccess {
            gateway: None,
            policy: &FALLBACK_ONLY,
        }
    }

    /// Sends `req` and logs the exchange. `Ok(None)` means the caller should
    /// use its fallback: no gateway, a permitted fixture miss, or a reply
    /// without schema-valid JSON. Other gateway errors are logged and returned.
    pub fn ask(&self, req: &ModelRequest, log: &mut Vec<Exchange>) -> Result<Option<ModelResponse>, GatewayError> {
        let key = fixture_key(req);
        let mut entry = Exchange {
            schema: req.response_schema_id,
            key: key.clone(),
            outcome: ExchangeOutcome::Fallback,
            request: req.canonical_json(),
            response: None,
            error: None,
        };
        let Some(gateway) = self.gateway else {
            entry.error = Some("gateway disabled".into());
            log.push(entry);
            return Ok(None);
        };
        match gateway.send(req, gateway.mode()) {
            Ok(resp) => {
                let usable = resp.parsed.is_some();
                entry.outcome = if !usable {
                    ExchangeOutcome::Fallback
                } else if gateway.mode() == GatewayMode::Replay {
                    ExchangeOutcome::Fixture
                } else {
                    ExchangeOutcome::Live
                };
                if !usable {
                    entry.error = Some("reply carries no schema-valid JSON".into());
                }
                entry.response = Some(resp.clone());
                log.push(entry);
                Ok(usable.then_some(resp))
            }
            Err(GatewayError::FixtureMiss { key }) if self.policy.allows(&key) => {
                entry.error = Some(format!("fixture miss {key}"));
                log.push(entry);
                Ok(None)
            }
            Err(e) => {
                entry.outcome = ExchangeOutcome::Failed;
                entry.error = Some(e.to_string());
                log.push(entry);
                Err(e)
            }
        }
    }

    /// Like [`ask`](Self::ask) but falls back on every failure except a
    /// fixture miss the policy does not excuse.
    pub fn ask_or_fallback(
        &self,
        req: &ModelRequest,
        log: &mut Vec<Exchange>,
    ) -> Result<Option<ModelResponse>, GatewayError> {
        match self.ask(req, log) {
            Err(e @ GatewayError::FixtureMiss { .. }) => Err(e),
            Err(_) => {
                if let Some(last) = log.last_mut() {
                    last.outcome = ExchangeOutcome::Fallback;
                }
                Ok(None)
            }
            ok => ok,
        }
    }
}

/// Keys of exchanges that ended in a fallback after a fixture miss.
pub fn fallback_keys<'e>(exchanges: impl IntoIterator<Item = &'e Exchange>) -> BTreeSet<String> {
    exchanges
        .into_iter()
        .filter(|e| e.outcome == ExchangeOutcome::Fallback && e.response.is_none())
        .map(|e| e.key.clone())
        .collect()
}
