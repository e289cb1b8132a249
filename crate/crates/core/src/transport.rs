//! Blocking JSON-over-HTTP transport shared by the model gateway and the
//! painter backends.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("network error: {0}")]
    Network(String),
    #[error("http status {0}: {1}")]
    Status(u16, String),
    #[error("undecodable response body: {0}")]
    Decode(String),
    #[error("network access is disabled")]
    Disabled,
}

impl TransportError {
    /// Connection failures and server-side errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Network(_) => true,
            TransportError::Status(code, _) => *code >= 500 || *code == 429,
            TransportError::Decode(_) | TransportError::Disabled => false,
        }
    }
}

pub trait HttpTransport: Send + Sync {
    /// POSTs `body` as JSON and decodes the JSON reply.
    fn post_json(&self, url: &str, bearer_token: Option<&str>, body: &Value) -> Result<Value, TransportError>;
}

impl<T: HttpTransport + ?Sized> HttpTransport for Arc<T> {
    fn post_json(&self, url: &str, bearer_token: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        (**self).post_json(url, bearer_token, body)
    }
}

/// Real network transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(300))
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, bearer_token: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        let payload = serde_json::to_string(body).map_err(|e| TransportError::Decode(e.to_string()))?;
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send(payload).map_err(|e| TransportError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status(status, text.chars().take(512).collect()));
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Decode(e.to_string()))
    }
}

/// Refuses every request. Used wherever the pipeline must stay offline.
#[derive(Debug, Default)]
pub struct OfflineTransport;

impl HttpTransport for OfflineTransport {
    fn post_json(&self, _url: &str, _bearer_token: Option<&str>, _body: &Value) -> Result<Value, TransportError> {
        Err(TransportError::Disabled)
    }
}

/// Wraps another transport and counts every request that reaches it.
pub struct CountingTransport<T> {
    inner: T,
    calls: AtomicUsize,
}

impl<T> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: HttpTransport> HttpTransport for CountingTransport<T> {
    fn post_json(&self, url: &str, bearer_token: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.post_json(url, bearer_token, body)
    }
}
