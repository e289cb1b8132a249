//! Scripted chat endpoint for tests and fixture authoring.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::transport::{HttpTransport, TransportError};

/// Answers chat requests from a fixed queue of replies and keeps every body
/// it receives.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<Result<Value, TransportError>>>,
    seen: Mutex<Vec<Value>>,
}

impl ScriptedChat {
    pub fn new<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::from_results(texts.into_iter().map(|t| Ok(Self::reply(t.as_ref()))).collect())
    }

    pub fn from_results(results: Vec<Result<Value, TransportError>>) -> Self {
        Self {
            replies: Mutex::new(results.into()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Wraps `text` in an OpenAI-style chat completion body.
    pub fn reply(text: &str) -> Value {
        json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0}
        })
    }

    pub fn push(&self, text: &str) {
        self.replies
            .lock()
            .expect("script lock")
            .push_back(Ok(Self::reply(text)));
    }

    pub fn requests(&self) -> Vec<Value> {
        self.seen.lock().expect("script lock").clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().expect("script lock").len()
    }
}

impl HttpTransport for ScriptedChat {
    fn post_json(&self, _url: &str, _bearer_token: Option<&str>, body: &Value) -> Result<Value, TransportError> {
        self.seen.lock().expect("script lock").push(body.clone());
        self.replies
            .lock()
            .expect("script lock")
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Network("script exhausted".into())))
    }
}
