//! Language-model backends behind one completion interface.
//!
//! The scripted backend replays canned responses from disk and is the
//! workhorse for tests and offline runs: a call whose user message hashes to
//! `<digest>` reads `responses/<digest>/<k>.txt` (k counts calls with that
//! digest), falling back to `responses/ordered/<g>.txt` where g counts all
//! calls on the backend. Both counters are 0-based.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport: {0}")]
    Transport(String),
    #[error("backend timeout")]
    Timeout,
    #[error("no scripted response for digest {digest} (ordinal {ordinal}, global {global})")]
    MissingScript {
        digest: String,
        ordinal: usize,
        global: usize,
    },
    #[error("malformed completion response: {0}")]
    Protocol(String),
}

pub trait GeneratorBackend {
    fn complete(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<String, BackendError>;
}

#[derive(Debug, Default)]
struct PlaybackState {
    global: usize,
    per_digest: HashMap<String, usize>,
}

/// Deterministic playback of responses recorded on disk.
#[derive(Debug)]
pub struct ScriptedBackend {
    root: PathBuf,
    state: Mutex<PlaybackState>,
}

impl ScriptedBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ScriptedBackend {
            root: root.into(),
            state: Mutex::new(PlaybackState::default()),
        }
    }
}

impl GeneratorBackend for ScriptedBackend {
    fn complete(
        &self,
        _system: &str,
        user: &str,
        _temperature: f64,
        _seed: Option<u64>,
    ) -> Result<String, BackendError> {
        let digest = sha256_hex(user.as_bytes());
        let (ordinal, global) = {
            let mut state = self.state.lock().expect("playback state poisoned");
            let ordinal = *state
                .per_digest
                .entry(digest.clone())
                .and_modify(|v| *v += 1)
                .or_insert(0);
            let global = state.global;
            state.global += 1;
            (ordinal, global)
        };

        let keyed = self.root.join(&digest).join(format!("{ordinal}.txt"));
        if keyed.is_file() {
            return std::fs::read_to_string(&keyed)
                .map_err(|err| BackendError::Transport(format!("reading {}: {err}", keyed.display())));
        }
        let ordered = self.root.join("ordered").join(format!("{global}.txt"));
        if ordered.is_file() {
            return std::fs::read_to_string(&ordered).map_err(|err| {
                BackendError::Transport(format!("reading {}: {err}", ordered.display()))
            });
        }
        Err(BackendError::MissingScript {
            digest,
            ordinal,
            global,
        })
    }
}

/// HTTP JSON chat-completion client. The request body is
/// `{model, messages:[{role,content}...], temperature, seed?}` and the reply
/// text is the first choice's message content.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn request_body(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        seed: Option<u64>,
    ) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": temperature,
        });
        if let Some(seed) = seed {
            body["seed"] = serde_json::json!(seed);
        }
        body
    }

    fn extract_content(value: &serde_json::Value) -> Result<String, BackendError> {
        value
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .map(str::to_owned)
            .ok_or_else(|| {
                BackendError::Protocol("response lacks choices[0].message.content".into())
            })
    }
}

impl GeneratorBackend for HttpBackend {
    fn complete(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<String, BackendError> {
        let body = self.request_body(system, user, temperature, seed);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut request = agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|err| match err {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        })?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|err| BackendError::Protocol(err.to_string()))?;
        Self::extract_content(&value)
    }
}

/// Counts calls so runs can assert their backend-call budget.
pub struct CountingBackend<'a> {
    inner: &'a dyn GeneratorBackend,
    calls: AtomicUsize,
}

impl<'a> CountingBackend<'a> {
    pub fn new(inner: &'a dyn GeneratorBackend) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl GeneratorBackend for CountingBackend<'_> {
    fn complete(
        &self,
        system: &str,
        user: &str,
        temperature: f64,
        seed: Option<u64>,
    ) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(system, user, temperature, seed)
    }
}
