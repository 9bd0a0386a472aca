//! Scripted stand-in for a chat-completion server.
//!
//! Script file layout (JSON):
//!
//! ```json
//! {
//!   "IVM/0": "included",
//!   "IVM/3/explain": "The trial meets every criterion.",
//!   "default": "excluded",
//!   "failures": { "IVM/1": { "status": 500 }, "IVM/2": { "status": 429, "count": 2 } },
//!   "latency_ms": 0
//! }
//! ```
//!
//! A request tagged `(dataset, row)` with prompt kind `k` looks up
//! `dataset/row/k` first; decision prompts also fall back to `dataset/row`.
//! Failures use the same keys. A failure without `count` fires on every call.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{count_tokens_estimate, BackendError, CompletionBackend, CompletionRequest, CompletionResult};
use crate::prompt::PromptKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedFailure {
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<String, InjectedFailure>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub latency_ms: u64,
    #[serde(flatten)]
    pub responses: BTreeMap<String, String>,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn with_default(mut self, text: impl Into<String>) -> Self {
        self.default = Some(text.into());
        self
    }

    pub fn respond(mut self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.responses.insert(key.into(), text.into());
        self
    }

    pub fn fail(mut self, key: impl Into<String>, status: u16, count: Option<u32>) -> Self {
        self.failures.insert(key.into(), InjectedFailure { status, count });
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency_ms = latency.as_millis() as u64;
        self
    }
}

/// One observed call, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct MockCall {
    pub key: Option<String>,
    pub kind: PromptKind,
    /// Time since the backend was created.
    pub started: Duration,
    pub failed_with: Option<u16>,
}

#[derive(Default)]
struct MockState {
    failures_served: HashMap<String, u32>,
    calls: Vec<MockCall>,
}

pub struct MockBackend {
    script: MockScript,
    state: Mutex<MockState>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
    epoch: Instant,
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            state: Mutex::new(MockState::default()),
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
            epoch: Instant::now(),
        }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().calls.len()
    }

    /// Calls whose key resolved to `dataset/row` (any prompt kind).
    pub fn calls_for(&self, dataset: &str, row: usize) -> usize {
        let prefix = format!("{dataset}/{row}");
        self.state
            .lock()
            .unwrap()
            .calls
            .iter()
            .filter(|c| {
                c.key
                    .as_deref()
                    .is_some_and(|k| k == prefix || k.starts_with(&format!("{prefix}/")))
            })
            .count()
    }

    /// Highest number of simultaneously running `complete` calls seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }

    fn candidate_keys(request: &CompletionRequest) -> Vec<String> {
        let Some(tag) = &request.tag else {
            return Vec::new();
        };
        let base = format!("{}/{}", tag.dataset, tag.row);
        let mut keys = vec![format!("{base}/{}", request.prompt.kind.as_str())];
        if request.prompt.kind == PromptKind::Decision {
            keys.push(base);
        }
        keys
    }

    fn call_key(request: &CompletionRequest) -> Option<String> {
        request.tag.as_ref().map(|tag| match request.prompt.kind {
            PromptKind::Decision => format!("{}/{}", tag.dataset, tag.row),
            kind => format!("{}/{}/{}", tag.dataset, tag.row, kind.as_str()),
        })
    }

    fn resolve(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let keys = Self::candidate_keys(request);
        let mut state = self.state.lock().unwrap();

        let failure = keys
            .iter()
            .find_map(|k| self.script.failures.get(k).map(|f| (k.clone(), *f)));
        if let Some((key, failure)) = failure {
            let served = state.failures_served.entry(key).or_default();
            if failure.count.is_none_or(|limit| *served < limit) {
                *served += 1;
                let err = BackendError::from_status(failure.status, format!("injected HTTP {}", failure.status));
                return Err(err);
            }
        }
        drop(state);

        keys.iter()
            .find_map(|k| self.script.responses.get(k))
            .or(self.script.default.as_ref())
            .cloned()
            .ok_or_else(|| BackendError::Fatal {
                status: None,
                message: format!("mock script has no response for {keys:?} and no default"),
            })
    }
}

#[async_trait]
impl CompletionBackend for MockBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        let started = Instant::now();

        let outcome = self.resolve(request);
        self.state.lock().unwrap().calls.push(MockCall {
            key: Self::call_key(request),
            kind: request.prompt.kind,
            started: started.duration_since(self.epoch),
            failed_with: match &outcome {
                Err(BackendError::Transient { status, .. } | BackendError::Fatal { status, .. }) => {
                    Some(status.unwrap_or(0))
                }
                _ => None,
            },
        });

        if self.script.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.script.latency_ms)).await;
        }

        let text = outcome?;
        Ok(CompletionResult {
            input_tokens: count_tokens_estimate(&request.prompt.body),
            output_tokens: count_tokens_estimate(&text),
            latency: started.elapsed(),
            text,
        })
    }
}
