//! Chat-completion backends and decision parsing.
//!
//! [`CompletionBackend`] is the only thing the runner talks to. Two
//! implementations ship: [`HttpBackend`] for OpenAI-compatible servers and
//! [`MockBackend`], a scripted test double keyed by `dataset/row`. Neither
//! retries; the runner owns the retry policy.

mod http;
mod mock;
mod parse;

use std::time::Duration;

use async_trait::async_trait;
use serde::Serialize;
use thiserror::Error;

use crate::prompt::PromptText;

pub use http::{HttpBackend, DEFAULT_API_KEY_ENV};
pub use mock::{InjectedFailure, MockBackend, MockCall, MockScript};
pub use parse::parse_decision;

pub const DEFAULT_DECISION_MAX_TOKENS: u32 = 8;
pub const DEFAULT_EXPLAIN_MAX_TOKENS: u32 = 512;

/// Identifies which record a request belongs to. Never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestTag {
    pub dataset: String,
    pub row: usize,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: PromptText,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: Option<RequestTag>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, prompt: PromptText) -> Self {
        Self {
            model: model.into(),
            prompt,
            temperature: 0.0,
            max_output_tokens: DEFAULT_DECISION_MAX_TOKENS,
            tag: None,
        }
    }

    pub fn tagged(mut self, dataset: impl Into<String>, row: usize) -> Self {
        self.tag = Some(RequestTag {
            dataset: dataset.into(),
            row,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    #[serde(rename = "latency_ms", serialize_with = "as_millis")]
    pub latency: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// 429, 5xx, timeouts and connection failures. Safe to retry.
    #[error("transient backend failure{}: {message}", fmt_status(*status))]
    Transient { status: Option<u16>, message: String },
    #[error("backend failure{}: {message}", fmt_status(*status))]
    Fatal { status: Option<u16>, message: String },
    #[error("no API credential: environment variable `{var}` is not set")]
    AuthMissing { var: String },
}

fn fmt_status(status: Option<u16>) -> String {
    status.map(|s| format!(" (HTTP {s})")).unwrap_or_default()
}

impl BackendError {
    /// Classifies a non-success HTTP status.
    pub fn from_status(status: u16, message: impl Into<String>) -> Self {
        let message = message.into();
        if status == 429 || (500..=599).contains(&status) {
            BackendError::Transient {
                status: Some(status),
                message,
            }
        } else {
            BackendError::Fatal {
                status: Some(status),
                message,
            }
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transient { .. })
    }
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;
}

/// Rough token count: one token per four characters, rounded up.
///
/// Only used where the backend reports no usage.
pub fn count_tokens_estimate(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
