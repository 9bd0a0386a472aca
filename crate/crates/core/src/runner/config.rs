use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::llm::{DEFAULT_DECISION_MAX_TOKENS, DEFAULT_EXPLAIN_MAX_TOKENS};

/// Upper bound on any single backoff wait.
pub const BACKOFF_CAP: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub requests_per_minute: u32,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Completed rows between checkpoint writes.
    pub checkpoint_every: usize,
    /// USD per 1,000 prompt tokens.
    pub price_per_1k_input: f64,
    /// USD per 1,000 completion tokens.
    pub price_per_1k_output: f64,
    pub decision_max_tokens: u32,
    pub explain_max_tokens: u32,
    /// Stop dispatching after this many rows in one invocation; the rest
    /// stay undecided for a later resume.
    pub row_limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".to_string(),
            temperature: 0.0,
            max_in_flight: 4,
            requests_per_minute: 60,
            max_retries: 5,
            backoff_base: Duration::from_secs(1),
            checkpoint_every: 1,
            price_per_1k_input: 0.0015,
            price_per_1k_output: 0.002,
            decision_max_tokens: DEFAULT_DECISION_MAX_TOKENS,
            explain_max_tokens: DEFAULT_EXPLAIN_MAX_TOKENS,
            row_limit: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let invalid = |field: &'static str, reason: &str| {
            Err(RunError::ConfigInvalid {
                field,
                reason: reason.to_string(),
            })
        };
        if self.model.trim().is_empty() {
            return invalid("model", "must not be empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return invalid("temperature", "must be a finite number >= 0");
        }
        if self.max_in_flight == 0 {
            return invalid("max_in_flight", "must be positive");
        }
        if self.requests_per_minute == 0 {
            return invalid("requests_per_minute", "must be positive");
        }
        if self.checkpoint_every == 0 {
            return invalid("checkpoint_every", "must be positive");
        }
        if self.decision_max_tokens == 0 {
            return invalid("decision_max_tokens", "must be positive");
        }
        if self.explain_max_tokens == 0 {
            return invalid("explain_max_tokens", "must be positive");
        }
        for (field, price) in [
            ("price_per_1k_input", self.price_per_1k_input),
            ("price_per_1k_output", self.price_per_1k_output),
        ] {
            if !(price.is_finite() && price >= 0.0) {
                return invalid(field, "must be a finite number >= 0");
            }
        }
        Ok(())
    }

    /// Minimum spacing between request starts.
    pub fn request_interval(&self) -> Duration {
        Duration::from_secs(60) / self.requests_per_minute.max(1)
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 / 1000.0 * self.price_per_1k_input
            + output_tokens as f64 / 1000.0 * self.price_per_1k_output
    }
}
