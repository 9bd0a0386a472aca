//! OpenAI-compatible chat-completions client.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::header::{AUTHORIZATION, CONTENT_TYPE};
use hyper::{Request, Uri};
use hyper_rustls::HttpsConnector;
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use serde::{Deserialize, Serialize};

use super::{count_tokens_estimate, BackendError, CompletionBackend, CompletionRequest, CompletionResult};

pub const DEFAULT_API_KEY_ENV: &str = "ABSIEVE_API_KEY";
const CHAT_COMPLETIONS_PATH: &str = "/v1/chat/completions";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

pub struct HttpBackend {
    endpoint: String,
    api_key_env: String,
    api_key: Option<String>,
    timeout: Duration,
    client: Client<HttpsConnector<HttpConnector>, Full<Bytes>>,
}

impl HttpBackend {
    /// Reads the bearer token from `api_key_env`. A missing variable is only
    /// reported when a request is attempted.
    pub fn from_env(base_url: &str, api_key_env: &str) -> Self {
        let api_key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(base_url, api_key_env, api_key)
    }

    pub fn with_api_key(base_url: &str, api_key_env: &str, api_key: Option<String>) -> Self {
        let connector = hyper_rustls::HttpsConnectorBuilder::new()
            .with_webpki_roots()
            .https_or_http()
            .enable_http1()
            .build();
        Self {
            endpoint: format!("{}{}", base_url.trim_end_matches('/'), CHAT_COMPLETIONS_PATH),
            api_key_env: api_key_env.to_string(),
            api_key,
            timeout: DEFAULT_TIMEOUT,
            client: Client::builder(TokioExecutor::new()).build(connector),
        }
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn has_credential(&self) -> bool {
        self.api_key.is_some()
    }

    async fn send(&self, request: &CompletionRequest, key: &str) -> Result<(u16, Bytes), BackendError> {
        let uri: Uri = self.endpoint.parse().map_err(|e| BackendError::Fatal {
            status: None,
            message: format!("invalid endpoint `{}`: {e}", self.endpoint),
        })?;
        let body = serde_json::to_vec(&ChatRequest {
            model: &request.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt.body,
            }],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        })
        .map_err(|e| BackendError::Fatal {
            status: None,
            message: e.to_string(),
        })?;
        let http_request = Request::post(uri)
            .header(CONTENT_TYPE, "application/json")
            .header(AUTHORIZATION, format!("Bearer {key}"))
            .body(Full::new(Bytes::from(body)))
            .map_err(|e| BackendError::Fatal {
                status: None,
                message: e.to_string(),
            })?;

        let response = self.client.request(http_request).await.map_err(|e| BackendError::Transient {
            status: None,
            message: format!("request failed: {e}"),
        })?;
        let status = response.status().as_u16();
        let bytes = response
            .into_body()
            .collect()
            .await
            .map_err(|e| BackendError::Transient {
                status: Some(status),
                message: format!("reading response body: {e}"),
            })?
            .to_bytes();
        Ok((status, bytes))
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let key = self.api_key.as_deref().ok_or_else(|| BackendError::AuthMissing {
            var: self.api_key_env.clone(),
        })?;

        let started = Instant::now();
        let (status, bytes) = tokio::time::timeout(self.timeout, self.send(request, key))
            .await
            .map_err(|_| BackendError::Transient {
                status: None,
                message: format!("timed out after {:?}", self.timeout),
            })??;
        let latency = started.elapsed();

        if !(200..300).contains(&status) {
            let snippet: String = String::from_utf8_lossy(&bytes).chars().take(300).collect();
            return Err(BackendError::from_status(status, snippet));
        }

        let parsed: ChatResponse = serde_json::from_slice(&bytes).map_err(|e| BackendError::Fatal {
            status: Some(status),
            message: format!("malformed response body: {e}"),
        })?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal {
                status: Some(status),
                message: "response has no message content".to_string(),
            })?;

        let (input_tokens, output_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                count_tokens_estimate(&request.prompt.body),
                count_tokens_estimate(&text),
            ),
        };
        Ok(CompletionResult {
            text,
            input_tokens,
            output_tokens,
            latency,
        })
    }
}
