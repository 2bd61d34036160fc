use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tokio::runtime::Runtime;
use tokio::sync::Semaphore;

use crate::prompt::Prompt;

/// Environment variable holding the completion endpoint URL.
pub const ENDPOINT_ENV: &str = "TKG_RAG_ENDPOINT";

const MAX_BACKOFF: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub max_new_tokens: u32,
    /// Sequences requested per prompt; the n-best list becomes the ranking.
    pub num_sequences: u32,
    pub temperature: f64,
    /// Extra decoding fields (e.g. `num_beams`) forwarded verbatim.
    pub extra: Map<String, Value>,
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 128,
            num_sequences: 10,
            temperature: 0.0,
            extra: Map::new(),
            timeout_ms: 60_000,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 8,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_sequences == 0 {
            return Err("num_sequences must be at least 1".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    /// The endpoint could not be reached or kept failing; raised once the
    /// retry budget is spent.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    /// The endpoint answered with something that is not a completion response.
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    /// The endpoint answered `{"error": ...}`.
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("client configuration: {0}")]
    Config(String),
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
    num_sequences: u32,
    temperature: f64,
    #[serde(flatten)]
    extra: &'a Map<String, Value>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    sequences: Option<Vec<String>>,
    error: Option<String>,
}

enum Attempt {
    Retry(String),
    Fail(ClientError),
}

/// Async client for the completion wire contract:
/// `POST {"prompt", "max_new_tokens", "num_sequences", "temperature"}` answered
/// by `{"sequences": [...]}` or `{"error": "..."}`.
#[derive(Clone)]
pub struct LlmClient {
    http: reqwest::Client,
    endpoint: String,
    params: GenParams,
    permits: Arc<Semaphore>,
}

impl LlmClient {
    pub fn new(endpoint: impl Into<String>, params: GenParams) -> Result<Self, ClientError> {
        params.validate().map_err(ClientError::Config)?;
        let endpoint = endpoint.into();
        reqwest::Url::parse(&endpoint).map_err(|e| ClientError::Config(format!("endpoint `{endpoint}`: {e}")))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_millis(params.timeout_ms))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let permits = Arc::new(Semaphore::new(params.max_in_flight));
        Ok(Self { http, endpoint, params, permits })
    }

    /// Client for the URL in [`ENDPOINT_ENV`].
    pub fn from_env(params: GenParams) -> Result<Self, ClientError> {
        let url = std::env::var(ENDPOINT_ENV).map_err(|_| ClientError::Config(format!("{ENDPOINT_ENV} is not set")))?;
        Self::new(url, params)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    /// Up to `num_sequences` completions in the endpoint's rank order.
    pub async fn generate(&self, prompt: &Prompt) -> Result<Vec<String>, ClientError> {
        let _permit = self.permits.acquire().await.map_err(|e| ClientError::Config(e.to_string()))?;
        let body = CompletionRequest {
            prompt: &prompt.text,
            max_new_tokens: self.params.max_new_tokens,
            num_sequences: self.params.num_sequences,
            temperature: self.params.temperature,
            extra: &self.params.extra,
        };
        let attempts = self.params.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(&body).await {
                Ok(seqs) => return Ok(seqs),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
            if attempt < attempts {
                let delay = Duration::from_millis(self.params.backoff_ms.saturating_mul(1u64 << (attempt - 1).min(16)));
                tokio::time::sleep(delay.min(MAX_BACKOFF)).await;
            }
        }
        Err(ClientError::Transport { attempts, message: last })
    }

    async fn attempt(&self, body: &CompletionRequest<'_>) -> Result<Vec<String>, Attempt> {
        let resp = self.http.post(&self.endpoint).json(body).send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let parsed: Result<CompletionResponse, _> = serde_json::from_slice(&bytes);
        match parsed {
            Ok(CompletionResponse { error: Some(msg), .. }) => Err(Attempt::Fail(ClientError::Endpoint(msg))),
            Ok(CompletionResponse { sequences: Some(mut seqs), .. }) if status.is_success() => {
                seqs.truncate(self.params.num_sequences as usize);
                Ok(seqs)
            }
            _ if status.is_server_error() || status.as_u16() == 429 => Err(Attempt::Retry(format!("HTTP {status}"))),
            Ok(_) if status.is_success() => {
                Err(Attempt::Fail(ClientError::Malformed("response has neither `sequences` nor `error`".into())))
            }
            Err(e) if status.is_success() => Err(Attempt::Fail(ClientError::Malformed(e.to_string()))),
            _ => Err(Attempt::Fail(ClientError::Endpoint(format!("HTTP {status}")))),
        }
    }

    /// Generates for every prompt with at most `max_in_flight` requests
    /// outstanding; results are in prompt order.
    pub async fn generate_many(&self, prompts: &[&Prompt]) -> Vec<Result<Vec<String>, ClientError>> {
        stream::iter(prompts.iter().map(|p| self.generate(p)))
            .buffered(self.params.max_in_flight)
            .collect()
            .await
    }
}

/// [`LlmClient`] driven from synchronous code through an owned runtime.
pub struct BlockingClient {
    runtime: Runtime,
    client: LlmClient,
}

impl BlockingClient {
    pub fn new(client: LlmClient) -> Result<Self, ClientError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self { runtime, client })
    }

    pub fn endpoint(&self) -> &str {
        self.client.endpoint()
    }

    pub fn params(&self) -> &GenParams {
        self.client.params()
    }

    pub fn generate(&self, prompt: &Prompt) -> Result<Vec<String>, ClientError> {
        self.runtime.block_on(self.client.generate(prompt))
    }

    pub fn generate_many(&self, prompts: &[&Prompt]) -> Vec<Result<Vec<String>, ClientError>> {
        self.runtime.block_on(self.client.generate_many(prompts))
    }
}
