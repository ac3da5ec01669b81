//! Uniform, retry-aware access to LLM providers.
//!
//! A provider is registered in a [`ProviderRegistry`] as a factory that turns a
//! [`ProviderSpec`] into an [`LlmClient`]. The built-in factories cover the
//! OpenAI chat-completions API, the Hugging Face inference API and Replicate;
//! further providers (including the scripted [`mock::MockProvider`]) are added
//! with [`ProviderRegistry::register_provider`].

mod http;
pub mod huggingface;
pub mod mock;
pub mod openai;
pub mod registry;
pub mod replicate;
pub mod retry;


use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::requirements::ModelId;

pub use registry::{ProviderFactory, ProviderRegistry};
pub use retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderSpec {
    pub provider: String,
    pub model: String,
    /// Base URL; empty for providers that do not talk to the network.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub credentials: Option<String>,
}

impl ProviderSpec {
    pub fn model_id(&self) -> ModelId {
        ModelId {
            provider: self.provider.clone(),
            model: self.model.clone(),
        }
    }

    /// Reads the credential from the environment.
    pub fn resolve_credential(&self) -> Result<Option<String>, GatewayError> {
        match &self.credentials {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.trim().is_empty() => Ok(Some(v)),
                _ => Err(GatewayError::MissingCredential {
                    provider: self.provider.clone(),
                    variable: var.clone(),
                }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompletionStatus {
    Ok,
    Failed,
}

impl CompletionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Failed => "failed",
        }
    }
}

impl fmt::Display for CompletionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub attempts: u32,
    pub latency: Duration,
    pub status: CompletionStatus,
    /// Last error seen when `status` is failed.
    pub error: Option<String>,
}

/// Failure of a single attempt.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited (HTTP 429): {0}")]
    RateLimited(String),
    #[error("server error (HTTP {status}): {body}")]
    Server { status: u16, body: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Malformed(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, Self::Rejected { .. })
    }
}

/// Errors raised before any request is sent; never retried.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("unknown provider `{0}`")]
    UnknownProvider(String),
    #[error("provider `{0}` is already registered")]
    DuplicateProvider(String),
    #[error("provider `{provider}` needs the environment variable {variable}")]
    MissingCredential { provider: String, variable: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

/// A connection to one model of one provider.
pub trait LlmClient: Send + Sync {
    fn spec(&self) -> &ProviderSpec;

    /// Sends the prompt once and returns the generated text.
    fn execute_prompt(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Registry plus retry behavior.
#[derive(Clone)]
pub struct Gateway {
    registry: Arc<ProviderRegistry>,
    retry: RetryPolicy,
    sleeper: Sleeper,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("registry", &self.registry)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(registry: Arc<ProviderRegistry>) -> Self {
        Self {
            registry,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn registry(&self) -> &ProviderRegistry {
        &self.registry
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn client(&self, model: &ModelId) -> Result<Arc<dyn LlmClient>, GatewayError> {
        self.registry.resolve(model)
    }

    /// Resolves the model and runs [`Gateway::complete_with`].
    pub fn complete(
        &self,
        model: &ModelId,
        request: &CompletionRequest,
        n_retries: u32,
    ) -> Result<CompletionResult, GatewayError> {
        if request.max_tokens == 0 {
            return Err(GatewayError::Config("max_tokens must be at least 1".into()));
        }
        let client = self.client(model)?;
        Ok(self.complete_with(client.as_ref(), request, n_retries))
    }

    /// Up to `n_retries + 1` attempts; retryable failures back off between
    /// attempts, non-retryable ones stop immediately.
    pub fn complete_with(
        &self,
        client: &dyn LlmClient,
        request: &CompletionRequest,
        n_retries: u32,
    ) -> CompletionResult {
        let started = Instant::now();
        let mut attempts = 0u32;
        let mut rng = rand::rng();
        loop {
            attempts += 1;
            match client.execute_prompt(request) {
                Ok(text) => {
                    return CompletionResult {
                        text,
                        attempts,
                        latency: started.elapsed(),
                        status: CompletionStatus::Ok,
                        error: None,
                    }
                }
                Err(e) if e.is_retryable() && attempts <= n_retries => {
                    let wait = self.retry.delay(attempts - 1, &mut rng);
                    debug!(model = %client.spec().model_id(), attempt = attempts, ?wait, "retrying after: {e}");
                    (self.sleeper)(wait);
                }
                Err(e) => {
                    return CompletionResult {
                        text: String::new(),
                        attempts,
                        latency: started.elapsed(),
                        status: CompletionStatus::Failed,
                        error: Some(e.to_string()),
                    }
                }
            }
        }
    }
}
