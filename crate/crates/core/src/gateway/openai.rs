//! OpenAI chat-completions dialect (`POST /v1/chat/completions`).

use std::sync::Arc;

use serde_json::{json, Value};
use ureq::Agent;

use super::http::{agent, bearer, post_json};
use super::{
    CompletionRequest, GatewayError, LlmClient, ProviderError, ProviderFactory, ProviderSpec,
};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com";
pub const CREDENTIAL_VAR: &str = "OPENAI_API_KEY";

pub struct OpenAiFactory;

impl ProviderFactory for OpenAiFactory {
    fn spec_for(&self, provider: &str, model: &str) -> ProviderSpec {
        ProviderSpec {
            provider: provider.to_owned(),
            model: model.to_owned(),
            endpoint: DEFAULT_ENDPOINT.to_owned(),
            credentials: Some(CREDENTIAL_VAR.to_owned()),
        }
    }

    fn create(&self, spec: &ProviderSpec) -> Result<Arc<dyn LlmClient>, GatewayError> {
        Ok(Arc::new(OpenAiClient::new(spec.clone())?))
    }
}

pub struct OpenAiClient {
    spec: ProviderSpec,
    token: Option<String>,
    agent: Agent,
}

impl OpenAiClient {
    pub fn new(spec: ProviderSpec) -> Result<Self, GatewayError> {
        let token = spec.resolve_credential()?;
        Ok(Self {
            spec,
            token,
            agent: agent(),
        })
    }
}

pub fn request_body(model: &str, request: &CompletionRequest) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": request.prompt}],
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

pub fn parse_response(body: &Value) -> Result<String, ProviderError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| ProviderError::Malformed("no choices[0].message in response".into()))?;
    match message.get("content") {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Ok(String::new()),
        Some(other) => Err(ProviderError::Malformed(format!(
            "message content is not text: {other}"
        ))),
    }
}

impl LlmClient for OpenAiClient {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn execute_prompt(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let url = format!(
            "{}/v1/chat/completions",
            self.spec.endpoint.trim_end_matches('/')
        );
        let body = post_json(
            &self.agent,
            &url,
            &bearer(&self.token),
            &request_body(&self.spec.model, request),
        )?;
        parse_response(&body)
    }
}
