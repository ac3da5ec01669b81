//! Hugging Face inference API, text-generation task (`POST /models/{model}`).

use std::sync::Arc;

use serde_json::{json, Value};
use ureq::Agent;

use super::http::{agent, bearer, post_json};
use super::{
    CompletionRequest, GatewayError, LlmClient, ProviderError, ProviderFactory, ProviderSpec,
};

pub const DEFAULT_ENDPOINT: &str = "https://api-inference.huggingface.co";
pub const CREDENTIAL_VAR: &str = "HUGGINGFACE_API_KEY";

pub struct HuggingFaceFactory;

impl ProviderFactory for HuggingFaceFactory {
    fn spec_for(&self, provider: &str, model: &str) -> ProviderSpec {
        ProviderSpec {
            provider: provider.to_owned(),
            model: model.to_owned(),
            endpoint: DEFAULT_ENDPOINT.to_owned(),
            credentials: Some(CREDENTIAL_VAR.to_owned()),
        }
    }

    fn create(&self, spec: &ProviderSpec) -> Result<Arc<dyn LlmClient>, GatewayError> {
        Ok(Arc::new(HuggingFaceClient::new(spec.clone())?))
    }
}

pub struct HuggingFaceClient {
    spec: ProviderSpec,
    token: Option<String>,
    agent: Agent,
}

impl HuggingFaceClient {
    pub fn new(spec: ProviderSpec) -> Result<Self, GatewayError> {
        let token = spec.resolve_credential()?;
        Ok(Self {
            spec,
            token,
            agent: agent(),
        })
    }
}

/// The inference API rejects a zero temperature, so greedy decoding is
/// requested with `do_sample: false` instead.
pub fn request_body(request: &CompletionRequest) -> Value {
    let mut parameters = json!({
        "max_new_tokens": request.max_tokens,
        "return_full_text": false,
    });
    if request.temperature > 0.0 {
        parameters["temperature"] = json!(request.temperature);
        parameters["do_sample"] = json!(true);
    } else {
        parameters["do_sample"] = json!(false);
    }
    json!({
        "inputs": request.prompt,
        "parameters": parameters,
        "options": {"wait_for_model": true},
    })
}

pub fn parse_response(body: &Value) -> Result<String, ProviderError> {
    let item = match body {
        Value::Array(items) => items
            .first()
            .ok_or_else(|| ProviderError::Malformed("empty generation list".into()))?,
        other => other,
    };
    if let Some(err) = item.get("error") {
        return Err(ProviderError::Transport(format!(
            "inference API error: {err}"
        )));
    }
    item.get("generated_text")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::Malformed("no generated_text in response".into()))
}

impl LlmClient for HuggingFaceClient {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn execute_prompt(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let url = format!(
            "{}/models/{}",
            self.spec.endpoint.trim_end_matches('/'),
            self.spec.model
        );
        let body = post_json(
            &self.agent,
            &url,
            &bearer(&self.token),
            &request_body(request),
        )?;
        parse_response(&body)
    }
}
