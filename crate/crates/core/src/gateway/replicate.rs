//! Replicate predictions: create a prediction for an official model, then poll
//! its `urls.get` until it reaches a terminal status.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::http::{agent, bearer, get_json, post_json};
use super::{
    CompletionRequest, GatewayError, LlmClient, ProviderError, ProviderFactory, ProviderSpec,
};

pub const DEFAULT_ENDPOINT: &str = "https://api.replicate.com";
pub const CREDENTIAL_VAR: &str = "REPLICATE_API_TOKEN";

#[derive(Debug, Clone, Copy)]
pub struct PollSettings {
    pub interval: Duration,
    pub max_polls: u32,
}

impl Default for PollSettings {
    fn default() -> Self {
        Self {
            interval: Duration::from_secs(1),
            max_polls: 300,
        }
    }
}

#[derive(Default)]
pub struct ReplicateFactory {
    pub poll: PollSettings,
}

impl ProviderFactory for ReplicateFactory {
    fn spec_for(&self, provider: &str, model: &str) -> ProviderSpec {
        ProviderSpec {
            provider: provider.to_owned(),
            model: model.to_owned(),
            endpoint: DEFAULT_ENDPOINT.to_owned(),
            credentials: Some(CREDENTIAL_VAR.to_owned()),
        }
    }

    fn create(&self, spec: &ProviderSpec) -> Result<Arc<dyn LlmClient>, GatewayError> {
        Ok(Arc::new(ReplicateClient::new(spec.clone(), self.poll)?))
    }
}

pub struct ReplicateClient {
    spec: ProviderSpec,
    token: Option<String>,
    poll: PollSettings,
    agent: Agent,
}

impl ReplicateClient {
    pub fn new(spec: ProviderSpec, poll: PollSettings) -> Result<Self, GatewayError> {
        if !spec.model.contains('/') {
            return Err(GatewayError::Config(format!(
                "replicate model `{}` must be owner/name",
                spec.model
            )));
        }
        let token = spec.resolve_credential()?;
        Ok(Self {
            spec,
            token,
            poll,
            agent: agent(),
        })
    }
}

pub fn request_body(request: &CompletionRequest) -> Value {
    json!({
        "input": {
            "prompt": request.prompt,
            "temperature": request.temperature,
            "max_new_tokens": request.max_tokens,
        }
    })
}

#[derive(Debug, PartialEq)]
pub enum PredictionState {
    Done(String),
    Pending(String),
}

/// Interprets a prediction object. `output` is either a string or a list of
/// streamed fragments to concatenate.
pub fn parse_prediction(body: &Value) -> Result<PredictionState, ProviderError> {
    let status = body.get("status").and_then(Value::as_str).unwrap_or("");
    match status {
        "succeeded" => {
            let text = match body.get("output") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Array(parts)) => parts.iter().filter_map(Value::as_str).collect(),
                Some(Value::Null) | None => String::new(),
                Some(other) => {
                    return Err(ProviderError::Malformed(format!(
                        "unexpected output: {other}"
                    )))
                }
            };
            Ok(PredictionState::Done(text))
        }
        "starting" | "processing" => {
            let url = body
                .pointer("/urls/get")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    ProviderError::Malformed("pending prediction without urls.get".into())
                })?;
            Ok(PredictionState::Pending(url.to_owned()))
        }
        "failed" | "canceled" => Err(ProviderError::Transport(format!(
            "prediction {status}: {}",
            body.get("error").cloned().unwrap_or(Value::Null)
        ))),
        other => Err(ProviderError::Malformed(format!(
            "unknown prediction status `{other}`"
        ))),
    }
}

impl LlmClient for ReplicateClient {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn execute_prompt(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let url = format!(
            "{}/v1/models/{}/predictions",
            self.spec.endpoint.trim_end_matches('/'),
            self.spec.model
        );
        let headers = bearer(&self.token);
        let mut state = parse_prediction(&post_json(
            &self.agent,
            &url,
            &headers,
            &request_body(request),
        )?)?;
        let mut polls = 0;
        loop {
            match state {
                PredictionState::Done(text) => return Ok(text),
                PredictionState::Pending(poll_url) => {
                    if polls >= self.poll.max_polls {
                        return Err(ProviderError::Transport(format!(
                            "prediction still pending after {polls} polls"
                        )));
                    }
                    polls += 1;
                    std::thread::sleep(self.poll.interval);
                    state = parse_prediction(&get_json(&self.agent, &poll_url, &headers)?)?;
                }
            }
        }
    }
}
