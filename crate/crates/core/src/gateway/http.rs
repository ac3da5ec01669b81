use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use super::retry::is_retryable_status;
use super::ProviderError;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);
const BODY_EXCERPT: usize = 512;

pub(crate) fn agent() -> Agent {
    Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(REQUEST_TIMEOUT))
        .build()
        .into()
}

fn excerpt(body: &str) -> String {
    let mut s: String = body.chars().take(BODY_EXCERPT).collect();
    if s.len() < body.len() {
        s.push('…');
    }
    s
}

/// Maps a status code and body to parsed JSON or a classified error.
pub(crate) fn classify(status: u16, body: &str) -> Result<Value, ProviderError> {
    match status {
        200..=299 => serde_json::from_str(body)
            .map_err(|e| ProviderError::Malformed(format!("{e}: {}", excerpt(body)))),
        429 => Err(ProviderError::RateLimited(excerpt(body))),
        s if is_retryable_status(s) => Err(ProviderError::Server {
            status: s,
            body: excerpt(body),
        }),
        s => Err(ProviderError::Rejected {
            status: s,
            body: excerpt(body),
        }),
    }
}

fn finish(
    result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<Value, ProviderError> {
    let resp = result.map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let body = resp
        .into_body()
        .read_to_string()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    classify(status, &body)
}

pub(crate) fn post_json(
    agent: &Agent,
    url: &str,
    headers: &[(&str, String)],
    body: &Value,
) -> Result<Value, ProviderError> {
    let mut req = agent.post(url);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    finish(req.send_json(body))
}

pub(crate) fn get_json(
    agent: &Agent,
    url: &str,
    headers: &[(&str, String)],
) -> Result<Value, ProviderError> {
    let mut req = agent.get(url);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    finish(req.call())
}

pub(crate) fn bearer(token: &Option<String>) -> Vec<(&'static str, String)> {
    token
        .as_ref()
        .map(|t| vec![("Authorization", format!("Bearer {t}"))])
        .unwrap_or_default()
}
