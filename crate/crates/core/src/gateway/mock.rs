//! Deterministic scripted provider for offline runs and tests.
//!
//! Rules are tried in order against the full prompt text; the first match
//! answers. A rule may fail a fixed number of times per prompt before it
//! answers, which exercises the retry path without any timing dependence.
//!
//! Fixture format (JSON): either an array of rules or
//! `{"rules": [...], "default": "..."}`, where a rule is
//! `{"pattern": "...", "response": "...", "failures_before_success": 0,
//!   "regex": false, "model": null}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use super::{
    CompletionRequest, GatewayError, LlmClient, ProviderError, ProviderFactory, ProviderSpec,
};

#[derive(Debug, Clone)]
pub enum Pattern {
    Substring(String),
    Regex(Regex),
}

impl Pattern {
    fn matches(&self, text: &str) -> bool {
        match self {
            Self::Substring(s) => text.contains(s.as_str()),
            Self::Regex(r) => r.is_match(text),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockRule {
    pub pattern: Pattern,
    pub response: String,
    pub failures_before_success: u32,
    /// Restricts the rule to one model name of the mock provider.
    pub model: Option<String>,
}

impl MockRule {
    pub fn substring(pattern: &str, response: &str) -> Self {
        Self {
            pattern: Pattern::Substring(pattern.to_owned()),
            response: response.to_owned(),
            failures_before_success: 0,
            model: None,
        }
    }

    pub fn regex(pattern: &str, response: &str) -> Result<Self, regex::Error> {
        Ok(Self {
            pattern: Pattern::Regex(Regex::new(pattern)?),
            ..Self::substring("", response)
        })
    }

    pub fn failing(mut self, times: u32) -> Self {
        self.failures_before_success = times;
        self
    }

    pub fn for_model(mut self, model: &str) -> Self {
        self.model = Some(model.to_owned());
        self
    }
}

#[derive(Debug, Error)]
pub enum MockRulesError {
    #[error("mock rules: {0}")]
    Json(#[from] serde_json::Error),
    #[error("mock rule {index}: invalid regex: {source}")]
    Regex {
        index: usize,
        #[source]
        source: regex::Error,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleDoc {
    pattern: String,
    response: String,
    #[serde(default)]
    failures_before_success: u32,
    #[serde(default)]
    regex: bool,
    #[serde(default)]
    model: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RulesDoc {
    List(Vec<RuleDoc>),
    Full {
        rules: Vec<RuleDoc>,
        #[serde(default)]
        default: String,
    },
}

#[derive(Debug)]
struct State {
    rules: Vec<MockRule>,
    default: String,
    // (rule index, model, prompt) -> failures already served
    served_failures: Mutex<HashMap<(usize, String, String), u32>>,
    received: Mutex<Vec<(String, String)>>,
}

/// Scripted provider. Cloning shares the script and the call log.
#[derive(Debug, Clone)]
pub struct MockProvider {
    state: Arc<State>,
}

impl MockProvider {
    pub fn new(rules: Vec<MockRule>, default: &str) -> Self {
        Self {
            state: Arc::new(State {
                rules,
                default: default.to_owned(),
                served_failures: Mutex::new(HashMap::new()),
                received: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MockRulesError> {
        let (docs, default) = match serde_json::from_str::<RulesDoc>(text)? {
            RulesDoc::List(rules) => (rules, String::new()),
            RulesDoc::Full { rules, default } => (rules, default),
        };
        let rules = docs
            .into_iter()
            .enumerate()
            .map(|(index, d)| {
                let pattern = if d.regex {
                    Pattern::Regex(
                        Regex::new(&d.pattern)
                            .map_err(|source| MockRulesError::Regex { index, source })?,
                    )
                } else {
                    Pattern::Substring(d.pattern)
                };
                Ok(MockRule {
                    pattern,
                    response: d.response,
                    failures_before_success: d.failures_before_success,
                    model: d.model,
                })
            })
            .collect::<Result<Vec<_>, MockRulesError>>()?;
        Ok(Self::new(rules, &default))
    }

    /// Every (model, prompt) pair received, in arrival order.
    pub fn received(&self) -> Vec<(String, String)> {
        self.state.received.lock().expect("mock lock").clone()
    }

    fn answer(&self, model: &str, prompt: &str) -> Result<String, ProviderError> {
        let state = &self.state;
        state
            .received
            .lock()
            .expect("mock lock")
            .push((model.to_owned(), prompt.to_owned()));
        let hit = state.rules.iter().enumerate().find(|(_, r)| {
            r.model.as_deref().is_none_or(|m| m == model) && r.pattern.matches(prompt)
        });
        let Some((index, rule)) = hit else {
            return Ok(state.default.clone());
        };
        if rule.failures_before_success > 0 {
            let mut served = state.served_failures.lock().expect("mock lock");
            let count = served
                .entry((index, model.to_owned(), prompt.to_owned()))
                .or_insert(0);
            if *count < rule.failures_before_success {
                *count += 1;
                return Err(ProviderError::Transport(format!(
                    "scripted failure {} of {} (rule {index})",
                    *count, rule.failures_before_success
                )));
            }
        }
        Ok(rule.response.clone())
    }
}

impl ProviderFactory for MockProvider {
    fn create(&self, spec: &ProviderSpec) -> Result<Arc<dyn LlmClient>, GatewayError> {
        Ok(Arc::new(MockClient {
            provider: self.clone(),
            spec: spec.clone(),
        }))
    }
}

struct MockClient {
    provider: MockProvider,
    spec: ProviderSpec,
}

impl LlmClient for MockClient {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn execute_prompt(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.provider.answer(&self.spec.model, &request.prompt)
    }
}
