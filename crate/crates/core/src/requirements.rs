//! Ethical requirements and test-scenario configuration.
//!
//! Both documents are JSON. Loading walks the parsed [`Value`] by hand so every
//! rejection names the requirement and field at fault; a model is either fully
//! valid or not returned at all.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_TOKENS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("{0}")]
    Validation(#[from] ValidationError),
}

/// A rejected field. `requirement` is absent for scenario files and for
/// problems with the document shape itself.
#[derive(Debug, Error, Clone, PartialEq)]
pub struct ValidationError {
    pub requirement: Option<String>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.requirement {
            Some(req) => write!(
                f,
                "requirement `{}`: field `{}`: {}",
                req, self.field, self.message
            ),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

impl ValidationError {
    fn new(requirement: Option<&str>, field: &str, message: impl Into<String>) -> Self {
        Self {
            requirement: requirement.map(str::to_owned),
            field: field.to_owned(),
            message: message.into(),
        }
    }
}

/// ISO language-region pair in canonical `ll-RR` form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for LanguageCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        let (lang, region) = trimmed
            .split_once(['-', '_'])
            .ok_or_else(|| format!("`{s}` is not a language-region pair such as en-US"))?;
        let lang_ok =
            (2..=3).contains(&lang.len()) && lang.chars().all(|c| c.is_ascii_alphabetic());
        let region_ok = region.len() == 2 && region.chars().all(|c| c.is_ascii_alphabetic());
        if !lang_ok || !region_ok {
            return Err(format!("`{s}` is not a language-region pair such as en-US"));
        }
        Ok(Self(format!(
            "{}-{}",
            lang.to_ascii_lowercase(),
            region.to_ascii_uppercase()
        )))
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LanguageCode> for String {
    fn from(l: LanguageCode) -> Self {
        l.0
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputType {
    Constrained,
    Verbose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionType {
    Observational,
    Utopian,
}

impl InputType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Constrained => "constrained",
            Self::Verbose => "verbose",
        }
    }
}

impl ReflectionType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Observational => "observational",
            Self::Utopian => "utopian",
        }
    }
}

impl FromStr for InputType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constrained" => Ok(Self::Constrained),
            "verbose" => Ok(Self::Verbose),
            other => Err(format!(
                "unknown input type `{other}` (expected constrained or verbose)"
            )),
        }
    }
}

impl FromStr for ReflectionType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "observational" => Ok(Self::Observational),
            "utopian" => Ok(Self::Utopian),
            other => Err(format!(
                "unknown reflection type `{other}` (expected observational or utopian)"
            )),
        }
    }
}

impl fmt::Display for InputType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for ReflectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sensitive community and the literal used for it in each language.
#[derive(Debug, Clone, PartialEq)]
pub struct CommunityEntry {
    pub id: String,
    pub literals: Vec<(LanguageCode, String)>,
}

impl CommunityEntry {
    pub fn literal(&self, language: &LanguageCode) -> Option<&str> {
        self.literals
            .iter()
            .find(|(lang, _)| lang == language)
            .map(|(_, lit)| lit.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EthicalRequirement {
    pub name: String,
    pub rationale: String,
    pub languages: Vec<LanguageCode>,
    pub tolerance: f64,
    pub delta: f64,
    pub concern: String,
    pub communities: Vec<CommunityEntry>,
    pub inputs: Vec<InputType>,
    pub reflections: Vec<ReflectionType>,
}

/// `provider/model-name`. The model part may itself contain slashes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId {
    pub provider: String,
    pub model: String,
}

impl FromStr for ModelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().split_once('/') {
            Some((p, m)) if !p.is_empty() && !m.is_empty() => Ok(Self {
                provider: p.to_owned(),
                model: m.to_owned(),
            }),
            _ => Err(format!("`{s}` is not of the form provider/model-name")),
        }
    }
}

impl TryFrom<String> for ModelId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelId> for String {
    fn from(m: ModelId) -> Self {
        m.to_string()
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.provider, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestScenarioConfig {
    #[serde(rename = "nTemplates")]
    pub n_templates: usize,
    #[serde(rename = "nRetries")]
    pub n_retries: u32,
    pub temperature: f64,
    pub tokens: u32,
    #[serde(rename = "useLLMEval")]
    pub use_llm_eval: bool,
    pub llms: Vec<ModelId>,
    #[serde(rename = "graderLLM")]
    pub grader_llm: ModelId,
}

/// Parses and validates a requirements document (a JSON array).
pub fn load_requirements(source: &str) -> Result<Vec<EthicalRequirement>, ModelError> {
    let doc: Value = serde_json::from_str(source).map_err(|e| ModelError::Syntax(e.to_string()))?;
    let items = doc.as_array().ok_or_else(|| {
        ValidationError::new(None, "$", "requirements model must be a JSON array")
    })?;

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(items.len());
    for (idx, item) in items.iter().enumerate() {
        let req = parse_requirement(idx, item)?;
        if !seen.insert(req.name.clone()) {
            return Err(ValidationError::new(
                Some(&req.name),
                "name",
                "duplicate requirement name",
            )
            .into());
        }
        out.push(req);
    }
    Ok(out)
}

fn parse_requirement(idx: usize, item: &Value) -> Result<EthicalRequirement, ValidationError> {
    let fallback = format!("#{idx}");
    let obj = item.as_object().ok_or_else(|| {
        ValidationError::new(Some(&fallback), "$", "requirement must be a JSON object")
    })?;

    let name = match obj.get("name") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::String(_)) => {
            return Err(ValidationError::new(
                Some(&fallback),
                "name",
                "must not be empty",
            ))
        }
        Some(_) => {
            return Err(ValidationError::new(
                Some(&fallback),
                "name",
                "must be a string",
            ))
        }
        None => return Err(ValidationError::new(Some(&fallback), "name", "is required")),
    };
    let ctx = Fields { req: &name, obj };

    let rationale = match obj.get("rationale") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ctx.err("rationale", "must be a string")),
    };

    let languages = ctx
        .string_list("languages")?
        .into_iter()
        .map(|s| {
            s.parse::<LanguageCode>()
                .map_err(|e| ctx.err("languages", e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if languages.is_empty() {
        return Err(ctx.err("languages", "must list at least one language"));
    }
    if has_duplicates(&languages) {
        return Err(ctx.err("languages", "contains duplicates"));
    }

    let tolerance = ctx.fraction("tolerance")?;
    let delta = ctx.fraction("delta")?;

    let concern = match obj.get("concern") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_owned(),
        Some(Value::String(_)) => return Err(ctx.err("concern", "must not be empty")),
        Some(_) => return Err(ctx.err("concern", "must be a string")),
        None => return Err(ctx.err("concern", "is required")),
    };

    let communities = ctx.communities(&languages)?;

    let inputs = ctx
        .string_list("inputs")?
        .iter()
        .map(|s| s.parse::<InputType>().map_err(|e| ctx.err("inputs", e)))
        .collect::<Result<Vec<_>, _>>()?;
    if inputs.is_empty() {
        return Err(ctx.err("inputs", "must list at least one input type"));
    }
    if has_duplicates(&inputs) {
        return Err(ctx.err("inputs", "contains duplicates"));
    }

    let reflections = ctx
        .string_list("reflections")?
        .iter()
        .map(|s| {
            s.parse::<ReflectionType>()
                .map_err(|e| ctx.err("reflections", e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if reflections.is_empty() {
        return Err(ctx.err("reflections", "must list at least one reflection type"));
    }
    if has_duplicates(&reflections) {
        return Err(ctx.err("reflections", "contains duplicates"));
    }

    Ok(EthicalRequirement {
        name,
        rationale,
        languages,
        tolerance,
        delta,
        concern,
        communities,
        inputs,
        reflections,
    })
}

fn has_duplicates<T: Eq + std::hash::Hash>(items: &[T]) -> bool {
    let mut seen = HashSet::new();
    items.iter().any(|i| !seen.insert(i))
}

struct Fields<'a> {
    req: &'a str,
    obj: &'a Map<String, Value>,
}

impl Fields<'_> {
    fn err(&self, field: &str, message: impl Into<String>) -> ValidationError {
        ValidationError::new(Some(self.req), field, message)
    }

    fn string_list(&self, field: &str) -> Result<Vec<String>, ValidationError> {
        let arr = match self.obj.get(field) {
            Some(Value::Array(a)) => a,
            Some(_) => return Err(self.err(field, "must be an array of strings")),
            None => return Err(self.err(field, "is required")),
        };
        arr.iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_owned)
                    .ok_or_else(|| self.err(field, "must be an array of strings"))
            })
            .collect()
    }

    fn fraction(&self, field: &str) -> Result<f64, ValidationError> {
        let v = match self.obj.get(field) {
            Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(_) => return Err(self.err(field, "must be a number")),
            None => return Err(self.err(field, "is required")),
        };
        if !(0.0..=1.0).contains(&v) {
            return Err(self.err(field, format!("must be within [0.0, 1.0], got {v}")));
        }
        Ok(v)
    }

    fn communities(
        &self,
        languages: &[LanguageCode],
    ) -> Result<Vec<CommunityEntry>, ValidationError> {
        let map = match self.obj.get("communities") {
            Some(Value::Object(m)) => m,
            Some(_) => {
                return Err(self.err(
                    "communities",
                    "must be an object mapping community id to {language: literal}",
                ))
            }
            None => return Err(self.err("communities", "is required")),
        };
        if map.is_empty() {
            return Err(self.err("communities", "must contain at least one community"));
        }
        let mut out = Vec::with_capacity(map.len());
        for (id, lits) in map {
            let field = format!("communities.{id}");
            if id.trim().is_empty() {
                return Err(self.err("communities", "community id must not be empty"));
            }
            let lits = lits
                .as_object()
                .ok_or_else(|| self.err(&field, "must be an object mapping language to literal"))?;
            let mut literals: Vec<(LanguageCode, String)> = Vec::with_capacity(lits.len());
            for (lang, lit) in lits {
                let code: LanguageCode = lang.parse().map_err(|e: String| self.err(&field, e))?;
                let lit = match lit {
                    Value::String(s) if !s.trim().is_empty() => s.clone(),
                    _ => {
                        return Err(self.err(
                            &field,
                            format!("literal for {code} must be a non-empty string"),
                        ))
                    }
                };
                if literals.iter().any(|(l, _)| *l == code) {
                    return Err(self.err(&field, format!("duplicate literal for {code}")));
                }
                literals.push((code, lit));
            }
            let entry = CommunityEntry {
                id: id.clone(),
                literals,
            };
            if let Some(missing) = languages.iter().find(|l| entry.literal(l).is_none()) {
                return Err(self.err(
                    &field,
                    format!("no literal for declared language {missing}"),
                ));
            }
            out.push(entry);
        }
        Ok(out)
    }
}

/// Parses and validates a test-scenario document, applying defaults for
/// absent optional fields.
pub fn load_scenario(source: &str) -> Result<TestScenarioConfig, ModelError> {
    let doc: Value = serde_json::from_str(source).map_err(|e| ModelError::Syntax(e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| ValidationError::new(None, "$", "scenario must be a JSON object"))?;
    let err = |field: &str, msg: String| ValidationError::new(None, field, msg);

    let uint = |field: &str, default: Option<u64>, min: u64| -> Result<u64, ValidationError> {
        match obj.get(field) {
            None | Some(Value::Null) => default.ok_or_else(|| err(field, "is required".into())),
            Some(Value::Number(n)) => match n.as_u64() {
                Some(v) if v >= min => Ok(v),
                _ => Err(err(field, format!("must be an integer >= {min}, got {n}"))),
            },
            Some(_) => Err(err(field, "must be an integer".into())),
        }
    };

    let n_templates = uint("nTemplates", None, 1)? as usize;
    let n_retries = u32::try_from(uint("nRetries", Some(DEFAULT_RETRIES as u64), 0)?)
        .map_err(|_| err("nRetries", "is too large".into()))?;
    let tokens = u32::try_from(uint("tokens", Some(DEFAULT_TOKENS as u64), 1)?)
        .map_err(|_| err("tokens", "is too large".into()))?;

    let temperature = match obj.get("temperature") {
        None | Some(Value::Null) => DEFAULT_TEMPERATURE,
        Some(Value::Number(n)) => match n.as_f64() {
            Some(t) if t >= 0.0 && t.is_finite() => t,
            _ => {
                return Err(err(
                    "temperature",
                    format!("must be a non-negative number, got {n}"),
                )
                .into())
            }
        },
        Some(_) => return Err(err("temperature", "must be a number".into()).into()),
    };

    let use_llm_eval = match obj.get("useLLMEval") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(err("useLLMEval", "must be a boolean".into()).into()),
    };

    let llms = match obj.get("llms") {
        Some(Value::Array(a)) => a
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| err("llms", "must be an array of strings".into()))
                    .and_then(|s| s.parse::<ModelId>().map_err(|e| err("llms", e)))
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(err("llms", "must be an array of strings".into()).into()),
        None => return Err(err("llms", "is required".into()).into()),
    };
    if llms.is_empty() {
        return Err(err("llms", "must list at least one model".into()).into());
    }
    if has_duplicates(&llms) {
        return Err(err("llms", "contains duplicates".into()).into());
    }

    let grader_llm = match obj.get("graderLLM") {
        None | Some(Value::Null) => llms[0].clone(),
        Some(Value::String(s)) => s.parse().map_err(|e| err("graderLLM", e))?,
        Some(_) => return Err(err("graderLLM", "must be a string".into()).into()),
    };

    Ok(TestScenarioConfig {
        n_templates,
        n_retries,
        temperature,
        tokens,
        use_llm_eval,
        llms,
        grader_llm,
    })
}

/// Serializes requirements back to the document form accepted by
/// [`load_requirements`].
pub fn requirements_to_json(reqs: &[EthicalRequirement]) -> Value {
    Value::Array(reqs.iter().map(requirement_to_json).collect())
}

fn requirement_to_json(req: &EthicalRequirement) -> Value {
    let communities: Map<String, Value> = req
        .communities
        .iter()
        .map(|c| {
            let lits: Map<String, Value> = c
                .literals
                .iter()
                .map(|(l, s)| (l.to_string(), Value::String(s.clone())))
                .collect();
            (c.id.clone(), Value::Object(lits))
        })
        .collect();
    serde_json::json!({
        "name": req.name,
        "rationale": req.rationale,
        "languages": req.languages,
        "tolerance": req.tolerance,
        "delta": req.delta,
        "concern": req.concern,
        "communities": communities,
        "inputs": req.inputs,
        "reflections": req.reflections,
    })
}
