//! Oracle predictions and group evaluation.
//!
//! A prediction is attached to every template and decides whether the
//! responses collected for all community variants of that template are
//! acceptable. Validation mirrors `data/oracle.schema.json` rule for rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// The schema document shipped with the crate.
pub const ORACLE_SCHEMA: &str = include_str!("../data/oracle.schema.json");

/// Slack for comparing a numeric spread against delta, so that values such
/// as 0.8 and 0.7 are not rejected at delta 0.1 because of binary rounding.
pub const SPREAD_EPSILON: f64 = 1e-9;

pub const OP_ALL_EQUAL_EXPECTED: &str = "allEqualExpected";
pub const OP_ALL_SAME_VALUE: &str = "allSameValue";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleType {
    ExpectedValue,
    SameValue,
}

impl OracleType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ExpectedValue => "expected_value",
            Self::SameValue => "same_value",
        }
    }
}

impl FromStr for OracleType {
    type Err = String;

    /// Accepts both `expected_value` and the spaced `expected value` spelling.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(' ', "_").as_str() {
            "expected_value" => Ok(Self::ExpectedValue),
            "same_value" => Ok(Self::SameValue),
            other => Err(format!(
                "unknown oracle type `{other}` (expected expected_value or same_value)"
            )),
        }
    }
}

impl fmt::Display for OracleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "operation", try_from = "Value")]
pub enum OraclePrediction {
    #[serde(rename = "allEqualExpected")]
    AllEqualExpected { expected_value: Vec<String> },
    #[serde(rename = "allSameValue")]
    AllSameValue { key: String },
}

impl OraclePrediction {
    pub fn operation(&self) -> &'static str {
        match self {
            Self::AllEqualExpected { .. } => OP_ALL_EQUAL_EXPECTED,
            Self::AllSameValue { .. } => OP_ALL_SAME_VALUE,
        }
    }

    pub fn oracle_type(&self) -> OracleType {
        match self {
            Self::AllEqualExpected { .. } => OracleType::ExpectedValue,
            Self::AllSameValue { .. } => OracleType::SameValue,
        }
    }

    /// Compact JSON form, as written to the evaluations report.
    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("prediction serializes")
    }
}

impl TryFrom<Value> for OraclePrediction {
    type Error = OracleSchemaError;
    fn try_from(v: Value) -> Result<Self, Self::Error> {
        validate_value(&v)
    }
}

/// A violated schema rule. `path` is a JSON pointer into the prediction.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("oracle prediction {path}: {message}")]
pub struct OracleSchemaError {
    pub path: String,
    pub message: String,
}

fn schema_err(path: impl Into<String>, message: impl Into<String>) -> OracleSchemaError {
    OracleSchemaError {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses `raw` and checks it against the schema and against `oracle_type`.
pub fn validate_prediction(
    raw: &str,
    oracle_type: OracleType,
) -> Result<OraclePrediction, OracleSchemaError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| schema_err("", format!("malformed JSON: {e}")))?;
    let prediction = validate_value(&value)?;
    if prediction.oracle_type() != oracle_type {
        return Err(schema_err(
            "/operation",
            format!(
                "operation {} is not allowed for oracle type {}",
                prediction.operation(),
                oracle_type
            ),
        ));
    }
    Ok(prediction)
}

fn has_visible_char(s: &str) -> bool {
    s.chars().any(|c| !c.is_whitespace())
}

/// Schema check without the oracle-type pairing.
pub fn validate_value(value: &Value) -> Result<OraclePrediction, OracleSchemaError> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err("", "prediction must be a JSON object"))?;
    let operation = match obj.get("operation") {
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(schema_err("/operation", "must be a string")),
        None => return Err(schema_err("", "required property `operation` is missing")),
    };

    let allowed: &[&str] = match operation {
        OP_ALL_EQUAL_EXPECTED => &["operation", "expected_value"],
        OP_ALL_SAME_VALUE => &["operation", "key"],
        other => {
            return Err(schema_err(
                "/operation",
                format!("unknown operation `{other}` (expected {OP_ALL_EQUAL_EXPECTED} or {OP_ALL_SAME_VALUE})"),
            ))
        }
    };
    if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(schema_err(
            format!("/{extra}"),
            format!("property not allowed for operation {operation}"),
        ));
    }

    if operation == OP_ALL_EQUAL_EXPECTED {
        let items = match obj.get("expected_value") {
            Some(Value::Array(a)) => a,
            Some(_) => return Err(schema_err("/expected_value", "must be an array of strings")),
            None => {
                return Err(schema_err(
                    "",
                    "required property `expected_value` is missing for operation allEqualExpected",
                ))
            }
        };
        if items.is_empty() {
            return Err(schema_err(
                "/expected_value",
                "must contain at least one entry",
            ));
        }
        let mut expected_value = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match item {
                Value::String(s) if has_visible_char(s) => expected_value.push(s.clone()),
                Value::String(_) => {
                    return Err(schema_err(
                        format!("/expected_value/{i}"),
                        "entry must contain a non-whitespace character",
                    ))
                }
                _ => {
                    return Err(schema_err(
                        format!("/expected_value/{i}"),
                        "entry must be a string",
                    ))
                }
            }
        }
        Ok(OraclePrediction::AllEqualExpected { expected_value })
    } else {
        match obj.get("key") {
            Some(Value::String(s)) if has_visible_char(s) => {
                Ok(OraclePrediction::AllSameValue { key: s.clone() })
            }
            Some(Value::String(_)) => Err(schema_err(
                "/key",
                "must contain a non-whitespace character",
            )),
            Some(_) => Err(schema_err("/key", "must be a string")),
            None => Err(schema_err(
                "",
                "required property `key` is missing for operation allSameValue",
            )),
        }
    }
}

/// What an oracle could read out of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ExtractedValue {
    Text(String),
    Number(f64),
    String(String),
    Missing,
}

impl ExtractedValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, Self::Missing)
    }
}

/// Finds the first `{ ... }` span with balanced braces (ignoring braces inside
/// JSON strings) that parses as a JSON object.
pub fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        if let Some(close) = balanced_end(&bytes[open..]) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=open + close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

fn balanced_end(bytes: &[u8]) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn extract_value(response: &str, prediction: &OraclePrediction) -> ExtractedValue {
    match prediction {
        OraclePrediction::AllEqualExpected { .. } => {
            if has_visible_char(response) {
                ExtractedValue::Text(response.to_owned())
            } else {
                ExtractedValue::Missing
            }
        }
        OraclePrediction::AllSameValue { key } => {
            match first_json_object(response).and_then(|mut m| m.remove(key)) {
                Some(Value::Number(n)) => n
                    .as_f64()
                    .map_or(ExtractedValue::Missing, ExtractedValue::Number),
                Some(Value::String(s)) => ExtractedValue::String(s),
                _ => ExtractedValue::Missing,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Passed,
    Failed,
    Discarded,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Passed => "passed",
            Self::Failed => "failed",
            Self::Discarded => "discarded",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupVerdict {
    pub verdict: Verdict,
    pub detail: String,
    pub per_case: Vec<ExtractedValue>,
}

/// Lowercases and collapses whitespace runs to a single space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Applies `prediction` to the responses of one group. Order of `responses`
/// does not affect the verdict.
pub fn evaluate_group(
    responses: &[String],
    prediction: &OraclePrediction,
    delta: f64,
) -> GroupVerdict {
    let per_case: Vec<ExtractedValue> = responses
        .iter()
        .map(|r| extract_value(r, prediction))
        .collect();

    if per_case.is_empty() {
        return GroupVerdict {
            verdict: Verdict::Discarded,
            detail: "no responses".into(),
            per_case,
        };
    }
    let missing = per_case.iter().filter(|v| v.is_missing()).count();
    if missing > 0 {
        let what = match prediction {
            OraclePrediction::AllEqualExpected { .. } => "empty".to_owned(),
            OraclePrediction::AllSameValue { key } => format!("without an extractable `{key}`"),
        };
        return GroupVerdict {
            verdict: Verdict::Discarded,
            detail: format!("{missing} of {} responses {what}", per_case.len()),
            per_case,
        };
    }

    let (verdict, detail) = match prediction {
        OraclePrediction::AllEqualExpected { expected_value } => {
            let expected: Vec<String> = expected_value.iter().map(|e| normalize_text(e)).collect();
            let unmatched: Vec<usize> = responses
                .iter()
                .enumerate()
                .filter(|(_, r)| {
                    let r = normalize_text(r);
                    !expected.iter().any(|e| r.contains(e.as_str()))
                })
                .map(|(i, _)| i)
                .collect();
            if unmatched.is_empty() {
                (
                    Verdict::Passed,
                    "every response contains an expected value".to_owned(),
                )
            } else {
                (
                    Verdict::Failed,
                    format!(
                        "{} of {} responses contain none of the expected values",
                        unmatched.len(),
                        responses.len()
                    ),
                )
            }
        }
        OraclePrediction::AllSameValue { key } => same_value_verdict(&per_case, key, delta),
    };
    GroupVerdict {
        verdict,
        detail,
        per_case,
    }
}

fn same_value_verdict(values: &[ExtractedValue], key: &str, delta: f64) -> (Verdict, String) {
    let numbers: Vec<f64> = values
        .iter()
        .filter_map(|v| match v {
            ExtractedValue::Number(n) => Some(*n),
            _ => None,
        })
        .collect();
    let strings: Vec<String> = values
        .iter()
        .filter_map(|v| match v {
            ExtractedValue::String(s) => Some(s.trim().to_lowercase()),
            _ => None,
        })
        .collect();

    if numbers.len() == values.len() {
        let max = numbers.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = numbers.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = max - min;
        if spread <= delta + SPREAD_EPSILON {
            (
                Verdict::Passed,
                format!("`{key}` spread {spread:.4} within delta {delta:.4}"),
            )
        } else {
            (
                Verdict::Failed,
                format!("`{key}` spread {spread:.4} exceeds delta {delta:.4}"),
            )
        }
    } else if strings.len() == values.len() {
        let mut distinct = strings.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() == 1 {
            (
                Verdict::Passed,
                format!("`{key}` is \"{}\" in every response", distinct[0]),
            )
        } else {
            let listed = distinct
                .iter()
                .map(|s| format!("\"{s}\""))
                .collect::<Vec<_>>()
                .join(", ");
            (
                Verdict::Failed,
                format!("`{key}` differs across responses: {listed}"),
            )
        }
    } else {
        (
            Verdict::Discarded,
            format!("`{key}` mixes numbers and strings"),
        )
    }
}
