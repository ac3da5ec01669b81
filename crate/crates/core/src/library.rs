//! Prompt-template library stored as CSV.
//!
//! Columns: `id, concern, language, input_type, reflection_type, prefix,
//! prompt, output_formatting, oracle_type, oracle_prediction`. The last column
//! holds the oracle prediction as embedded JSON.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markup::{check_template_markups, parse_markups};
use crate::oracle::{validate_prediction, OraclePrediction, OracleType};
use crate::requirements::{EthicalRequirement, InputType, LanguageCode, ReflectionType};

/// The seed library bundled with the crate.
pub const SEED_LIBRARY: &str = include_str!("../data/library.csv");

pub const COLUMNS: [&str; 10] = [
    "id",
    "concern",
    "language",
    "input_type",
    "reflection_type",
    "prefix",
    "prompt",
    "output_formatting",
    "oracle_type",
    "oracle_prediction",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: String,
    pub concern: String,
    pub language: LanguageCode,
    pub input_type: InputType,
    pub reflection_type: ReflectionType,
    pub prefix: Option<String>,
    pub prompt: String,
    pub output_formatting: String,
    pub oracle_type: OracleType,
    pub oracle_prediction: OraclePrediction,
}

/// `record` is the 1-based data row (the header is row 0).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LibraryError {
    #[error("library header: {0}")]
    Header(String),
    #[error("library record {record}{}: {message}", id.as_deref().map(|i| format!(" (id `{i}`)")).unwrap_or_default())]
    Record {
        record: usize,
        id: Option<String>,
        message: String,
    },
    #[error("library: {0}")]
    Io(String),
}

pub fn load_library_file(path: &Path) -> Result<Vec<PromptTemplate>, LibraryError> {
    let file = std::fs::File::open(path)
        .map_err(|e| LibraryError::Io(format!("{}: {e}", path.display())))?;
    load_library(file)
}

pub fn load_library_str(text: &str) -> Result<Vec<PromptTemplate>, LibraryError> {
    load_library(text.as_bytes())
}

/// Reads and validates every template, stopping at the first invalid record.
pub fn load_library<R: Read>(reader: R) -> Result<Vec<PromptTemplate>, LibraryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| LibraryError::Header(e.to_string()))?
        .clone();
    let mut index = [0usize; COLUMNS.len()];
    for (slot, col) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == col)
            .ok_or_else(|| LibraryError::Header(format!("missing column `{col}`")))?;
    }
    if let Some(extra) = headers.iter().find(|h| !COLUMNS.contains(&h.trim())) {
        return Err(LibraryError::Header(format!("unknown column `{extra}`")));
    }

    let mut out: Vec<PromptTemplate> = Vec::new();
    let mut keys: HashSet<(String, LanguageCode)> = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let record = i + 1;
        let row = row.map_err(|e| LibraryError::Record {
            record,
            id: None,
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(index[c]).unwrap_or("");
        let id = field(0).trim().to_owned();
        let fail = |message: String| LibraryError::Record {
            record,
            id: (!id.is_empty()).then(|| id.clone()),
            message,
        };

        let template = parse_row(&id, &field).map_err(fail)?;
        if !keys.insert((template.template_id.clone(), template.language.clone())) {
            return Err(fail(format!(
                "duplicate template id for language {}",
                template.language
            )));
        }
        out.push(template);
    }
    Ok(out)
}

fn parse_row<'a>(id: &str, field: &impl Fn(usize) -> &'a str) -> Result<PromptTemplate, String> {
    if id.is_empty() {
        return Err("id must not be empty".into());
    }
    let concern = field(1).trim();
    if concern.is_empty() {
        return Err("concern must not be empty".into());
    }
    let language: LanguageCode = field(2).parse()?;
    let input_type: InputType = field(3).parse()?;
    let reflection_type: ReflectionType = field(4).parse()?;
    let prefix = Some(field(5))
        .filter(|p| !p.trim().is_empty())
        .map(str::to_owned);
    let prompt = field(6);
    if prompt.trim().is_empty() {
        return Err("prompt must not be empty".into());
    }
    let markups = parse_markups(prompt).map_err(|e| format!("prompt: {e}"))?;
    check_template_markups(&markups).map_err(|e| format!("prompt: {e}"))?;
    let oracle_type: OracleType = field(8).parse()?;
    let oracle_prediction =
        validate_prediction(field(9), oracle_type).map_err(|e| e.to_string())?;

    Ok(PromptTemplate {
        template_id: id.to_owned(),
        concern: concern.to_owned(),
        language,
        input_type,
        reflection_type,
        prefix,
        prompt: prompt.to_owned(),
        output_formatting: field(7).to_owned(),
        oracle_type,
        oracle_prediction,
    })
}

/// Writes templates back in library CSV form.
pub fn write_library<W: std::io::Write>(
    templates: &[PromptTemplate],
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    w.write_record(COLUMNS)?;
    for t in templates {
        w.write_record([
            t.template_id.as_str(),
            &t.concern,
            t.language.as_str(),
            t.input_type.as_str(),
            t.reflection_type.as_str(),
            t.prefix.as_deref().unwrap_or(""),
            &t.prompt,
            &t.output_formatting,
            t.oracle_type.as_str(),
            &t.oracle_prediction.to_json_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// First `n` templates, in library order, matching the requirement's concern,
/// the given language, and the requirement's input and reflection filters.
pub fn select_templates<'a>(
    library: &'a [PromptTemplate],
    req: &EthicalRequirement,
    language: &LanguageCode,
    n: usize,
) -> Vec<&'a PromptTemplate> {
    library
        .iter()
        .filter(|t| {
            t.concern == req.concern
                && t.language == *language
                && req.inputs.contains(&t.input_type)
                && req.reflections.contains(&t.reflection_type)
        })
        .take(n)
        .collect()
}
