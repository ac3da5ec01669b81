//! The three CSV reports of a run.
//!
//! Every `model` column holds the full `provider/model` identifier so the
//! files join on identical keys.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::pipeline::{EvaluationRecord, ExecutionRecord, GlobalEvaluation};

pub const RESPONSES_HEADER: [&str; 15] = [
    "timestamp_utc",
    "provider",
    "model",
    "requirement",
    "concern",
    "template_id",
    "language",
    "input_type",
    "reflection_type",
    "instance_index",
    "communities",
    "prompt",
    "response",
    "attempts",
    "status",
];

pub const EVALUATIONS_HEADER: [&str; 11] = [
    "model",
    "requirement",
    "template_id",
    "language",
    "input_type",
    "reflection_type",
    "oracle_type",
    "oracle_prediction",
    "verdict",
    "verdict_source",
    "detail",
];

pub const GLOBAL_HEADER: [&str; 11] = [
    "model",
    "requirement",
    "language",
    "input_type",
    "reflection_type",
    "n_total",
    "n_passed",
    "n_failed",
    "n_discarded",
    "pass_pct",
    "fulfilled",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportBundle {
    pub responses_path: PathBuf,
    pub evaluations_path: PathBuf,
    pub global_path: PathBuf,
}

pub fn timestamp_prefix(now: DateTime<Utc>) -> String {
    now.format("%Y%m%d-%H%M%S").to_string()
}

fn bundle_for(out_dir: &Path, prefix: &str) -> ReportBundle {
    ReportBundle {
        responses_path: out_dir.join(format!("{prefix}_responses.csv")),
        evaluations_path: out_dir.join(format!("{prefix}_evaluations.csv")),
        global_path: out_dir.join(format!("{prefix}_global.csv")),
    }
}

/// First prefix (`stamp`, `stamp-1`, `stamp-2`, ...) none of whose three files
/// exist yet.
pub fn free_bundle(out_dir: &Path, now: DateTime<Utc>) -> ReportBundle {
    let stamp = timestamp_prefix(now);
    let taken = |b: &ReportBundle| {
        b.responses_path.exists() || b.evaluations_path.exists() || b.global_path.exists()
    };
    let mut bundle = bundle_for(out_dir, &stamp);
    let mut n = 0;
    while taken(&bundle) {
        n += 1;
        bundle = bundle_for(out_dir, &format!("{stamp}-{n}"));
    }
    bundle
}

/// `100 * passed / (passed + failed)` with two decimals, rounded half-up in
/// integer arithmetic so the result does not depend on float formatting.
pub fn format_pass_pct(n_passed: usize, n_failed: usize) -> String {
    let total = (n_passed + n_failed) as u128;
    if total == 0 {
        return "0.00".into();
    }
    let hundredths = (20_000 * n_passed as u128 + total) / (2 * total);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

fn write_atomic(
    path: &Path,
    rows: impl FnOnce(&mut csv::Writer<&mut NamedTempFile>) -> csv::Result<()>,
) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut tmp);
        rows(&mut w).map_err(|source| ReportError::Csv {
            path: path.to_owned(),
            source,
        })?;
        w.flush().map_err(io)?;
    }
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist_noclobber(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_responses(records: &[ExecutionRecord], path: &Path) -> Result<(), ReportError> {
    write_atomic(path, |w| {
        w.write_record(RESPONSES_HEADER)?;
        for r in records {
            w.write_record([
                r.timestamp.as_str(),
                &r.model.provider,
                &r.model.to_string(),
                &r.requirement,
                &r.concern,
                &r.template_id,
                r.language.as_str(),
                r.input_type.as_str(),
                r.reflection_type.as_str(),
                &r.instance_index.to_string(),
                &r.communities.join(";"),
                &r.prompt,
                &r.response,
                &r.attempts.to_string(),
                r.status.as_str(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_evaluations(evaluations: &[EvaluationRecord], path: &Path) -> Result<(), ReportError> {
    write_atomic(path, |w| {
        w.write_record(EVALUATIONS_HEADER)?;
        for e in evaluations {
            w.write_record([
                e.model.to_string().as_str(),
                &e.requirement,
                &e.template_id,
                e.language.as_str(),
                e.input_type.as_str(),
                e.reflection_type.as_str(),
                e.oracle_type.as_str(),
                &e.oracle_prediction,
                e.verdict.as_str(),
                e.verdict_source.as_str(),
                &e.detail,
            ])?;
        }
        Ok(())
    })
}

pub fn write_global(globals: &[GlobalEvaluation], path: &Path) -> Result<(), ReportError> {
    write_atomic(path, |w| {
        w.write_record(GLOBAL_HEADER)?;
        for g in globals {
            w.write_record([
                g.model.to_string().as_str(),
                &g.requirement,
                g.language.as_str(),
                g.input_type.as_str(),
                g.reflection_type.as_str(),
                &g.n_total.to_string(),
                &g.n_passed.to_string(),
                &g.n_failed.to_string(),
                &g.n_discarded.to_string(),
                &format_pass_pct(g.n_passed, g.n_failed),
                if g.fulfilled { "true" } else { "false" },
            ])?;
        }
        Ok(())
    })
}

/// Writes all three reports under a fresh timestamp prefix in `out_dir`.
pub fn write_reports(
    records: &[ExecutionRecord],
    evaluations: &[EvaluationRecord],
    globals: &[GlobalEvaluation],
    out_dir: &Path,
    now: DateTime<Utc>,
) -> Result<ReportBundle, ReportError> {
    std::fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_owned(),
        source,
    })?;
    let bundle = free_bundle(out_dir, now);
    write_responses(records, &bundle.responses_path)?;
    write_evaluations(evaluations, &bundle.evaluations_path)?;
    write_global(globals, &bundle.global_path)?;
    Ok(bundle)
}

/// Writes `value` as pretty JSON with a trailing newline, atomically.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io)?;
    serde_json::to_writer_pretty(&mut tmp, value).map_err(|e| io(e.into()))?;
    tmp.write_all(b"\n").map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
