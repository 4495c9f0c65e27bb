//! Files written by the experiments: per-generation CSV rows, token JSONL,
//! summary tables and small JSON documents.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use steerlab_core::synthmetrics::FeatureVector;

use crate::error::{HarnessError, Result};
use crate::runner::RunResult;

/// Columns of `results.csv` ahead of the feature columns.
pub const RESULT_COLUMNS: [&str; 12] = [
    "experiment",
    "attribute",
    "prompt",
    "lambda",
    "layer",
    "strategy",
    "direction",
    "seed",
    "n_events",
    "bpm_symbolic",
    "bpm_audio",
    "centroid",
];

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn empty(path: &Path) -> HarnessError {
    HarnessError::Experiment(format!("refusing to write {} without rows", path.display()))
}

/// One row per generation; the feature columns are empty when the clip had
/// no features.
pub fn write_results(path: &Path, rows: &[RunResult]) -> Result<()> {
    if rows.is_empty() {
        return Err(empty(path));
    }
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<&str> = RESULT_COLUMNS.iter().copied().chain(FeatureVector::NAMES).collect();
    w.write_record(&header)?;
    for r in rows {
        let m = &r.metrics;
        let mut rec = vec![
            r.experiment.clone(),
            r.attribute.clone(),
            r.prompt.to_string(),
            r.lambda.to_string(),
            r.layer.to_string(),
            r.strategy.clone(),
            r.direction.label().to_string(),
            r.seed.to_string(),
            m.n_events.to_string(),
            m.bpm_symbolic.to_string(),
            m.bpm_audio.to_string(),
            m.centroid.to_string(),
        ];
        match &m.features {
            Some(f) => rec.extend(f.to_array().iter().map(|v| v.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), FeatureVector::NAMES.len())),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// One line of `tokens.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLine {
    pub prompt: usize,
    pub seed: u64,
    pub tokens: Vec<usize>,
}

pub fn write_tokens(path: &Path, rows: &[RunResult]) -> Result<()> {
    if rows.is_empty() {
        return Err(empty(path));
    }
    ensure_parent(path)?;
    let mut buf = Vec::new();
    for r in rows {
        let line = TokenLine {
            prompt: r.prompt,
            seed: r.seed,
            tokens: r.tokens.clone(),
        };
        serde_json::to_writer(&mut buf, &line).map_err(steerlab_core::Error::from)?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
}

pub fn read_tokens(path: &Path) -> Result<Vec<TokenLine>> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TokenLine = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Experiment(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

/// A table of serializable rows with a header taken from the field names.
pub fn write_table<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    if rows.is_empty() {
        return Err(empty(path));
    }
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_table<D: DeserializeOwned>(path: &Path) -> Result<Vec<D>> {
    if !path.exists() {
        return Err(HarnessError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<D>, _>>()?;
    Ok(rows)
}

/// Raw records with the header row first.
pub fn write_records(path: &Path, header: &[String], records: &[Vec<String>]) -> Result<()> {
    if records.is_empty() {
        return Err(empty(path));
    }
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    if !path.exists() {
        return Err(HarnessError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    ensure_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value).map_err(steerlab_core::Error::from)?;
    bytes.push(b'\n');
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Experiment(format!("{}: {e}", path.display())))
}
