//! Files: datasets, bank overrides, result lines and run manifests.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use cove_core::datasets::{parse_dataset, DatasetError, TaskRecord};
use cove_core::prompts::{BankError, BankSet};
use cove_core::trace::{encode_result, parse_results, TraceError};
use cove_core::{PipelineResult, TaskKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::Effective;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Dataset { path: PathBuf, source: DatasetError },
    #[error("{path}: {source}")]
    Results { path: PathBuf, source: TraceError },
    #[error("{path}: {source}")]
    Bank { path: PathBuf, source: BankError },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Io { path: path.to_path_buf(), message: e.to_string() }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn load_dataset(path: &Path, expected: Option<TaskKind>) -> Result<Vec<TaskRecord>, IoError> {
    let text = read_text(path)?;
    parse_dataset(&text, expected).map_err(|source| IoError::Dataset { path: path.to_path_buf(), source })
}

/// Built-in banks, with any `<task>/<step>[.<strategy>].txt` files under
/// `dir` replacing their built-in counterparts.
pub fn load_banks(dir: Option<&Path>) -> Result<BankSet, IoError> {
    let mut banks = BankSet::builtin();
    let Some(dir) = dir else { return Ok(banks) };
    let mut files = Vec::new();
    for task in TaskKind::ALL {
        let sub = dir.join(task.as_str());
        if !sub.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&sub).map_err(|e| io_err(&sub, e))? {
            let path = entry.map_err(|e| io_err(&sub, e))?.path();
            if path.extension().is_some_and(|x| x == "txt") {
                files.push(path);
            }
        }
    }
    if files.is_empty() {
        return Err(io_err(dir, "no bank files found"));
    }
    files.sort();
    for path in files {
        let name = format!(
            "{}/{}",
            path.parent().and_then(Path::file_name).unwrap_or_default().to_string_lossy(),
            path.file_name().unwrap_or_default().to_string_lossy()
        );
        let text = read_text(&path)?;
        banks.insert_file(&name, &text).map_err(|source| IoError::Bank { path: path.clone(), source })?;
    }
    Ok(banks)
}

/// Results file from either a run directory or a direct path.
pub fn results_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(RESULTS_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_results(path: &Path) -> Result<Vec<PipelineResult>, IoError> {
    let text = read_text(path)?;
    parse_results(&text).map_err(|source| IoError::Results { path: path.to_path_buf(), source })
}

/// Append-only results file; each result is written as one whole line.
pub struct ResultsWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl ResultsWriter {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| io_err(path, e))?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(file) })
    }

    pub fn append(&self, result: &PipelineResult) -> Result<(), IoError> {
        let mut line = encode_result(result);
        line.push('\n');
        let mut f = self.file.lock().expect("results file poisoned");
        f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| io_err(&self.path, e))
    }
}

/// Rewrites `path` with `results` in the given order via a temporary file.
pub fn write_results_atomic(path: &Path, results: &[PipelineResult]) -> Result<(), IoError> {
    let mut text = String::new();
    for r in results {
        text.push_str(&encode_result(r));
        text.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub kind: String,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_sha256: Option<String>,
    pub api_key_set: bool,
}

/// Written once, before the first backend call of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub timestamp: String,
    pub config_hash: String,
    pub config: Effective,
    pub dataset: DatasetInfo,
    pub backend: BackendInfo,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Option<Self>, IoError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = read_text(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| io_err(&path, e))
    }

    pub fn write_new(&self, dir: &Path) -> Result<(), IoError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))
    }
}
