//! Line-per-result encoding of pipeline results and their call traces.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{CallRecord, PipelineResult};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// One compact JSON line, without the trailing newline.
pub fn encode_result(result: &PipelineResult) -> String {
    serde_json::to_string(result).expect("result serializes")
}

pub fn decode_result(line: &str) -> Result<PipelineResult, serde_json::Error> {
    serde_json::from_str(line)
}

/// Parses a results file, skipping blank lines.
pub fn parse_results(text: &str) -> Result<Vec<PipelineResult>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| decode_result(l).map_err(|e| TraceError { line: i + 1, message: e.to_string() }))
        .collect()
}

pub fn encode_call(call: &CallRecord) -> String {
    serde_json::to_string(call).expect("call record serializes")
}

pub fn parse_calls(text: &str) -> Result<Vec<CallRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| TraceError { line: i + 1, message: e.to_string() }))
        .collect()
}
