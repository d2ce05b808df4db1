//! Query templates and the line-per-record dataset format.
//!
//! Each line is one JSON object:
//!
//! ```text
//! {"id":"w1","task":"list","query":"Who are some politicians who were born in Boston?","gold":{"entities":[{"name":"Samuel Adams","aliases":["Sam Adams"]}]}}
//! {"id":"m1","task":"multispan","query":"Who invented the printing press and when?","gold":{"spans":["Johannes Gutenberg","1450"]}}
//! {"id":"b1","task":"bio","query":"Tell me a bio of Marie Curie","gold":{"facts":["Marie Curie was a physicist."],"rarity":"head"}}
//! ```
//!
//! Blank lines are skipped. Gold spans hold at most three tokens.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{GoldEntity, Rarity};
use crate::model::{ConfigError, Query, TaskKind};

pub const MAX_SPAN_TOKENS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("template slot `{0}` is empty")]
    EmptySlot(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    SchemaMismatch { line: usize, message: String },
}

fn slot<'a>(name: &'static str, value: &'a str) -> Result<&'a str, DatasetError> {
    let v = value.trim();
    if v.is_empty() {
        Err(DatasetError::EmptySlot(name))
    } else {
        Ok(v)
    }
}

const WIKIDATA_PREFIX: &str = "Who are some ";
const WIKIDATA_MIDDLE: &str = "s who were born in ";
const CATEGORY_PREFIX: &str = "Name some ";
const BIO_PREFIX: &str = "Tell me a bio of ";

/// "Who are some {profession}s who were born in {city}?"
pub fn make_wikidata_query(profession: &str, city: &str) -> Result<String, DatasetError> {
    let p = slot("profession", profession)?;
    let c = slot("city", city)?;
    Ok(format!("{WIKIDATA_PREFIX}{p}{WIKIDATA_MIDDLE}{c}?"))
}

/// Inverse of [`make_wikidata_query`].
pub fn parse_wikidata_query(query: &str) -> Option<(String, String)> {
    let body = query.strip_prefix(WIKIDATA_PREFIX)?.strip_suffix('?')?;
    let (p, c) = body.split_once(WIKIDATA_MIDDLE)?;
    Some((p.to_string(), c.to_string()))
}

/// "Name some {category}"
pub fn make_category_query(category: &str) -> Result<String, DatasetError> {
    Ok(format!("{CATEGORY_PREFIX}{}", slot("category", category)?))
}

pub fn parse_category_query(query: &str) -> Option<String> {
    query.strip_prefix(CATEGORY_PREFIX).map(ToString::to_string)
}

/// "Tell me a bio of {entity}"
pub fn make_bio_query(entity: &str) -> Result<String, DatasetError> {
    Ok(format!("{BIO_PREFIX}{}", slot("entity", entity)?))
}

pub fn parse_bio_query(query: &str) -> Option<String> {
    query.strip_prefix(BIO_PREFIX).map(ToString::to_string)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Gold {
    Entities(Vec<GoldEntity>),
    Spans(Vec<String>),
    Facts { facts: Vec<String>, rarity: Option<Rarity> },
}

impl Gold {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            Gold::Entities(_) => TaskKind::ListQA,
            Gold::Spans(_) => TaskKind::MultiSpanQA,
            Gold::Facts { .. } => TaskKind::LongformBio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub id: String,
    pub task_kind: TaskKind,
    pub query_text: String,
    pub gold: Gold,
}

impl TaskRecord {
    pub fn to_query(&self) -> Result<Query, ConfigError> {
        Query::new(self.id.clone(), self.query_text.clone(), self.task_kind)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGold {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entities: Option<Vec<GoldEntity>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    facts: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rarity: Option<Rarity>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    task: TaskKind,
    query: String,
    gold: RawGold,
}

fn to_record(raw: RawRecord, line: usize) -> Result<TaskRecord, DatasetError> {
    let bad = |message: String| DatasetError::SchemaMismatch { line, message };
    if raw.id.trim().is_empty() {
        return Err(bad("empty id".into()));
    }
    if raw.query.trim().is_empty() {
        return Err(bad("empty query".into()));
    }
    let RawGold { entities, spans, facts, rarity } = raw.gold;
    let gold = match (raw.task, entities, spans, facts) {
        (TaskKind::ListQA, Some(e), None, None) if rarity.is_none() => {
            if e.is_empty() || e.iter().any(|g| g.name.trim().is_empty()) {
                return Err(bad("list gold needs non-empty entity names".into()));
            }
            Gold::Entities(e)
        }
        (TaskKind::MultiSpanQA, None, Some(s), None) if rarity.is_none() => {
            if s.is_empty() || s.iter().any(|x| x.trim().is_empty()) {
                return Err(bad("multispan gold needs non-empty spans".into()));
            }
            if let Some(long) = s.iter().find(|x| x.split_whitespace().count() > MAX_SPAN_TOKENS) {
                return Err(bad(format!("span `{long}` has more than {MAX_SPAN_TOKENS} tokens")));
            }
            Gold::Spans(s)
        }
        (TaskKind::LongformBio, None, None, Some(f)) => Gold::Facts { facts: f, rarity },
        (task, ..) => return Err(bad(format!("gold shape does not match task `{task}`"))),
    };
    Ok(TaskRecord { id: raw.id, task_kind: raw.task, query_text: raw.query, gold })
}

fn to_raw(record: &TaskRecord) -> RawRecord {
    let mut gold = RawGold::default();
    match &record.gold {
        Gold::Entities(e) => gold.entities = Some(e.clone()),
        Gold::Spans(s) => gold.spans = Some(s.clone()),
        Gold::Facts { facts, rarity } => {
            gold.facts = Some(facts.clone());
            gold.rarity = *rarity;
        }
    }
    RawRecord { id: record.id.clone(), task: record.task_kind, query: record.query_text.clone(), gold }
}

/// Parses a dataset. With `expected` set, every record must be of that
/// task. Any bad line is an error; nothing is dropped.
pub fn parse_dataset(text: &str, expected: Option<TaskKind>) -> Result<Vec<TaskRecord>, DatasetError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        let record = to_record(raw, line_no)?;
        if let Some(task) = expected.filter(|t| *t != record.task_kind) {
            return Err(DatasetError::SchemaMismatch {
                line: line_no,
                message: format!("record is `{}`, dataset is `{task}`", record.task_kind),
            });
        }
        if !ids.insert(record.id.clone()) {
            return Err(DatasetError::SchemaMismatch { line: line_no, message: format!("duplicate id `{}`", record.id) });
        }
        out.push(record);
    }
    Ok(out)
}

/// Canonical serialization: one compact JSON object per line, fixed key
/// order, trailing newline.
pub fn write_dataset(records: &[TaskRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&to_raw(r)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Record counts per task kind.
pub fn count_by_task(records: &[TaskRecord]) -> [(TaskKind, usize); 3] {
    TaskKind::ALL.map(|t| (t, records.iter().filter(|r| r.task_kind == t).count()))
}
