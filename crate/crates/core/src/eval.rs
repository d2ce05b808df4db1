//! Metrics and report tables: micro-averaged list precision, multi-span F1,
//! fact-level support scores, and sentence clipping.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest};
use crate::model::{CallRecord, DecodingParams, Step, TaskKind};
use crate::prompts::{self, DemoBank, RenderError};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("query {0} has an empty gold list")]
    EmptyGold(String),
    #[error("no response has any atomic facts")]
    NoFacts,
    #[error("response is empty")]
    EmptyResponse,
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("backend failed: {0}")]
    Backend(#[from] BackendError),
}

/// Lowercases, collapses whitespace and strips leading articles and
/// trailing punctuation. Idempotent.
pub fn normalize_entity(surface: &str) -> String {
    let mut s = text::normalize_whitespace(&surface.to_lowercase());
    loop {
        let before = s.len();
        for article in ["the ", "a ", "an "] {
            if let Some(rest) = s.strip_prefix(article) {
                s = rest.trim_start().to_string();
            }
        }
        let trimmed = s.trim_end_matches(|c: char| c.is_ascii_punctuation() && !matches!(c, ')' | ']' | '%' | '$' | '#' | '&' | '+'));
        let trimmed = trimmed.trim_end();
        if trimmed.len() != s.len() {
            s = trimmed.to_string();
        }
        if s.len() == before {
            return s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEntity {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl GoldEntity {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), aliases: Vec::new() }
    }

    pub fn with_aliases(name: impl Into<String>, aliases: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { name: name.into(), aliases: aliases.into_iter().map(Into::into).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListJudgment {
    pub query_id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<GoldEntity>,
}

impl ListJudgment {
    pub fn new(query_id: impl Into<String>, predicted: Vec<String>, gold: Vec<GoldEntity>) -> Self {
        Self { query_id: query_id.into(), predicted, gold }
    }

    /// True/false positive counts after per-query dedup; aliases of one gold
    /// entity count once.
    pub fn counts(&self) -> Result<(usize, usize), EvalError> {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for (id, g) in self.gold.iter().enumerate() {
            for form in core::iter::once(&g.name).chain(&g.aliases) {
                let n = normalize_entity(form);
                if !n.is_empty() {
                    index.entry(n).or_insert(id);
                }
            }
        }
        if index.is_empty() {
            return Err(EvalError::EmptyGold(self.query_id.clone()));
        }
        let mut hits = BTreeSet::new();
        let mut misses = BTreeSet::new();
        for p in &self.predicted {
            let n = normalize_entity(p);
            if n.is_empty() {
                continue;
            }
            match index.get(&n) {
                Some(&id) => {
                    hits.insert(id);
                }
                None => {
                    misses.insert(n);
                }
            }
        }
        Ok((hits.len(), misses.len()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListScore {
    pub precision: f64,
    pub avg_pos: f64,
    pub avg_neg: f64,
    /// Set when no query produced a prediction; precision is then 0.
    pub no_predictions: bool,
}

/// Micro-averaged precision over all queries, with mean true and false
/// positive counts per query.
pub fn micro_precision(judgments: &[ListJudgment]) -> Result<ListScore, EvalError> {
    let mut tp = 0usize;
    let mut fp = 0usize;
    for j in judgments {
        let (t, f) = j.counts()?;
        tp += t;
        fp += f;
    }
    let n = judgments.len().max(1) as f64;
    let total = tp + fp;
    Ok(ListScore {
        precision: if total == 0 { 0.0 } else { tp as f64 / total as f64 },
        avg_pos: tp as f64 / n,
        avg_neg: fp as f64 / n,
        no_predictions: total == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    /// Exact match over normalized, deduplicated spans.
    pub fn of(pred: &[String], gold: &[String]) -> Self {
        let norm = |xs: &[String]| -> BTreeSet<String> {
            xs.iter().map(|s| normalize_entity(s)).filter(|s| !s.is_empty()).collect()
        };
        let p = norm(pred);
        let g = norm(gold);
        Self { matched: p.intersection(&g).count(), predicted: p.len(), gold: g.len() }
    }

    pub fn score(&self) -> SpanScore {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let denom = self.predicted + self.gold;
        SpanScore {
            f1: ratio(2 * self.matched, denom),
            precision: ratio(self.matched, self.predicted),
            recall: ratio(self.matched, self.gold),
        }
    }
}

impl core::ops::Add for SpanCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { matched: self.matched + o.matched, predicted: self.predicted + o.predicted, gold: self.gold + o.gold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// F1, precision and recall for one question. F1 is `2m / (|pred| + |gold|)`,
/// which equals the harmonic mean of precision and recall.
pub fn multispan_f1(pred_spans: &[String], gold_spans: &[String]) -> SpanScore {
    SpanCounts::of(pred_spans, gold_spans).score()
}

/// Corpus-level scores: counts summed over questions before dividing.
pub fn multispan_corpus(pairs: &[(Vec<String>, Vec<String>)]) -> SpanScore {
    pairs
        .iter()
        .map(|(p, g)| SpanCounts::of(p, g))
        .fold(SpanCounts::default(), |a, b| a + b)
        .score()
}

/// Frequency bucket of the entity a response is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rarity {
    Head,
    Torso,
    Tail,
}

impl Rarity {
    pub const ALL: [Rarity; 3] = [Rarity::Head, Rarity::Torso, Rarity::Tail];

    pub fn as_str(self) -> &'static str {
        match self {
            Rarity::Head => "head",
            Rarity::Torso => "torso",
            Rarity::Tail => "tail",
        }
    }
}

impl fmt::Display for Rarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "head" => Ok(Rarity::Head),
            "torso" => Ok(Rarity::Torso),
            "tail" => Ok(Rarity::Tail),
            other => Err(format!("unknown rarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactJudgment {
    pub response_id: String,
    pub facts: Vec<(String, bool)>,
    #[serde(default)]
    pub rarity: Option<Rarity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactScore {
    /// Mean per-response support rate over responses with at least one
    /// fact, as a percentage.
    pub score: f64,
    /// Mean number of facts over all responses.
    pub avg_facts: f64,
}

pub fn factscore(judgments: &[FactJudgment]) -> Result<FactScore, EvalError> {
    // Sum of per-response rates kept as an exact fraction num/den.
    let mut num: u128 = 0;
    let mut den: u128 = 1;
    let mut float_sum = 0.0;
    let mut exact = true;
    let mut scored = 0usize;
    let mut facts = 0usize;
    for j in judgments {
        facts += j.facts.len();
        if j.facts.is_empty() {
            continue;
        }
        let supported = j.facts.iter().filter(|(_, s)| *s).count() as u128;
        let total = j.facts.len() as u128;
        float_sum += supported as f64 / total as f64;
        scored += 1;
        if exact {
            match add_fraction(num, den, supported, total) {
                Some((n, d)) => (num, den) = (n, d),
                None => exact = false,
            }
        }
    }
    if scored == 0 {
        return Err(EvalError::NoFacts);
    }
    let score = if exact {
        (100 * num) as f64 / (den * scored as u128) as f64
    } else {
        100.0 * float_sum / scored as f64
    };
    Ok(FactScore { score, avg_facts: facts as f64 / judgments.len() as f64 })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn add_fraction(n1: u128, d1: u128, n2: u128, d2: u128) -> Option<(u128, u128)> {
    let g = gcd(d1, d2);
    let den = d1.checked_mul(d2 / g)?;
    let num = n1.checked_mul(den / d1)?.checked_add(n2.checked_mul(den / d2)?)?;
    let r = gcd(num, den).max(1);
    let (num, den) = (num / r, den / r);
    // Keep the final products well inside the exactly representable range.
    (den < 1 << 40 && num < 1 << 40).then_some((num, den))
}

/// Scores per rarity bucket. Buckets with no scoreable response are left
/// out; unlabelled responses are ignored.
pub fn factscore_by_bucket(judgments: &[FactJudgment]) -> BTreeMap<Rarity, FactScore> {
    let mut out = BTreeMap::new();
    for bucket in Rarity::ALL {
        let group: Vec<FactJudgment> = judgments.iter().filter(|j| j.rarity == Some(bucket)).cloned().collect();
        if let Ok(score) = factscore(&group) {
            out.insert(bucket, score);
        }
    }
    out
}

/// Reads `- fact` lines from an extraction completion; falls back to plain
/// non-empty lines when no bullets are present.
pub fn parse_facts(completion: &str) -> Vec<String> {
    let lines: Vec<&str> = completion.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let bulleted: Vec<String> = lines
        .iter()
        .filter_map(|l| l.strip_prefix("- ").or_else(|| l.strip_prefix("* ")).or_else(|| l.strip_prefix("• ")))
        .map(|f| f.trim().to_string())
        .filter(|f| !f.is_empty())
        .collect();
    if !bulleted.is_empty() {
        return bulleted;
    }
    lines.into_iter().map(ToString::to_string).collect()
}

fn record(records: &mut Vec<CallRecord>, prompt: String, completion: &str, backend_id: &str, wall_ms: u64) {
    records.push(CallRecord {
        seq: records.len() as u64,
        step: Step::Execute,
        prompt,
        completion: completion.to_string(),
        backend_id: backend_id.to_string(),
        wall_ms,
    });
}

/// Splits a response into atomic facts with a backend prompt. The call is
/// appended to `records`.
pub fn extract_facts<B: Backend + ?Sized>(
    response: &str,
    backend: &B,
    bank: &DemoBank,
    decoding: &DecodingParams,
    records: &mut Vec<CallRecord>,
) -> Result<Vec<String>, EvalError> {
    if response.trim().is_empty() {
        return Err(EvalError::EmptyResponse);
    }
    let prompt = prompts::render_fact_extract(response, bank)?;
    let request = CompletionRequest::new(Step::Execute, prompt, decoding);
    let completion = backend.complete(&request)?;
    record(records, request.prompt, &completion.text, backend.id(), completion.wall_ms);
    Ok(parse_facts(&completion.text))
}

pub enum JudgeMode<'a> {
    /// Normalized membership in the gold fact set.
    ExactNormalized,
    /// Yes/no question to a judge backend.
    BackendJudge { backend: &'a dyn Backend, decoding: DecodingParams },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub supported: bool,
    pub warning: Option<String>,
}

fn normalize_fact(s: &str) -> String {
    text::normalize_whitespace(&s.to_lowercase()).trim_end_matches(['.', '!', '?', ';', ',']).trim_end().to_string()
}

/// Decides whether `fact` is supported. Paraphrases of gold facts are not
/// recognised in exact mode.
pub fn judge_fact(
    fact: &str,
    gold_facts: &[String],
    mode: &JudgeMode<'_>,
    records: &mut Vec<CallRecord>,
) -> Result<Verdict, EvalError> {
    match mode {
        JudgeMode::ExactNormalized => {
            let f = normalize_fact(fact);
            let supported = gold_facts.iter().any(|g| normalize_fact(g) == f);
            Ok(Verdict { supported, warning: None })
        }
        JudgeMode::BackendJudge { backend, decoding } => {
            let prompt = prompts::render_judge(fact, gold_facts);
            let request = CompletionRequest::new(Step::Execute, prompt, decoding);
            let completion = backend.complete(&request)?;
            record(records, request.prompt, &completion.text, backend.id(), completion.wall_ms);
            let first = completion
                .text
                .split_whitespace()
                .next()
                .unwrap_or("")
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_ascii_lowercase();
            Ok(match first.as_str() {
                "yes" => Verdict { supported: true, warning: None },
                "no" => Verdict { supported: false, warning: None },
                _ => Verdict {
                    supported: false,
                    warning: Some(format!("unparseable judge answer for `{fact}`; counted unsupported")),
                },
            })
        }
    }
}

/// First `n` sentences of `text`, separators preserved. Texts with at most
/// `n` sentences come back unchanged, and clipping twice equals clipping
/// once.
pub fn clip_sentences(text: &str, n: usize) -> &str {
    let mut current = text;
    loop {
        let pieces = text::sentence_pieces(current);
        if pieces.len() <= n {
            return current;
        }
        if n == 0 {
            return "";
        }
        // Cutting can change how a trailing run of initials splits, so
        // repeat until the prefix is stable.
        current = &current[..pieces[n - 1].end];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metrics {
    List(ListScore),
    MultiSpan(SpanScore),
    Bio(FactScore),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub rarity: Rarity,
    pub score: FactScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_kind: TaskKind,
    /// Row label, usually the variant name.
    pub label: String,
    pub items: usize,
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buckets: Vec<BucketScore>,
    /// Run metadata such as config and dataset hashes.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn new(task_kind: TaskKind, label: impl Into<String>, items: usize, metrics: Metrics) -> Self {
        Self {
            task_kind,
            label: label.into(),
            items,
            metrics,
            buckets: Vec::new(),
            meta: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn header(task: TaskKind, with_buckets: bool) -> Vec<String> {
    let mut cols: Vec<&str> = match task {
        TaskKind::ListQA => alloc::vec!["Method", "Prec.", "Pos.", "Neg."],
        TaskKind::MultiSpanQA => alloc::vec!["Method", "F1", "Prec.", "Rec."],
        TaskKind::LongformBio => alloc::vec!["Method", "FactScore", "Avg. # facts"],
    };
    if with_buckets {
        cols.extend(["Head", "Torso", "Tail"]);
    }
    cols.into_iter().map(String::from).collect()
}

fn row(report: &EvalReport, with_buckets: bool) -> Vec<String> {
    let mut cells = alloc::vec![report.label.clone()];
    match &report.metrics {
        Metrics::List(s) => cells.extend([format!("{:.2}", s.precision), format!("{:.2}", s.avg_pos), format!("{:.2}", s.avg_neg)]),
        Metrics::MultiSpan(s) => cells.extend([format!("{:.2}", s.f1), format!("{:.2}", s.precision), format!("{:.2}", s.recall)]),
        Metrics::Bio(s) => cells.extend([format!("{:.1}", s.score), format!("{:.1}", s.avg_facts)]),
    }
    if with_buckets {
        for r in Rarity::ALL {
            let cell = report.buckets.iter().find(|b| b.rarity == r).map(|b| format!("{:.1}", b.score.score));
            cells.push(cell.unwrap_or_else(|| "-".to_string()));
        }
    }
    cells
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            let pad = width[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.extend(core::iter::repeat_n(' ', pad));
            } else {
                line.push_str("  ");
                line.extend(core::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if i == 0 {
            let total: usize = width.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            out.extend(core::iter::repeat_n('-', total));
            out.push('\n');
        }
    }
    out
}

/// Aligned plain-text table, one block per task kind, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for task in TaskKind::ALL {
        let group: Vec<&EvalReport> = reports.iter().filter(|r| r.task_kind == task).collect();
        if group.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let with_buckets = group.iter().any(|r| !r.buckets.is_empty());
        let mut rows = alloc::vec![header(task, with_buckets)];
        rows.extend(group.iter().map(|r| row(r, with_buckets)));
        out.push_str(&format!("[{task}]\n"));
        out.push_str(&align(&rows));
    }
    out
}
