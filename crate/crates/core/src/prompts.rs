//! Few-shot demonstration banks and every prompt the pipeline sends.
//!
//! Renderers are pure: identical inputs give identical bytes. The execute
//! renderers only ever see verification questions, never the draft; that
//! isolation is what keeps the factored variants from copying their own
//! hallucinations.
//!
//! # Bank file format
//!
//! UTF-8 text. Records are separated by a line holding only `---`. Inside a
//! record, fields start with a header line `@context:`, `@draft:`,
//! `@evidence:` or `@response:`; text after the colon on the header line
//! and on the following lines (until the next header or separator) is the
//! field body. Lines starting with `#` before the first header of a record
//! are comments.
//!
//! `@draft:` marks text taken from a draft answer. Execute banks are
//! rejected at load time if any record carries it, or if a body contains
//! the `Context:` or `From another source` framing of draft-bearing
//! prompts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::model::{CrossCheckVerdict, PlannerStrategy, Query, TaskKind, VerdictStatus, VerificationQA};

/// Length of the word n-grams used to detect draft text in execute prompts.
pub const ISOLATION_NGRAM: usize = 10;

pub const LIST_ONLY_SUFFIX: &str = "List only the answers separated by a comma";
pub const COT_SUFFIX: &str = "Let's think step by step.";
pub const ANOTHER_SOURCE: &str = "From another source,";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BankStep {
    BaselineGen,
    Plan,
    JointPlanExecute,
    Execute,
    CrossCheck,
    FinalGen,
    /// Atomic-fact extraction for factuality scoring.
    FactExtract,
}

impl BankStep {
    pub fn file_stem(self) -> &'static str {
        match self {
            BankStep::BaselineGen => "baseline",
            BankStep::Plan => "plan",
            BankStep::JointPlanExecute => "joint",
            BankStep::Execute => "execute",
            BankStep::CrossCheck => "crosscheck",
            BankStep::FinalGen => "final",
            BankStep::FactExtract => "facts",
        }
    }

    fn from_stem(stem: &str) -> Option<Self> {
        Some(match stem {
            "baseline" => BankStep::BaselineGen,
            "plan" => BankStep::Plan,
            "joint" => BankStep::JointPlanExecute,
            "execute" => BankStep::Execute,
            "crosscheck" => BankStep::CrossCheck,
            "final" => BankStep::FinalGen,
            "facts" => BankStep::FactExtract,
            _ => return None,
        })
    }

    /// Steps whose banks differ per planner strategy.
    pub fn is_strategy_specific(self) -> bool {
        matches!(self, BankStep::Plan | BankStep::JointPlanExecute)
    }
}

impl fmt::Display for BankStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BankKey {
    pub task_kind: TaskKind,
    pub step: BankStep,
    pub strategy: Option<PlannerStrategy>,
}

impl BankKey {
    pub fn new(task_kind: TaskKind, step: BankStep, strategy: Option<PlannerStrategy>) -> Self {
        let strategy = if step.is_strategy_specific() { strategy } else { None };
        Self { task_kind, step, strategy }
    }

    /// Relative path of the bank file, e.g. `list/plan.open.txt`.
    pub fn file_name(&self) -> String {
        match self.strategy {
            Some(s) => format!("{}/{}.{}.txt", self.task_kind, self.step, s),
            None => format!("{}/{}.txt", self.task_kind, self.step),
        }
    }

    /// Inverse of [`BankKey::file_name`].
    pub fn from_file_name(name: &str) -> Option<Self> {
        let name = name.replace('\\', "/");
        let (task, file) = name.rsplit_once('/')?;
        let task = task.rsplit('/').next()?;
        let task_kind = task.parse().ok()?;
        let stem = file.strip_suffix(".txt")?;
        let (step, strategy) = match stem.split_once('.') {
            Some((step, strat)) => (BankStep::from_stem(step)?, Some(strat.parse().ok()?)),
            None => (BankStep::from_stem(stem)?, None),
        };
        if step.is_strategy_specific() != strategy.is_some() {
            return None;
        }
        Some(Self { task_kind, step, strategy })
    }
}

impl fmt::Display for BankKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.file_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Demonstration {
    pub context: String,
    /// Draft-answer material (a passage, a list, or a single claim).
    pub draft: Option<String>,
    /// Verification Q+A lines shown to the reviser.
    pub evidence: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoBank {
    pub key: BankKey,
    pub demonstrations: Vec<Demonstration>,
}

impl DemoBank {
    pub fn task_kind(&self) -> TaskKind {
        self.key.task_kind
    }

    pub fn step(&self) -> BankStep {
        self.key.step
    }

    /// Parses and validates a bank file body.
    pub fn parse(key: BankKey, text: &str) -> Result<Self, BankError> {
        let demonstrations = parse_records(text).map_err(|(line, message)| BankError::Syntax {
            bank: key.file_name(),
            line,
            message,
        })?;
        let bank = Self { key, demonstrations };
        bank.validate()?;
        Ok(bank)
    }

    /// Serializes back into the bank file format.
    pub fn to_bank_text(&self) -> String {
        let mut out = String::new();
        for (i, demo) in self.demonstrations.iter().enumerate() {
            if i > 0 {
                out.push_str("---\n");
            }
            let mut field = |name: &str, body: &str| {
                out.push('@');
                out.push_str(name);
                out.push_str(":\n");
                out.push_str(body);
                out.push('\n');
            };
            field("context", &demo.context);
            if let Some(d) = &demo.draft {
                field("draft", d);
            }
            if let Some(e) = &demo.evidence {
                field("evidence", e);
            }
            field("response", &demo.response);
        }
        out
    }

    fn validate(&self) -> Result<(), BankError> {
        let bank = self.key.file_name();
        if self.demonstrations.is_empty() {
            return Err(BankError::Empty { bank });
        }
        let step = self.key.step;
        for (i, demo) in self.demonstrations.iter().enumerate() {
            let invalid = |message: &str| BankError::Invalid { bank: bank.clone(), record: i + 1, message: message.to_string() };
            if demo.response.trim().is_empty() && step != BankStep::FactExtract {
                return Err(invalid("empty @response"));
            }
            if demo.context.trim().is_empty() {
                return Err(invalid("empty @context"));
            }
            let needs_draft = matches!(
                step,
                BankStep::Plan | BankStep::JointPlanExecute | BankStep::CrossCheck | BankStep::FinalGen
            );
            if needs_draft && demo.draft.as_deref().is_none_or(|d| d.trim().is_empty()) {
                return Err(invalid("missing @draft"));
            }
            if step == BankStep::FinalGen && demo.evidence.is_none() {
                return Err(invalid("missing @evidence"));
            }
            if step == BankStep::Execute {
                let leaked = demo.draft.is_some()
                    || demo.evidence.is_some()
                    || [&demo.context, &demo.response]
                        .iter()
                        .any(|s| s.contains("Context:") || s.contains("From another source"));
                if leaked {
                    return Err(BankError::DraftInExecuteBank { bank, record: i + 1 });
                }
            }
            if matches!(step, BankStep::BaselineGen | BankStep::Execute) {
                let has_frame = [&demo.context, &demo.response]
                    .iter()
                    .any(|s| s.lines().any(|l| l.trim_start().starts_with("Q:")));
                if has_frame {
                    return Err(invalid("Q: frame inside a demonstration body"));
                }
            }
        }
        Ok(())
    }
}

fn parse_records(text: &str) -> Result<Vec<Demonstration>, (usize, String)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Field {
        Context,
        Draft,
        Evidence,
        Response,
    }

    fn flush(field: Option<Field>, body: &mut Vec<&str>, demo: &mut Demonstration) {
        let Some(field) = field else { return };
        while body.last().is_some_and(|l| l.trim().is_empty()) {
            body.pop();
        }
        let start = body.iter().position(|l| !l.trim().is_empty()).unwrap_or(body.len());
        let value = body[start..].join("\n");
        let value = String::from(value.trim_end());
        match field {
            Field::Context => demo.context = value,
            Field::Draft => demo.draft = Some(value),
            Field::Evidence => demo.evidence = Some(value),
            Field::Response => demo.response = value,
        }
        body.clear();
    }

    let mut out = Vec::new();
    let mut demo = Demonstration::default();
    let mut seen_fields: Vec<Field> = Vec::new();
    let mut field: Option<Field> = None;
    let mut body: Vec<&str> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim() == "---" {
            flush(field.take(), &mut body, &mut demo);
            if seen_fields.is_empty() {
                return Err((line_no, "empty record".to_string()));
            }
            if !seen_fields.contains(&Field::Response) {
                return Err((line_no, "record has no @response".to_string()));
            }
            out.push(core::mem::take(&mut demo));
            seen_fields.clear();
            continue;
        }
        if let Some(rest) = line.strip_prefix('@') {
            let (name, inline) = match rest.split_once(':') {
                Some((n, v)) => (n.trim(), v),
                None => return Err((line_no, format!("malformed header `{line}`"))),
            };
            let next = match name {
                "context" => Field::Context,
                "draft" => Field::Draft,
                "evidence" => Field::Evidence,
                "response" => Field::Response,
                other => return Err((line_no, format!("unknown field @{other}"))),
            };
            if seen_fields.contains(&next) {
                return Err((line_no, format!("duplicate field @{name}")));
            }
            flush(field.take(), &mut body, &mut demo);
            seen_fields.push(next);
            field = Some(next);
            let inline = inline.trim();
            if !inline.is_empty() {
                body.push(inline);
            }
            continue;
        }
        match field {
            Some(_) => body.push(line),
            None if line.trim().is_empty() || line.trim_start().starts_with('#') => {}
            None => return Err((line_no, "text outside of a field".to_string())),
        }
    }
    flush(field.take(), &mut body, &mut demo);
    if !seen_fields.is_empty() {
        if !seen_fields.contains(&Field::Response) {
            return Err((text.lines().count(), "record has no @response".to_string()));
        }
        out.push(demo);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BankError {
    #[error("{bank}:{line}: {message}")]
    Syntax { bank: String, line: usize, message: String },
    #[error("{bank}: bank has no demonstrations")]
    Empty { bank: String },
    #[error("{bank}: record {record}: {message}")]
    Invalid { bank: String, record: usize, message: String },
    #[error("{bank}: record {record} carries draft material in an execute bank")]
    DraftInExecuteBank { bank: String, record: usize },
    #[error("unrecognised bank file name `{0}`")]
    UnknownFile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("no demonstration bank for {0}")]
    MissingBank(BankKey),
    #[error("bank {found} used where {expected} was required")]
    BankMismatch { expected: BankKey, found: BankKey },
    #[error("draft is empty")]
    EmptyDraft,
    #[error("verification question is empty")]
    EmptyQuestion,
    #[error("verification plan is empty")]
    EmptyPlan,
    #[error("verification answer missing for `{0}`")]
    IncompleteQA(String),
    #[error("response is empty")]
    EmptyResponse,
    #[error("{verdicts} verdicts for {qa} verification answers")]
    VerdictMismatch { verdicts: usize, qa: usize },
}

/// All banks available to a run, keyed by (task, step, strategy).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BankSet {
    banks: BTreeMap<BankKey, DemoBank>,
}

macro_rules! builtin_banks {
    ($($path:literal),* $(,)?) => {
        &[$(($path, include_str!(concat!("../banks/", $path)))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin_banks![
    "list/baseline.txt",
    "list/plan.open.txt",
    "list/plan.yesno.txt",
    "list/joint.open.txt",
    "list/joint.yesno.txt",
    "list/joint.rule.txt",
    "list/execute.txt",
    "list/crosscheck.txt",
    "list/final.txt",
    "multispan/baseline.txt",
    "multispan/plan.open.txt",
    "multispan/plan.yesno.txt",
    "multispan/joint.open.txt",
    "multispan/joint.yesno.txt",
    "multispan/execute.txt",
    "multispan/crosscheck.txt",
    "multispan/final.txt",
    "bio/baseline.txt",
    "bio/plan.open.txt",
    "bio/plan.yesno.txt",
    "bio/joint.open.txt",
    "bio/joint.yesno.txt",
    "bio/execute.txt",
    "bio/crosscheck.txt",
    "bio/final.txt",
    "bio/facts.txt",
];

impl BankSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// The demonstration banks shipped with the crate.
    pub fn builtin() -> Self {
        let mut set = Self::new();
        for (name, text) in BUILTIN {
            set.insert_file(name, text).expect("builtin banks are valid");
        }
        set
    }

    /// Parses `text` as the bank named by its relative file path and adds
    /// (or replaces) it.
    pub fn insert_file(&mut self, name: &str, text: &str) -> Result<BankKey, BankError> {
        let key = BankKey::from_file_name(name).ok_or_else(|| BankError::UnknownFile(name.to_string()))?;
        let bank = DemoBank::parse(key, text)?;
        self.banks.insert(key, bank);
        Ok(key)
    }

    pub fn insert(&mut self, bank: DemoBank) {
        self.banks.insert(bank.key, bank);
    }

    pub fn get(
        &self,
        task_kind: TaskKind,
        step: BankStep,
        strategy: Option<PlannerStrategy>,
    ) -> Result<&DemoBank, RenderError> {
        let key = BankKey::new(task_kind, step, strategy);
        self.banks.get(&key).ok_or(RenderError::MissingBank(key))
    }

    pub fn len(&self) -> usize {
        self.banks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DemoBank> {
        self.banks.values()
    }
}

fn expect_bank(bank: &DemoBank, expected: BankKey) -> Result<(), RenderError> {
    if bank.key == expected {
        Ok(())
    } else {
        Err(RenderError::BankMismatch { expected, found: bank.key })
    }
}

fn expect_step(bank: &DemoBank, step: BankStep) -> Result<(), RenderError> {
    if bank.key.step == step {
        Ok(())
    } else {
        Err(RenderError::BankMismatch { expected: BankKey::new(bank.key.task_kind, step, bank.key.strategy), found: bank.key })
    }
}

/// Adds a full stop unless the text already ends in terminal punctuation.
fn as_sentence(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

/// `Q: ...` / `A: ...` lines for a verification pair.
pub fn qa_lines(question: &str, answer: &str) -> String {
    format!("Q: {}\nA: {}", question.trim(), answer.trim())
}

/// Few-shot draft prompt: the demonstrations in `Q:`/`A:` frames, then the
/// query, ending at the answer cue.
pub fn render_baseline(query: &Query, bank: &DemoBank) -> Result<String, RenderError> {
    expect_bank(bank, BankKey::new(query.task_kind, BankStep::BaselineGen, None))?;
    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!("Q: {}\nA: {}\n\n", demo.context, demo.response));
    }
    out.push_str(&format!("Q: {}\nA:", query.text.trim()));
    Ok(out)
}

/// Instruction-style draft prompt without demonstrations.
pub fn render_zero_shot(query: &Query, chain_of_thought: bool) -> String {
    let mut out = String::from(query.text.trim());
    if query.task_kind == TaskKind::ListQA {
        out.push('\n');
        out.push_str(LIST_ONLY_SUFFIX);
    }
    if chain_of_thought {
        out.push('\n');
        out.push_str(COT_SUFFIX);
    }
    out
}

/// Outcome of [`render_plan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanPrompt {
    Prompt(String),
    /// Rule-templated planning needs no model call; the pipeline builds the
    /// questions itself.
    RuleTemplated,
}

/// Planning prompt conditioned on the query and one draft passage.
pub fn render_plan(
    query: &Query,
    passage: &str,
    strategy: PlannerStrategy,
    bank: &DemoBank,
) -> Result<PlanPrompt, RenderError> {
    if strategy == PlannerStrategy::RuleTemplated {
        return Ok(PlanPrompt::RuleTemplated);
    }
    if passage.trim().is_empty() {
        return Err(RenderError::EmptyDraft);
    }
    expect_bank(bank, BankKey::new(query.task_kind, BankStep::Plan, Some(strategy)))?;
    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!(
            "Context: Q: {}\nA: {}\nResponse:\n{}\n\n",
            demo.context,
            demo.draft.as_deref().unwrap_or_default(),
            demo.response
        ));
    }
    out.push_str(&format!("Context: Q: {}\nA: {}\nResponse:", query.text.trim(), passage.trim()));
    Ok(PlanPrompt::Prompt(out))
}

fn question_block(questions: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut out = String::from("Questions:\n");
    for q in questions {
        out.push_str(q.as_ref().trim());
        out.push('\n');
    }
    out
}

/// Joint plan-and-answer prompt. The draft is in context, so answers may
/// copy it; isolation is deliberately not enforced for this variant.
///
/// With rule-templated questions the questions are listed before the
/// response cue and the model only answers them.
pub fn render_joint(
    query: &Query,
    passage: &str,
    strategy: PlannerStrategy,
    rule_questions: &[String],
    bank: &DemoBank,
) -> Result<String, RenderError> {
    if passage.trim().is_empty() {
        return Err(RenderError::EmptyDraft);
    }
    expect_bank(bank, BankKey::new(query.task_kind, BankStep::JointPlanExecute, Some(strategy)))?;
    let rule = strategy == PlannerStrategy::RuleTemplated;
    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!("Context: Q: {}\nA: {}\n", demo.context, demo.draft.as_deref().unwrap_or_default()));
        if rule {
            let qs = demo
                .response
                .lines()
                .filter_map(|l| l.trim_start().strip_prefix("Q:"))
                .map(str::trim);
            out.push_str(&question_block(qs));
        }
        out.push_str(&format!("Response:\n{}\n\n", demo.response));
    }
    out.push_str(&format!("Context: Q: {}\nA: {}\n", query.text.trim(), passage.trim()));
    if rule {
        if rule_questions.is_empty() {
            return Err(RenderError::EmptyPlan);
        }
        out.push_str(&question_block(rule_questions));
    }
    out.push_str("Response:");
    Ok(out)
}

/// Factored execute prompt: demonstrations plus exactly one question.
pub fn render_execute(question: &str, bank: &DemoBank) -> Result<String, RenderError> {
    if question.trim().is_empty() {
        return Err(RenderError::EmptyQuestion);
    }
    expect_step(bank, BankStep::Execute)?;
    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!("Q: {}\nA: {}\n\n", demo.context, demo.response));
    }
    out.push_str(&format!("Q: {}\nA:", question.trim()));
    Ok(out)
}

fn single_line(s: &str) -> String {
    crate::text::normalize_whitespace(s)
}

fn numbered_block(header: &str, items: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for (i, item) in items.into_iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, single_line(item.as_ref())));
    }
    out
}

/// Two-step execute prompt: every planned question in one numbered list,
/// answered as a numbered list. The draft never appears.
pub fn render_execute_2step(questions: &[String], bank: &DemoBank) -> Result<String, RenderError> {
    if questions.is_empty() {
        return Err(RenderError::EmptyPlan);
    }
    if questions.iter().any(|q| q.trim().is_empty()) {
        return Err(RenderError::EmptyQuestion);
    }
    expect_step(bank, BankStep::Execute)?;
    let mut out = numbered_block("Questions:", bank.demonstrations.iter().map(|d| &d.context));
    out.push_str(&numbered_block("Answers:", bank.demonstrations.iter().map(|d| &d.response)));
    out.push('\n');
    out.push_str(&numbered_block("Questions:", questions));
    out.push_str("Answers:");
    Ok(out)
}

/// Cross-check prompt juxtaposing one original claim with an independent
/// verification answer. Ends in a single `Response:` cue.
pub fn render_crosscheck(original_fact: &str, qa: &VerificationQA, bank: &DemoBank) -> Result<String, RenderError> {
    if qa.answer.trim().is_empty() {
        return Err(RenderError::IncompleteQA(qa.planned.question.clone()));
    }
    if qa.planned.question.trim().is_empty() {
        return Err(RenderError::EmptyQuestion);
    }
    if original_fact.trim().is_empty() {
        return Err(RenderError::EmptyDraft);
    }
    expect_step(bank, BankStep::CrossCheck)?;
    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!(
            "Context: {}\n{ANOTHER_SOURCE}\n{}\nResponse: {}\n\n",
            as_sentence(demo.draft.as_deref().unwrap_or_default()),
            demo.context,
            demo.response
        ));
    }
    out.push_str(&format!(
        "Context: {}\n{ANOTHER_SOURCE}\n{}\nResponse:",
        as_sentence(original_fact),
        qa_lines(&qa.planned.question, &qa.answer)
    ));
    Ok(out)
}

/// Final revision prompt for one passage.
///
/// Without verdicts the passage and every Q+A pair are shown. With verdicts
/// (factor+revise) the passage is replaced by the spliced consistent parts
/// and only non-inconsistent Q+A pairs are shown, so refuted claims never
/// reach the reviser.
pub fn render_final(
    query: &Query,
    passage: &str,
    qa: &[VerificationQA],
    verdicts: Option<&[CrossCheckVerdict]>,
    bank: &DemoBank,
) -> Result<String, RenderError> {
    expect_bank(bank, BankKey::new(query.task_kind, BankStep::FinalGen, None))?;
    let (context, evidence): (String, Vec<&VerificationQA>) = match verdicts {
        None => (passage.trim().to_string(), qa.iter().collect()),
        Some(v) => {
            if v.len() != qa.len() {
                return Err(RenderError::VerdictMismatch { verdicts: v.len(), qa: qa.len() });
            }
            let kept: Vec<(&VerificationQA, &CrossCheckVerdict)> =
                qa.iter().zip(v).filter(|(_, v)| v.status != VerdictStatus::Inconsistent).collect();
            let parts: Vec<&str> = kept
                .iter()
                .filter_map(|(_, v)| v.consistent_part.as_deref())
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .collect();
            (parts.join(" "), kept.into_iter().map(|(q, _)| q).collect())
        }
    };

    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!(
            "Context: Q: {}\nA: {}\n",
            demo.context,
            demo.draft.as_deref().unwrap_or_default()
        ));
        if let Some(e) = demo.evidence.as_deref().filter(|e| !e.trim().is_empty()) {
            out.push_str(&format!("{ANOTHER_SOURCE}\n{e}\n"));
        }
        out.push_str(&format!("Response: {}\n\n", demo.response));
    }
    out.push_str(&format!("Context: Q: {}\nA: {}\n", query.text.trim(), context));
    if !evidence.is_empty() {
        out.push_str(ANOTHER_SOURCE);
        out.push('\n');
        for item in evidence {
            out.push_str(&qa_lines(&item.planned.question, &item.answer));
            out.push('\n');
        }
    }
    out.push_str("Response:");
    Ok(out)
}

/// Atomic-fact extraction prompt.
pub fn render_fact_extract(response: &str, bank: &DemoBank) -> Result<String, RenderError> {
    if response.trim().is_empty() {
        return Err(RenderError::EmptyResponse);
    }
    expect_step(bank, BankStep::FactExtract)?;
    let mut out = String::new();
    for demo in &bank.demonstrations {
        out.push_str(&format!("Text: {}\nFacts:\n{}\n\n", demo.context, demo.response));
    }
    out.push_str(&format!("Text: {}\nFacts:", response.trim()));
    Ok(out)
}

/// Yes/no support question for a judge backend, optionally grounded in
/// known reference facts.
pub fn render_judge(fact: &str, knowledge: &[String]) -> String {
    let mut out = String::from("Answer Yes or No.\n");
    if !knowledge.is_empty() {
        out.push_str("Known facts:\n");
        for k in knowledge {
            out.push_str("- ");
            out.push_str(k.trim());
            out.push('\n');
        }
    }
    out.push_str(&format!("Statement: {}\nIs the statement supported? Answer:", fact.trim()));
    out
}
