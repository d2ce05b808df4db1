//! Orchestration of draft, plan, execute, cross-check and revise, plus the
//! parsers that turn completions back into structured values.
//!
//! Call counts per query, with `P` draft passages (1 except for bios),
//! `k` planned questions and `c` answered questions:
//!
//! | variant        | calls                        |
//! |----------------|------------------------------|
//! | baseline-like  | 1                            |
//! | joint          | 1 + P + P                    |
//! | two-step       | 1 + P + min(k, 1) + P        |
//! | factored       | 1 + P + k + P                |
//! | factor+revise  | 1 + P + k + c + P            |
//!
//! The rule-templated planner builds its questions locally, so its plan
//! term is 0 for every variant except joint.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::backend::{Backend, BackendError, CompletionRequest};
use crate::model::{
    validate_config, ConfigError, CrossCheckVerdict, FailurePolicy, PipelineConfig, PipelineResult,
    PipelineTrace, PlannedVerification, PlannerStrategy, Query, Step, TaskKind, Variant, VerdictStatus,
    VerificationQA,
};
pub use crate::model::VerificationPlan;
use crate::prompts::{self, BankSet, BankStep, PlanPrompt, RenderError};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("baseline response is empty")]
    EmptyBaseline,
    #[error("backend failed during {step}: {source}")]
    Backend { step: Step, source: BackendError },
    #[error("{0}")]
    NotApplicable(String),
}

/// Runs one query through the configured variant.
pub fn run<B: Backend + ?Sized>(
    query: &Query,
    config: &PipelineConfig,
    backend: &B,
    banks: &BankSet,
) -> Result<PipelineResult, PipelineError> {
    let warnings = validate_config(config)?;
    let mut run = Run { query, config, backend, banks, trace: PipelineTrace::new(query.clone(), config.clone()) };
    for w in warnings {
        run.trace.note(w);
    }
    run.execute()
}

struct Run<'a, B: ?Sized> {
    query: &'a Query,
    config: &'a PipelineConfig,
    backend: &'a B,
    banks: &'a BankSet,
    trace: PipelineTrace,
}

impl<B: Backend + ?Sized> Run<'_, B> {
    fn call(&mut self, step: Step, prompt: String) -> Result<String, PipelineError> {
        let request = CompletionRequest::new(step, prompt, &self.config.decoding);
        let completion = self.backend.complete(&request).map_err(|source| PipelineError::Backend { step, source })?;
        self.trace.push_call(step, request.prompt, completion.text.clone(), self.backend.id().to_string(), completion.wall_ms);
        Ok(completion.text)
    }

    /// Issues `prompts` as one batch and records them in request order.
    fn call_batch(&mut self, step: Step, prompts: Vec<String>) -> Vec<Result<String, BackendError>> {
        let requests: Vec<CompletionRequest> =
            prompts.into_iter().map(|p| CompletionRequest::new(step, p, &self.config.decoding)).collect();
        let results = self.backend.complete_batch(&requests, self.config.parallelism);
        let mut out = Vec::with_capacity(results.len());
        for (request, result) in requests.into_iter().zip(results) {
            match result {
                Ok(c) => {
                    self.trace.push_call(step, request.prompt, c.text.clone(), self.backend.id().to_string(), c.wall_ms);
                    out.push(Ok(c.text));
                }
                Err(e) => out.push(Err(e)),
            }
        }
        out
    }

    fn bank(&self, step: BankStep, strategy: Option<PlannerStrategy>) -> Result<&prompts::DemoBank, RenderError> {
        self.banks.get(self.query.task_kind, step, strategy)
    }

    fn execute(mut self) -> Result<PipelineResult, PipelineError> {
        let variant = self.config.variant;
        let strategy = self.config.planner_strategy;
        if variant.is_degenerate() {
            if !self.trace.notes.iter().any(|n| n.starts_with("planner_strategy")) {
                self.trace.note(format!("planner_strategy ignored for {variant}"));
            }
            let prompt = match variant {
                Variant::Baseline => prompts::render_baseline(self.query, self.bank(BankStep::BaselineGen, None)?)?,
                v => prompts::render_zero_shot(self.query, v == Variant::ZeroShotCot),
            };
            let draft = self.call(Step::BaselineGen, prompt)?;
            return Ok(PipelineResult {
                baseline_response: draft.clone(),
                plan: VerificationPlan::default(),
                qa: Vec::new(),
                verdicts: None,
                final_response: draft,
                trace: self.trace,
            });
        }
        if strategy == PlannerStrategy::RuleTemplated && self.query.task_kind != TaskKind::ListQA {
            return Err(PipelineError::NotApplicable(format!(
                "rule-templated planning is defined only for list questions, not {}",
                self.query.task_kind
            )));
        }

        let prompt = prompts::render_baseline(self.query, self.bank(BankStep::BaselineGen, None)?)?;
        let draft = self.call(Step::BaselineGen, prompt)?;
        if draft.trim().is_empty() {
            return Err(PipelineError::EmptyBaseline);
        }
        let passages: Vec<String> =
            split_passages(&draft, self.query.task_kind).into_iter().map(|p| p.trim().to_string()).collect();

        let (plan, mut qa) = if variant == Variant::Joint {
            self.joint(&draft, &passages)?
        } else {
            let plan = self.plan(&draft, &passages)?;
            let qa = match variant {
                Variant::TwoStep => self.execute_two_step(&plan)?,
                _ => self.execute_factored(&plan)?,
            };
            (plan, qa)
        };
        if plan.is_empty() {
            self.trace.note("verification plan is empty");
        }

        let verdicts = if variant == Variant::FactorRevise {
            Some(self.cross_check(&passages, &mut qa)?)
        } else {
            None
        };

        let mut finals = Vec::with_capacity(passages.len());
        for (p, passage) in passages.iter().enumerate() {
            let idx: Vec<usize> = (0..qa.len()).filter(|&i| qa[i].planned.passage == p).collect();
            let local_qa: Vec<VerificationQA> = idx.iter().map(|&i| qa[i].clone()).collect();
            let local_verdicts: Option<Vec<CrossCheckVerdict>> = match &verdicts {
                Some(v) if !idx.is_empty() => Some(idx.iter().map(|&i| v[i].clone()).collect()),
                _ => None,
            };
            let prompt = prompts::render_final(
                self.query,
                passage,
                &local_qa,
                local_verdicts.as_deref(),
                self.bank(BankStep::FinalGen, None)?,
            )?;
            let revised = self.call(Step::FinalGen, prompt)?;
            finals.push(revised.trim().to_string());
        }
        let final_response = finals.into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");

        Ok(PipelineResult { baseline_response: draft, plan, qa, verdicts, final_response, trace: self.trace })
    }

    fn rule_plan(&mut self, draft: &str) -> Result<VerificationPlan, PipelineError> {
        let entities = parse_list_answer(draft);
        let plan = build_rule_plan(&entities, self.query, self.config.max_questions)?;
        if plan.truncated {
            self.trace.note(format!("verification plan truncated to {} questions", self.config.max_questions));
        }
        Ok(plan)
    }

    fn plan(&mut self, draft: &str, passages: &[String]) -> Result<VerificationPlan, PipelineError> {
        let strategy = self.config.planner_strategy;
        if strategy == PlannerStrategy::RuleTemplated {
            return self.rule_plan(draft);
        }
        let mut raw = Vec::new();
        let mut truncated = false;
        for (p, passage) in passages.iter().enumerate() {
            let bank = self.bank(BankStep::Plan, Some(strategy))?;
            let PlanPrompt::Prompt(prompt) = prompts::render_plan(self.query, passage, strategy, bank)? else {
                unreachable!("rule strategy handled above")
            };
            let completion = self.call(Step::Plan, prompt)?;
            let (parsed, warnings) = parse_plan(&completion, usize::MAX);
            for w in warnings {
                self.trace.note(w);
            }
            truncated |= parsed.truncated;
            raw.extend(parsed.items.into_iter().map(|mut item| {
                item.passage = p;
                item
            }));
        }
        let mut plan = VerificationPlan::from_items(raw, self.config.max_questions);
        plan.truncated |= truncated;
        if plan.truncated {
            self.trace.note(format!("verification plan truncated to {} questions", self.config.max_questions));
        }
        Ok(plan)
    }

    fn joint(
        &mut self,
        draft: &str,
        passages: &[String],
    ) -> Result<(VerificationPlan, Vec<VerificationQA>), PipelineError> {
        let strategy = self.config.planner_strategy;
        let rule_plan = if strategy == PlannerStrategy::RuleTemplated { Some(self.rule_plan(draft)?) } else { None };
        let mut pairs: Vec<VerificationQA> = Vec::new();
        for (p, passage) in passages.iter().enumerate() {
            let rule_questions: Vec<String> = rule_plan
                .iter()
                .flat_map(|plan| plan.items.iter().filter(|i| i.passage == p).map(|i| i.question.clone()))
                .collect();
            if rule_plan.is_some() && rule_questions.is_empty() {
                continue;
            }
            let bank = self.bank(BankStep::JointPlanExecute, Some(strategy))?;
            let prompt = prompts::render_joint(self.query, passage, strategy, &rule_questions, bank)?;
            let completion = self.call(Step::Execute, prompt)?;
            let parsed = parse_joint(&completion);
            match &rule_plan {
                Some(plan) => {
                    let items = plan.items.iter().filter(|i| i.passage == p);
                    for (n, item) in items.enumerate() {
                        let answer = parsed.get(n).map(|(_, a)| a.clone()).unwrap_or_default();
                        if answer.is_empty() {
                            self.trace.note(format!("no joint answer for `{}`", item.question));
                        }
                        pairs.push(VerificationQA { planned: item.clone(), answer });
                    }
                }
                None => {
                    for (question, answer) in parsed {
                        let mut planned = PlannedVerification::new("", question);
                        planned.passage = p;
                        pairs.push(VerificationQA { planned, answer });
                    }
                }
            }
        }
        if let Some(plan) = rule_plan {
            return Ok((plan, pairs));
        }
        let plan = VerificationPlan::from_items(pairs.iter().map(|q| q.planned.clone()), self.config.max_questions);
        if plan.truncated {
            self.trace.note(format!("verification plan truncated to {} questions", self.config.max_questions));
        }
        let mut kept = Vec::with_capacity(plan.len());
        for item in &plan.items {
            if let Some(pos) = pairs.iter().position(|q| q.planned.question == item.question) {
                kept.push(pairs.swap_remove(pos));
            }
        }
        Ok((plan, kept))
    }

    fn execute_two_step(&mut self, plan: &VerificationPlan) -> Result<Vec<VerificationQA>, PipelineError> {
        if plan.is_empty() {
            return Ok(Vec::new());
        }
        let questions: Vec<String> = plan.items.iter().map(|i| i.question.clone()).collect();
        let prompt = prompts::render_execute_2step(&questions, self.bank(BankStep::Execute, None)?)?;
        let completion = self.call(Step::Execute, prompt)?;
        let answers = parse_numbered_answers(&completion, questions.len());
        let mut out = Vec::with_capacity(plan.len());
        for (item, answer) in plan.items.iter().zip(answers) {
            if answer.is_empty() {
                self.trace.note(format!("no two-step answer for `{}`", item.question));
            }
            out.push(VerificationQA { planned: item.clone(), answer });
        }
        Ok(out)
    }

    fn execute_factored(&mut self, plan: &VerificationPlan) -> Result<Vec<VerificationQA>, PipelineError> {
        let bank = self.bank(BankStep::Execute, None)?;
        let prompts: Vec<String> =
            plan.items.iter().map(|i| prompts::render_execute(&i.question, bank)).collect::<Result<_, _>>()?;
        let results = self.call_batch(Step::Execute, prompts);
        let mut out = Vec::with_capacity(plan.len());
        for (item, result) in plan.items.iter().zip(results) {
            match result {
                Ok(answer) => out.push(VerificationQA { planned: item.clone(), answer: answer.trim().to_string() }),
                Err(source) => match self.config.on_failure {
                    FailurePolicy::Abort => return Err(PipelineError::Backend { step: Step::Execute, source }),
                    FailurePolicy::SkipQuestion => {
                        self.trace.note(format!("skipped `{}`: {source}", item.question));
                    }
                },
            }
        }
        Ok(out)
    }

    fn cross_check(
        &mut self,
        passages: &[String],
        qa: &mut Vec<VerificationQA>,
    ) -> Result<Vec<CrossCheckVerdict>, PipelineError> {
        let bank = self.bank(BankStep::CrossCheck, None)?;
        let fact_of = |q: &VerificationQA| -> String {
            if q.planned.source_fact.trim().is_empty() {
                passages.get(q.planned.passage).cloned().unwrap_or_default()
            } else {
                q.planned.source_fact.clone()
            }
        };
        let mut prompts_out = Vec::new();
        let mut checked = Vec::new();
        for (i, q) in qa.iter().enumerate() {
            if q.answer.trim().is_empty() {
                continue;
            }
            prompts_out.push(prompts::render_crosscheck(&fact_of(q), q, bank)?);
            checked.push(i);
        }
        let results = self.call_batch(Step::CrossCheck, prompts_out);

        let mut verdicts: Vec<Option<CrossCheckVerdict>> = (0..qa.len()).map(|_| None).collect();
        let mut dropped = Vec::new();
        for (&i, result) in checked.iter().zip(results) {
            match result {
                Ok(completion) => {
                    let (mut verdict, warning) = parse_crosscheck(&completion);
                    if let Some(w) = warning {
                        self.trace.note(w);
                    }
                    if verdict.consistent_part.as_deref().is_some_and(|p| p.trim().is_empty()) {
                        verdict.consistent_part = Some(fact_of(&qa[i]));
                    }
                    verdicts[i] = Some(verdict);
                }
                Err(source) => match self.config.on_failure {
                    FailurePolicy::Abort => return Err(PipelineError::Backend { step: Step::CrossCheck, source }),
                    FailurePolicy::SkipQuestion => {
                        self.trace.note(format!("skipped cross-check of `{}`: {source}", qa[i].planned.question));
                        dropped.push(i);
                    }
                },
            }
        }
        for (i, v) in verdicts.iter_mut().enumerate() {
            if v.is_none() && !dropped.contains(&i) {
                self.trace.note(format!("no answer to cross-check for `{}`", qa[i].planned.question));
                *v = Some(CrossCheckVerdict::inconsistent());
            }
        }
        let mut out = Vec::with_capacity(qa.len());
        let mut kept = Vec::with_capacity(qa.len());
        for (i, (q, v)) in core::mem::take(qa).into_iter().zip(verdicts).enumerate() {
            if dropped.contains(&i) {
                continue;
            }
            kept.push(q);
            out.push(v.expect("filled above"));
        }
        *qa = kept;
        Ok(out)
    }
}

/// Splits a draft into the passages verified and revised independently:
/// sentences for biographies, the whole text otherwise. Joining the pieces
/// reconstructs the input.
pub fn split_passages(text: &str, task_kind: TaskKind) -> Vec<&str> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    match task_kind {
        TaskKind::LongformBio => text::sentence_pieces(text).into_iter().map(|r| &text[r]).collect(),
        _ => alloc::vec![text],
    }
}

/// One templated question per entity: "Does X answer the question Q?".
pub fn build_rule_plan(
    entities: &[String],
    query: &Query,
    max_questions: usize,
) -> Result<VerificationPlan, PipelineError> {
    if query.task_kind != TaskKind::ListQA {
        return Err(PipelineError::NotApplicable(format!(
            "rule-templated questions need a list question, got {}",
            query.task_kind
        )));
    }
    let q = query.text.trim().trim_end_matches('?').trim_end();
    let items = entities
        .iter()
        .map(|e| e.trim())
        .filter(|e| !e.is_empty())
        .map(|e| PlannedVerification::new(e, format!("Does {e} answer the question {q}?")));
    Ok(VerificationPlan::from_items(items, max_questions))
}

const INTERROGATIVES: &[&str] = &[
    "who", "whom", "whose", "what", "when", "where", "which", "why", "how", "is", "are", "was", "were",
    "do", "does", "did", "has", "have", "had", "can", "could", "will", "would", "should", "may", "might",
];

const PREPOSITIONS: &[&str] = &["in", "on", "at", "during", "for", "from", "to", "by", "with", "of", "after", "before"];

fn lower_word(w: &str) -> String {
    w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn starts_question(segment: &str) -> bool {
    let mut words = segment.split_whitespace().map(lower_word);
    match words.next() {
        Some(w) if INTERROGATIVES.contains(&w.as_str()) => true,
        Some(w) if PREPOSITIONS.contains(&w.as_str()) => {
            words.next().is_some_and(|n| matches!(n.as_str(), "which" | "what" | "whom" | "whose"))
        }
        _ => false,
    }
}

/// Removes a leading enumeration marker such as `1.`, `2)`, `-`, `*`, `•`.
fn strip_enumeration(s: &str) -> &str {
    let t = s.trim_start();
    for bullet in ["- ", "* ", "• ", "– "] {
        if let Some(rest) = t.strip_prefix(bullet) {
            return rest.trim_start();
        }
    }
    if t == "-" || t == "*" || t == "•" {
        return "";
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits < 4 {
        let rest = &t[digits..];
        for mark in [". ", ") ", ": "] {
            if let Some(r) = rest.strip_prefix(mark) {
                return r.trim_start();
            }
        }
        if rest == "." || rest == ")" {
            return "";
        }
    }
    t
}

/// Parses a planning completion. Each line is either `fact, question` or a
/// bare question; a line of comma-separated questions yields one item per
/// question. Never fails: unparseable text gives an empty plan and a
/// warning.
pub fn parse_plan(completion: &str, max_questions: usize) -> (VerificationPlan, Vec<String>) {
    let mut raw = Vec::new();
    for line in completion.lines() {
        let line = strip_enumeration(line.trim());
        let line = line.strip_prefix("Response:").map(str::trim_start).unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let segments: Vec<&str> = line.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if segments.is_empty() {
            continue;
        }
        if segments.len() > 1 && segments.iter().all(|s| s.ends_with('?')) {
            raw.extend(segments.into_iter().map(|q| PlannedVerification::new("", q)));
            continue;
        }
        let split = (1..segments.len()).rev().find(|&i| starts_question(segments[i])).unwrap_or(segments.len() - 1);
        let fact = segments[..split].join(", ");
        let question = segments[split..].join(", ");
        raw.push(PlannedVerification::new(fact, question));
    }
    let mut warnings = Vec::new();
    if raw.is_empty() && !completion.trim().is_empty() {
        warnings.push("planner output contained no questions".to_string());
    }
    let plan = VerificationPlan::from_items(raw, max_questions);
    if plan.truncated {
        warnings.push(format!("verification plan truncated to {max_questions} questions"));
    }
    (plan, warnings)
}

/// Reads the verdict label at the start of a cross-check completion. An
/// unrecognised label counts as inconsistent and comes back with a warning.
pub fn parse_crosscheck(completion: &str) -> (CrossCheckVerdict, Option<String>) {
    let mut body = completion.trim();
    if body.len() >= 9 && body[..9].eq_ignore_ascii_case("response:") {
        body = body[9..].trim_start();
    }
    let normalized: String = body
        .chars()
        .take(32)
        .map(|c| if c == '-' || c == '_' { ' ' } else { c.to_ascii_uppercase() })
        .collect();
    let labels = [
        ("PARTIALLY CONSISTENT", VerdictStatus::PartiallyConsistent),
        ("INCONSISTENT", VerdictStatus::Inconsistent),
        ("CONSISTENT", VerdictStatus::Consistent),
    ];
    for (label, status) in labels {
        if !normalized.starts_with(label) {
            continue;
        }
        let after = &normalized[label.len()..];
        if after.starts_with(|c: char| c.is_alphanumeric()) {
            continue;
        }
        let rest = body[label.len()..].trim_start_matches(['.', ':', ' ', '\t', '\n', '\r']).trim();
        let verdict = match status {
            VerdictStatus::Inconsistent => CrossCheckVerdict::inconsistent(),
            VerdictStatus::Consistent => CrossCheckVerdict::consistent(rest),
            VerdictStatus::PartiallyConsistent => CrossCheckVerdict::partial(rest),
        };
        return (verdict, None);
    }
    let excerpt: String = body.chars().take(40).collect();
    (CrossCheckVerdict::inconsistent(), Some(format!("unrecognised cross-check verdict `{excerpt}`; treated as inconsistent")))
}

/// Splits a list answer on commas and newlines, stripping enumeration
/// markers and surrounding quotes. Order is kept; duplicates are kept.
pub fn parse_list_answer(completion: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in completion.lines() {
        for piece in line.split(',') {
            let item = strip_enumeration(piece.trim());
            let item = item
                .trim()
                .trim_matches(|c: char| matches!(c, '"' | '\'' | '“' | '”' | '‘' | '’' | '`'))
                .trim();
            if !item.is_empty() {
                out.push(item.to_string());
            }
        }
    }
    out
}

/// Parses interleaved `Q:` / `A:` lines. Lines without a cue continue the
/// previous field; a trailing question without an answer gets an empty one.
pub fn parse_joint(completion: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut in_answer = false;
    for line in completion.lines() {
        let t = line.trim();
        if let Some(q) = t.strip_prefix("Q:") {
            out.push((q.trim().to_string(), String::new()));
            in_answer = false;
        } else if let Some(a) = t.strip_prefix("A:") {
            match out.last_mut() {
                Some(last) if !in_answer => last.1 = a.trim().to_string(),
                _ => continue,
            }
            in_answer = true;
        } else if !t.is_empty() {
            if let Some(last) = out.last_mut() {
                let field = if in_answer { &mut last.1 } else { &mut last.0 };
                if !field.is_empty() {
                    field.push(' ');
                }
                field.push_str(t);
            }
        }
    }
    out.retain(|(q, _)| !q.is_empty());
    out
}

/// Reads `n` numbered answers (`1. ...`). Missing numbers give empty
/// strings. Without any numbering, non-empty lines are taken in order.
pub fn parse_numbered_answers(completion: &str, n: usize) -> Vec<String> {
    let mut out = alloc::vec![String::new(); n];
    let mut numbered = false;
    let mut current: Option<usize> = None;
    for line in completion.lines() {
        let t = line.trim();
        let digits = t.bytes().take_while(u8::is_ascii_digit).count();
        let marker = (digits > 0)
            .then(|| t[digits..].strip_prefix('.').or_else(|| t[digits..].strip_prefix(')')))
            .flatten();
        if let Some(rest) = marker {
            numbered = true;
            let idx: usize = t[..digits].parse().unwrap_or(0);
            current = (1..=n).contains(&idx).then(|| idx - 1);
            if let Some(i) = current {
                out[i] = rest.trim().to_string();
            }
        } else if let (Some(i), false) = (current, t.is_empty()) {
            if !out[i].is_empty() {
                out[i].push(' ');
            }
            out[i].push_str(t);
        }
    }
    if !numbered {
        let lines: Vec<&str> = completion.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        for (slot, line) in out.iter_mut().zip(lines) {
            *slot = line.to_string();
        }
    }
    out
}

/// Execute-step records sharing a word 10-gram with the draft, as
/// `(seq, first shared n-gram)`.
pub fn isolation_violations(result: &PipelineResult) -> Vec<(u64, String)> {
    result
        .trace
        .calls
        .iter()
        .filter(|c| c.step == Step::Execute)
        .filter_map(|c| {
            text::shared_ngrams(&result.baseline_response, &c.prompt, prompts::ISOLATION_NGRAM)
                .into_iter()
                .next()
                .map(|g| (c.seq, g))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FnBackend;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn plan_line_with_fact() {
        let (plan, w) = parse_plan("The war ran 1846–1848, When did the Mexican American war start and end?", 10);
        assert!(w.is_empty());
        assert_eq!(plan.items, vec![PlannedVerification::new("The war ran 1846–1848", "When did the Mexican American war start and end?")]);
    }

    #[test]
    fn plan_flat_question_list() {
        let (plan, _) = parse_plan("Where was A born?, Where was B born?, Where was A born?", 10);
        assert_eq!(plan.len(), 2);
        assert!(plan.items.iter().all(|i| i.source_fact.is_empty()));
    }

    #[test]
    fn plan_fact_containing_commas() {
        let (plan, _) = parse_plan("Hillary Clinton, born in Chicago, Illinois, Where was Hillary Clinton born?", 10);
        assert_eq!(plan.items[0].source_fact, "Hillary Clinton, born in Chicago, Illinois");
        assert_eq!(plan.items[0].question, "Where was Hillary Clinton born?");
        let (plan, _) = parse_plan("Ada was born in 1815, In which year was Ada born?", 10);
        assert_eq!(plan.items[0].question, "In which year was Ada born?");
    }

    #[test]
    fn plan_empty_and_truncated() {
        let (plan, w) = parse_plan("", 10);
        assert!(plan.is_empty() && !plan.truncated && w.is_empty());
        let text: String = (0..5).map(|i| format!("Where was P{i} born?\n")).collect();
        let (plan, w) = parse_plan(&text, 3);
        assert_eq!(plan.len(), 3);
        assert!(plan.truncated);
        assert_eq!(w.len(), 1);
        let (plan, w) = parse_plan("\n - \n", 3);
        assert!(plan.is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn crosscheck_labels() {
        assert_eq!(parse_crosscheck("INCONSISTENT.").0, CrossCheckVerdict::inconsistent());
        assert_eq!(
            parse_crosscheck("PARTIALLY CONSISTENT. Texas declared independence in 1836").0,
            CrossCheckVerdict::partial("Texas declared independence in 1836")
        );
        assert_eq!(parse_crosscheck("consistent. Donald Trump").0, CrossCheckVerdict::consistent("Donald Trump"));
        assert_eq!(parse_crosscheck("Response: Partially-Consistent: x").0, CrossCheckVerdict::partial("x"));
        let (v, w) = parse_crosscheck("maybe");
        assert_eq!(v, CrossCheckVerdict::inconsistent());
        assert!(w.is_some());
        assert!(parse_crosscheck("CONSISTENTLY wrong").1.is_some());
    }

    #[test]
    fn list_answers() {
        assert_eq!(
            parse_list_answer("Hillary Clinton, Donald Trump, Michael Bloomberg"),
            ["Hillary Clinton", "Donald Trump", "Michael Bloomberg"]
        );
        assert_eq!(parse_list_answer("1. A\n2. B"), ["A", "B"]);
        assert_eq!(parse_list_answer("- \"A\"\n* 'B', C,, \n"), ["A", "B", "C"]);
        assert!(parse_list_answer("").is_empty());
    }

    #[test]
    fn rule_plan() {
        let q = Query::new("m", "Name some cities in Massachusetts", TaskKind::ListQA).unwrap();
        let plan = build_rule_plan(&["Boston".into(), "Quincy".into()], &q, 10).unwrap();
        assert_eq!(plan.items[0].question, "Does Boston answer the question Name some cities in Massachusetts?");
        assert_eq!(plan.len(), 2);
        assert_eq!(build_rule_plan(&["X".into(), "X".into()], &q, 10).unwrap().len(), 1);
        assert!(build_rule_plan(&[], &q, 10).unwrap().is_empty());
        let bio = Query::new("b", "Tell me a bio of X", TaskKind::LongformBio).unwrap();
        assert!(matches!(build_rule_plan(&[], &bio, 10), Err(PipelineError::NotApplicable(_))));
    }

    #[test]
    fn passages() {
        assert_eq!(split_passages("A. B. C.", TaskKind::LongformBio).len(), 3);
        assert_eq!(split_passages("A. B. C.", TaskKind::ListQA), ["A. B. C."]);
        assert!(split_passages("", TaskKind::LongformBio).is_empty());
        let t = "J. F. Kennedy Jr. was born in 1960. He died in 1999.";
        assert_eq!(split_passages(t, TaskKind::LongformBio).concat(), t);
        assert_eq!(split_passages(t, TaskKind::LongformBio).len(), 2);
    }

    #[test]
    fn joint_parsing() {
        let parsed = parse_joint("Q: Where was A born?\nA: Paris\nQ: Where was B born?\nA: Rome,\nItaly\nQ: Where was C born?");
        assert_eq!(
            parsed,
            vec![
                ("Where was A born?".to_string(), "Paris".to_string()),
                ("Where was B born?".to_string(), "Rome, Italy".to_string()),
                ("Where was C born?".to_string(), String::new()),
            ]
        );
    }

    #[test]
    fn numbered_answers() {
        assert_eq!(parse_numbered_answers("1. Paris\n2. Rome\n", 3), ["Paris", "Rome", ""]);
        assert_eq!(parse_numbered_answers("2) Rome\n1) Paris", 2), ["Paris", "Rome"]);
        assert_eq!(parse_numbered_answers("Paris\nRome", 2), ["Paris", "Rome"]);
    }

    fn list_backend() -> impl Backend {
        FnBackend::new("fn", |r: &CompletionRequest| {
            Ok(match r.step {
                Step::BaselineGen => "Alpha One, Beta Two".to_string(),
                Step::Plan => "Alpha One, Where was Alpha One born?\nBeta Two, Where was Beta Two born?".to_string(),
                Step::Execute if r.prompt.contains("Answers:") => "1. Boston\n2. Chicago".to_string(),
                Step::Execute => "Boston".to_string(),
                Step::CrossCheck => "CONSISTENT.".to_string(),
                Step::FinalGen => "Alpha One".to_string(),
            })
        })
    }

    fn list_query() -> Query {
        Query::new("q1", "Who are some politicians who were born in Boston?", TaskKind::ListQA).unwrap()
    }

    #[test]
    fn call_counts_per_variant() {
        let banks = BankSet::builtin();
        let expected = [
            (Variant::Baseline, 1),
            (Variant::ZeroShot, 1),
            (Variant::ZeroShotCot, 1),
            (Variant::Joint, 3),
            (Variant::TwoStep, 4),
            (Variant::Factored, 5),
            (Variant::FactorRevise, 7),
        ];
        for (variant, calls) in expected {
            let cfg = PipelineConfig::with_variant(variant);
            let r = run(&list_query(), &cfg, &list_backend(), &banks).unwrap();
            assert_eq!(r.trace.calls.len(), calls, "{variant}");
            let seqs: Vec<u64> = r.trace.calls.iter().map(|c| c.seq).collect();
            assert_eq!(seqs, (0..calls as u64).collect::<Vec<_>>());
            if variant.isolates_execution() {
                assert!(isolation_violations(&r).is_empty());
            }
        }
    }

    #[test]
    fn degenerate_variant_returns_draft() {
        let cfg = PipelineConfig { planner_strategy: PlannerStrategy::YesNoGenerated, ..PipelineConfig::with_variant(Variant::Baseline) };
        let r = run(&list_query(), &cfg, &list_backend(), &BankSet::builtin()).unwrap();
        assert_eq!(r.final_response, r.baseline_response);
        assert!(r.plan.is_empty() && r.qa.is_empty() && r.verdicts.is_none());
        assert!(r.trace.notes.iter().any(|n| n.contains("planner_strategy ignored")));
    }

    #[test]
    fn factor_revise_verdicts_align() {
        let cfg = PipelineConfig::with_variant(Variant::FactorRevise);
        let r = run(&list_query(), &cfg, &list_backend(), &BankSet::builtin()).unwrap();
        let v = r.verdicts.unwrap();
        assert_eq!(v.len(), r.qa.len());
        assert_eq!(v[0].consistent_part.as_deref(), Some("Alpha One"));
    }

    #[test]
    fn empty_baseline_rejected() {
        let b = FnBackend::new("fn", |_: &CompletionRequest| Ok("   ".to_string()));
        let cfg = PipelineConfig::with_variant(Variant::Factored);
        assert_eq!(run(&list_query(), &cfg, &b, &BankSet::builtin()).unwrap_err(), PipelineError::EmptyBaseline);
        let cfg = PipelineConfig::with_variant(Variant::Baseline);
        assert!(run(&list_query(), &cfg, &b, &BankSet::builtin()).is_ok());
    }

    #[test]
    fn backend_error_carries_step() {
        let b = FnBackend::new("fn", |r: &CompletionRequest| match r.step {
            Step::Execute => Err(BackendError::Unavailable { attempts: 3, message: "down".into() }),
            _ => list_backend().complete(r).map(|c| c.text),
        });
        let cfg = PipelineConfig::with_variant(Variant::Factored);
        let err = run(&list_query(), &cfg, &b, &BankSet::builtin()).unwrap_err();
        assert!(matches!(err, PipelineError::Backend { step: Step::Execute, .. }));

        let cfg = PipelineConfig { on_failure: FailurePolicy::SkipQuestion, ..cfg };
        let r = run(&list_query(), &cfg, &b, &BankSet::builtin()).unwrap();
        assert!(r.qa.is_empty());
        assert_eq!(r.trace.notes.iter().filter(|n| n.starts_with("skipped")).count(), 2);
    }

    #[test]
    fn rule_strategy_skips_plan_call() {
        let cfg = PipelineConfig {
            planner_strategy: PlannerStrategy::RuleTemplated,
            ..PipelineConfig::with_variant(Variant::Factored)
        };
        let r = run(&list_query(), &cfg, &list_backend(), &BankSet::builtin()).unwrap();
        assert_eq!(r.trace.count(Step::Plan), 0);
        assert_eq!(r.trace.count(Step::Execute), 2);
        assert!(r.plan.items[0].question.starts_with("Does Alpha One answer the question"));

        let bio = Query::new("b", "Tell me a bio of X", TaskKind::LongformBio).unwrap();
        assert!(matches!(run(&bio, &cfg, &list_backend(), &BankSet::builtin()), Err(PipelineError::NotApplicable(_))));
    }

    #[test]
    fn config_errors_surface() {
        let cfg = PipelineConfig { max_questions: 0, ..PipelineConfig::default() };
        assert!(matches!(run(&list_query(), &cfg, &list_backend(), &BankSet::builtin()), Err(PipelineError::Config(_))));
    }
}
