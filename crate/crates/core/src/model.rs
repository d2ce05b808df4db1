//! Shared domain types: queries, pipeline configuration, plans, verdicts and
//! the call trace.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three task families the pipeline is evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Set-valued answers (knowledge-base lists, category lists).
    #[serde(rename = "list")]
    ListQA,
    /// Closed-book questions with several short answer spans.
    #[serde(rename = "multispan")]
    MultiSpanQA,
    /// Longform biographies scored by atomic-fact support.
    #[serde(rename = "bio")]
    LongformBio,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ListQA, TaskKind::MultiSpanQA, TaskKind::LongformBio];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ListQA => "list",
            TaskKind::MultiSpanQA => "multispan",
            TaskKind::LongformBio => "bio",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "list" | "listqa" | "list_qa" => Ok(TaskKind::ListQA),
            "multispan" | "multispanqa" | "multi_span" => Ok(TaskKind::MultiSpanQA),
            "bio" | "longform" | "longformbio" | "longform_bio" => Ok(TaskKind::LongformBio),
            other => Err(ConfigError::UnknownName { kind: "task", name: other.to_string() }),
        }
    }
}

/// A single user query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub task_kind: TaskKind,
}

impl Query {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        task_kind: TaskKind,
    ) -> Result<Self, ConfigError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ConfigError::EmptyQuery);
        }
        Ok(Self { id: id.into(), text, task_kind })
    }
}

/// Execution variant. The first three are single-call baselines that skip
/// planning, execution and revision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    ZeroShot,
    ZeroShotCot,
    Joint,
    TwoStep,
    Factored,
    FactorRevise,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::ZeroShot,
        Variant::ZeroShotCot,
        Variant::Joint,
        Variant::TwoStep,
        Variant::Factored,
        Variant::FactorRevise,
    ];

    /// True for the variants that only produce a draft.
    pub fn is_degenerate(self) -> bool {
        matches!(self, Variant::Baseline | Variant::ZeroShot | Variant::ZeroShotCot)
    }

    /// Variants whose execute prompts must never see the draft.
    pub fn isolates_execution(self) -> bool {
        matches!(self, Variant::TwoStep | Variant::Factored | Variant::FactorRevise)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::ZeroShot => "zero_shot",
            Variant::ZeroShotCot => "zero_shot_cot",
            Variant::Joint => "joint",
            Variant::TwoStep => "two_step",
            Variant::Factored => "factored",
            Variant::FactorRevise => "factor_revise",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | '+' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "baseline" | "fewshot" => Ok(Variant::Baseline),
            "zeroshot" => Ok(Variant::ZeroShot),
            "zeroshotcot" | "cot" => Ok(Variant::ZeroShotCot),
            "joint" => Ok(Variant::Joint),
            "twostep" | "2step" => Ok(Variant::TwoStep),
            "factored" => Ok(Variant::Factored),
            "factorrevise" => Ok(Variant::FactorRevise),
            _ => Err(ConfigError::UnknownName { kind: "variant", name: s.trim().to_string() }),
        }
    }
}

/// How verification questions are produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerStrategy {
    /// Model-generated open questions whose answers are facts.
    #[default]
    OpenGenerated,
    /// Model-generated questions that embed the claim and expect yes/no.
    YesNoGenerated,
    /// "Does X answer the question ..." per listed entity; no planning call.
    RuleTemplated,
}

impl PlannerStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            PlannerStrategy::OpenGenerated => "open",
            PlannerStrategy::YesNoGenerated => "yesno",
            PlannerStrategy::RuleTemplated => "rule",
        }
    }
}

impl fmt::Display for PlannerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerStrategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_', '/'], "").as_str() {
            "open" | "opengenerated" | "general" => Ok(PlannerStrategy::OpenGenerated),
            "yesno" | "yesnogenerated" => Ok(PlannerStrategy::YesNoGenerated),
            "rule" | "ruletemplated" | "rulebased" => Ok(PlannerStrategy::RuleTemplated),
            _ => Err(ConfigError::UnknownName { kind: "planner", name: s.trim().to_string() }),
        }
    }
}

/// What to do when a single factored execute or cross-check call fails.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Abort,
    SkipQuestion,
}

impl FromStr for FailurePolicy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "abort" => Ok(FailurePolicy::Abort),
            "skip" | "skip_question" => Ok(FailurePolicy::SkipQuestion),
            _ => Err(ConfigError::UnknownName { kind: "failure policy", name: s.trim().to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    /// Zero means greedy decoding.
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 512, stop_sequences: Vec::new() }
    }
}

pub const DEFAULT_MAX_QUESTIONS: usize = 10;

/// Everything that determines a run, given a backend and demo banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub planner_strategy: PlannerStrategy,
    pub max_questions: usize,
    pub decoding: DecodingParams,
    /// Maximum simultaneous backend calls within one query.
    pub parallelism: usize,
    /// Only consumed by mock backends.
    pub seed: u64,
    #[serde(default)]
    pub on_failure: FailurePolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Factored,
            planner_strategy: PlannerStrategy::OpenGenerated,
            max_questions: DEFAULT_MAX_QUESTIONS,
            decoding: DecodingParams::default(),
            parallelism: 4,
            seed: 0,
            on_failure: FailurePolicy::Abort,
        }
    }
}

impl PipelineConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
}

/// Checks a configuration. Hard violations are errors; combinations that are
/// legal but partly ignored come back as warnings.
pub fn validate_config(config: &PipelineConfig) -> Result<Vec<String>, ConfigError> {
    if config.max_questions == 0 {
        return Err(ConfigError::InvalidConfig("max_questions must be at least 1".to_string()));
    }
    if config.parallelism == 0 {
        return Err(ConfigError::InvalidConfig("parallelism must be at least 1".to_string()));
    }
    let t = config.decoding.temperature;
    if t.is_nan() || t < 0.0 {
        return Err(ConfigError::InvalidConfig(format!("temperature must be >= 0, got {t}")));
    }
    if config.decoding.max_tokens == 0 {
        return Err(ConfigError::InvalidConfig("max_tokens must be at least 1".to_string()));
    }

    let mut warnings = Vec::new();
    if config.variant.is_degenerate() && config.planner_strategy != PlannerStrategy::default() {
        warnings.push(format!("planner_strategy ignored for {}", variant_title(config.variant)));
    }
    Ok(warnings)
}

fn variant_title(variant: Variant) -> &'static str {
    match variant {
        Variant::Baseline => "Baseline",
        Variant::ZeroShot => "ZeroShot",
        Variant::ZeroShotCot => "ZeroShotCoT",
        Variant::Joint => "Joint",
        Variant::TwoStep => "TwoStep",
        Variant::Factored => "Factored",
        Variant::FactorRevise => "FactorRevise",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedVerification {
    /// The claim from the draft this question checks. Empty when the planner
    /// emitted a bare question.
    pub source_fact: String,
    pub question: String,
    /// Index of the draft passage the claim came from.
    #[serde(default)]
    pub passage: usize,
}

impl PlannedVerification {
    pub fn new(source_fact: impl Into<String>, question: impl Into<String>) -> Self {
        Self { source_fact: source_fact.into(), question: question.into(), passage: 0 }
    }
}

/// Ordered verification questions. At most `max_questions` items, no two
/// with identical questions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPlan {
    pub items: Vec<PlannedVerification>,
    pub truncated: bool,
}

impl VerificationPlan {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Builds a plan from raw items: exact-match dedup on the question (first
    /// occurrence wins), then truncation to `max_questions`.
    pub fn from_items(raw: impl IntoIterator<Item = PlannedVerification>, max_questions: usize) -> Self {
        let mut items: Vec<PlannedVerification> = Vec::new();
        let mut truncated = false;
        for item in raw {
            if item.question.is_empty() || items.iter().any(|i| i.question == item.question) {
                continue;
            }
            if items.len() == max_questions {
                truncated = true;
                break;
            }
            items.push(item);
        }
        Self { items, truncated }
    }

    /// Renders in the planner's line format, one `fact, question` per line.
    pub fn to_plan_text(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            if !item.source_fact.is_empty() {
                out.push_str(&item.source_fact);
                out.push_str(", ");
            }
            out.push_str(&item.question);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationQA {
    pub planned: PlannedVerification,
    /// Verbatim completion for the question.
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Consistent,
    Inconsistent,
    PartiallyConsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossCheckVerdict {
    pub status: VerdictStatus,
    /// Present exactly when the status is not `Inconsistent`.
    pub consistent_part: Option<String>,
}

impl CrossCheckVerdict {
    pub fn inconsistent() -> Self {
        Self { status: VerdictStatus::Inconsistent, consistent_part: None }
    }

    pub fn consistent(part: impl Into<String>) -> Self {
        Self { status: VerdictStatus::Consistent, consistent_part: Some(part.into()) }
    }

    pub fn partial(part: impl Into<String>) -> Self {
        Self { status: VerdictStatus::PartiallyConsistent, consistent_part: Some(part.into()) }
    }
}

/// Pipeline stage that issued a backend call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    BaselineGen,
    Plan,
    Execute,
    CrossCheck,
    FinalGen,
}

impl Step {
    pub fn as_str(self) -> &'static str {
        match self {
            Step::BaselineGen => "baseline_gen",
            Step::Plan => "plan",
            Step::Execute => "execute",
            Step::CrossCheck => "cross_check",
            Step::FinalGen => "final_gen",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One backend call, stored byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub step: Step,
    pub prompt: String,
    pub completion: String,
    pub backend_id: String,
    pub wall_ms: u64,
}

/// Append-only record of every backend call made for one query, plus notes
/// for ignored settings, truncation and parse fallbacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub query: Query,
    pub config: PipelineConfig,
    pub calls: Vec<CallRecord>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl PipelineTrace {
    pub fn new(query: Query, config: PipelineConfig) -> Self {
        Self { query, config, calls: Vec::new(), notes: Vec::new() }
    }

    pub fn query_id(&self) -> &str {
        &self.query.id
    }

    /// Appends a call with the next sequence number.
    pub fn push_call(
        &mut self,
        step: Step,
        prompt: String,
        completion: String,
        backend_id: String,
        wall_ms: u64,
    ) -> u64 {
        let seq = self.calls.len() as u64;
        self.calls.push(CallRecord { seq, step, prompt, completion, backend_id, wall_ms });
        seq
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn count(&self, step: Step) -> usize {
        self.calls.iter().filter(|c| c.step == step).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub baseline_response: String,
    pub plan: VerificationPlan,
    pub qa: Vec<VerificationQA>,
    /// Present only for the factor+revise variant.
    pub verdicts: Option<Vec<CrossCheckVerdict>>,
    pub final_response: String,
    pub trace: PipelineTrace,
}

impl PipelineResult {
    pub fn query_id(&self) -> &str {
        self.trace.query_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn well_formed_config_has_no_warnings() {
        let config = PipelineConfig {
            variant: Variant::Factored,
            planner_strategy: PlannerStrategy::OpenGenerated,
            max_questions: 10,
            parallelism: 4,
            ..PipelineConfig::default()
        };
        assert_eq!(validate_config(&config).unwrap(), Vec::<String>::new());
    }

    #[test]
    fn planner_on_baseline_is_a_warning() {
        let config = PipelineConfig {
            variant: Variant::Baseline,
            planner_strategy: PlannerStrategy::YesNoGenerated,
            ..PipelineConfig::default()
        };
        assert_eq!(
            validate_config(&config).unwrap(),
            vec!["planner_strategy ignored for Baseline".to_string()]
        );
    }

    #[test]
    fn hard_violations_are_rejected() {
        let zero_q = PipelineConfig { variant: Variant::Joint, max_questions: 0, ..Default::default() };
        assert!(matches!(validate_config(&zero_q), Err(ConfigError::InvalidConfig(_))));
        let zero_p = PipelineConfig { parallelism: 0, ..Default::default() };
        assert!(validate_config(&zero_p).is_err());
        let mut neg = PipelineConfig::default();
        neg.decoding.temperature = -0.1;
        assert!(validate_config(&neg).is_err());
        neg.decoding.temperature = f64::NAN;
        assert!(validate_config(&neg).is_err());
    }

    #[test]
    fn validate_does_not_mutate() {
        let config = PipelineConfig { variant: Variant::ZeroShot, planner_strategy: PlannerStrategy::RuleTemplated, ..Default::default() };
        let before = config.clone();
        let _ = validate_config(&config);
        assert_eq!(config, before);
    }

    #[test]
    fn default_decoding_is_greedy() {
        assert_eq!(DecodingParams::default().temperature, 0.0);
    }

    #[test]
    fn names_parse() {
        assert_eq!("factor+revise".parse::<Variant>().unwrap(), Variant::FactorRevise);
        assert_eq!("two-step".parse::<Variant>().unwrap(), Variant::TwoStep);
        assert_eq!("ZeroShotCoT".parse::<Variant>().unwrap(), Variant::ZeroShotCot);
        assert_eq!("yes/no".parse::<PlannerStrategy>().unwrap(), PlannerStrategy::YesNoGenerated);
        assert_eq!("bio".parse::<TaskKind>().unwrap(), TaskKind::LongformBio);
        assert!("sideways".parse::<Variant>().is_err());
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn query_rejects_blank_text() {
        assert_eq!(Query::new("q", "  \n", TaskKind::ListQA), Err(ConfigError::EmptyQuery));
    }

    #[test]
    fn plan_dedups_then_truncates() {
        let raw = ["a?", "b?", "a?", "c?"].map(|q| PlannedVerification::new("", q));
        let plan = VerificationPlan::from_items(raw.clone(), 10);
        assert_eq!(plan.len(), 3);
        assert!(!plan.truncated);
        let plan = VerificationPlan::from_items(raw, 2);
        assert_eq!(plan.items.iter().map(|i| i.question.as_str()).collect::<Vec<_>>(), ["a?", "b?"]);
        assert!(plan.truncated);
    }
}
