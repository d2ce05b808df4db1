//! Deterministic backend answering from a list of prompt-matching rules.
//!
//! Script files are TOML:
//!
//! ```toml
//! id = "politicians"        # optional, default "scripted"
//! delay_ms = 10      # optional simulated latency per call
//!
//! [[rule]]
//! match = "contains" # exact | contains | regex
//! pattern = "Q: Where was Hillary Clinton born?\nA:"
//! completion = "Chicago, Illinois"
//! priority = 0       # optional; higher wins, ties go to the earlier rule
//! ```
//!
//! Rules see the full rendered prompt, demonstrations included, so patterns
//! usually anchor on the final frame (`\z` in regex rules).

use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use cove_core::{Backend, BackendError, Completion, CompletionRequest};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::map_bounded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Matcher {
    #[serde(rename = "exact", alias = "ExactPrompt")]
    ExactPrompt,
    #[serde(rename = "contains", alias = "ContainsSubstring")]
    ContainsSubstring,
    #[serde(rename = "regex", alias = "RegexPattern")]
    RegexPattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub pattern: String,
    pub completion: String,
    #[serde(default)]
    pub priority: i64,
}

impl ScriptedRule {
    pub fn new(matcher: Matcher, pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        Self { matcher, pattern: pattern.into(), completion: completion.into(), priority: 0 }
    }

    pub fn exact(pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        Self::new(Matcher::ExactPrompt, pattern, completion)
    }

    pub fn contains(pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        Self::new(Matcher::ContainsSubstring, pattern, completion)
    }

    pub fn regex(pattern: impl Into<String>, completion: impl Into<String>) -> Self {
        Self::new(Matcher::RegexPattern, pattern, completion)
    }

    pub fn with_priority(mut self, priority: i64) -> Self {
        self.priority = priority;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default, rename = "rule")]
    pub rules: Vec<ScriptedRule>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        toml::from_str(text).map_err(|e| ScriptError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScriptError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("script serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(String),
    #[error("invalid script: {0}")]
    Parse(String),
    #[error("rule {index}: invalid regex: {message}")]
    Regex { index: usize, message: String },
}

struct Compiled {
    rule: ScriptedRule,
    regex: Option<Regex>,
}

impl Compiled {
    fn matches(&self, prompt: &str) -> bool {
        match self.rule.matcher {
            Matcher::ExactPrompt => prompt == self.rule.pattern,
            Matcher::ContainsSubstring => prompt.contains(&self.rule.pattern),
            Matcher::RegexPattern => self.regex.as_ref().is_some_and(|r| r.is_match(prompt)),
        }
    }
}

/// Scripted mock with call instrumentation.
pub struct ScriptedBackend {
    id: String,
    rules: Vec<Compiled>,
    delay: Duration,
    calls: AtomicU64,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Result<Self, ScriptError> {
        Self::from_script(Script { id: None, delay_ms: 0, rules })
    }

    pub fn from_script(script: Script) -> Result<Self, ScriptError> {
        let rules = script
            .rules
            .into_iter()
            .enumerate()
            .map(|(index, rule)| {
                let regex = match rule.matcher {
                    Matcher::RegexPattern => Some(
                        Regex::new(&rule.pattern).map_err(|e| ScriptError::Regex { index, message: e.to_string() })?,
                    ),
                    _ => None,
                };
                Ok(Compiled { rule, regex })
            })
            .collect::<Result<_, ScriptError>>()?;
        Ok(Self {
            id: script.id.unwrap_or_else(|| "scripted".to_string()),
            rules,
            delay: Duration::from_millis(script.delay_ms),
            calls: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        })
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// The winning rule for `prompt`, if any.
    pub fn lookup(&self, prompt: &str) -> Option<&ScriptedRule> {
        let mut best: Option<&ScriptedRule> = None;
        for c in self.rules.iter().filter(|c| c.matches(prompt)) {
            if best.is_none_or(|b| c.rule.priority > b.priority) {
                best = Some(&c.rule);
            }
        }
        best
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Highest number of calls observed in flight at once.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.max_in_flight.store(0, Ordering::SeqCst);
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            thread::sleep(self.delay);
        }
        let result = match self.lookup(&request.prompt) {
            // Simulated latency keeps traces byte-stable across runs.
            Some(rule) => Ok(Completion::new(rule.completion.clone(), self.delay.as_millis() as u64)),
            None => Err(BackendError::NoRuleMatched { excerpt: excerpt(&request.prompt) }),
        };
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<Completion, BackendError>> {
        map_bounded(requests, parallelism, |r| self.complete(r))
    }
}

/// Last line of a prompt, shortened; the final frame is what rules target.
fn excerpt(prompt: &str) -> String {
    let tail: Vec<&str> = prompt.trim_end().lines().rev().take(2).collect();
    let text = tail.into_iter().rev().collect::<Vec<_>>().join("\\n");
    let chars: Vec<char> = text.chars().collect();
    if chars.len() > 120 {
        format!("...{}", chars[chars.len() - 117..].iter().collect::<String>())
    } else {
        text
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cove_core::{DecodingParams, Step};

    fn req(prompt: &str) -> CompletionRequest {
        CompletionRequest::new(Step::Execute, prompt, &DecodingParams::default())
    }

    #[test]
    fn contains_rule_answers() {
        let b = ScriptedBackend::new(vec![ScriptedRule::contains("Where was Hillary Clinton born", "Chicago, Illinois")])
            .unwrap();
        let c = b.complete(&req("Q: Where was Hillary Clinton born?\nA:")).unwrap();
        assert_eq!(c.text, "Chicago, Illinois");
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn no_rule_matched() {
        let b = ScriptedBackend::new(vec![]).unwrap();
        assert!(matches!(b.complete(&req("anything")), Err(BackendError::NoRuleMatched { .. })));
    }

    #[test]
    fn priority_then_declaration_order() {
        let b = ScriptedBackend::new(vec![
            ScriptedRule::contains("x", "first"),
            ScriptedRule::contains("x", "second"),
            ScriptedRule::regex("^x+$", "low").with_priority(-1),
        ])
        .unwrap();
        assert_eq!(b.complete(&req("xx")).unwrap().text, "first");
        let b = ScriptedBackend::new(vec![
            ScriptedRule::contains("x", "first"),
            ScriptedRule::exact("xx", "exact").with_priority(5),
        ])
        .unwrap();
        assert_eq!(b.complete(&req("xx")).unwrap().text, "exact");
        assert_eq!(b.complete(&req("x")).unwrap().text, "first");
    }

    #[test]
    fn script_toml_round_trip() {
        let text = r#"
id = "demo"
delay_ms = 3

[[rule]]
match = "regex"
pattern = 'born\?\nA:\z'
completion = "Paris"
priority = 2

[[rule]]
match = "exact"
pattern = "hi"
completion = "hello"
"#;
        let script = Script::parse(text).unwrap();
        assert_eq!(script.rules.len(), 2);
        assert_eq!(Script::parse(&script.to_toml()).unwrap(), script);
        let b = ScriptedBackend::from_script(script).unwrap();
        assert_eq!(b.id(), "demo");
        let c = b.complete(&req("Where was X born?\nA:")).unwrap();
        assert_eq!((c.text.as_str(), c.wall_ms), ("Paris", 3));
    }

    #[test]
    fn bad_regex_is_reported() {
        let err = ScriptedBackend::new(vec![ScriptedRule::contains("a", "b"), ScriptedRule::regex("(", "x")]);
        assert!(matches!(err, Err(ScriptError::Regex { index: 1, .. })));
        assert!(matches!(Script::parse("[[rule]]\nmatch = \"fuzzy\"\n"), Err(ScriptError::Parse(_))));
    }

    #[test]
    fn batch_bounds_in_flight() {
        let b = ScriptedBackend::new(vec![ScriptedRule::regex("(?s).*", "ok")])
            .unwrap()
            .with_delay(Duration::from_millis(5));
        let reqs: Vec<CompletionRequest> = (0..8).map(|i| req(&format!("p{i}"))).collect();
        let out = b.complete_batch(&reqs, 3);
        assert_eq!(out.len(), 8);
        assert!(b.max_in_flight() <= 3);
        assert!(b.max_in_flight() >= 2);
    }
}
