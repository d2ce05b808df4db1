//! Acceptance suite. Runs every gating criterion and prints one PASS/FAIL
//! line per criterion; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cove::backend::{Recorder, Replayer, Script, ScriptedBackend, ScriptedRule};
use cove_core::backend::FnBackend;
use cove_core::eval::{factscore, micro_precision, multispan_corpus, multispan_f1, FactJudgment, GoldEntity, ListJudgment};
use cove_core::pipeline::{isolation_violations, parse_crosscheck, parse_list_answer, parse_plan};
use cove_core::trace::{decode_result, encode_result};
use cove_core::{
    run, BankSet, BackendError, CompletionRequest, PipelineConfig, PipelineResult, PlannerStrategy, Query, Step,
    TaskKind, Variant, VerdictStatus,
};
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestRng, TestRunner};

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("1 isolation", isolation),
        ("2 call counts", call_counts),
        ("3 politician fixture", politicians),
        ("4 metric oracles", metric_oracles),
        ("5 worked metric examples", worked_examples),
        ("6 determinism and replay", determinism_and_replay),
        ("7 parser robustness", parser_robustness),
        ("8 concurrency", concurrency),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why})");
            }
        }
    }
    let _ = panic::take_hook();
    if failed > 0 {
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn runner(seed: u8) -> TestRunner {
    let mut bytes = [0u8; 32];
    bytes[0] = seed;
    TestRunner::new_with_rng(Config::default(), TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &bytes))
}

fn sample<S: Strategy>(runner: &mut TestRunner, s: &S) -> S::Value {
    s.new_tree(runner).expect("strategy generates").current()
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

const QUESTION_WORDS: [&str; 4] = ["What", "Where", "When", "Who"];

fn word() -> impl Strategy<Value = String> {
    "[a-z]{3,8}".prop_map(|w| {
        let mut c = w.chars();
        let first = c.next().unwrap().to_ascii_uppercase();
        format!("{first}{}", c.as_str())
    })
}

fn phrase(min: usize, max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), min..=max).prop_map(|w| w.join(" "))
}

/// A drafted answer plus everything the mock says about it.
#[derive(Debug, Clone)]
struct Scenario {
    task: TaskKind,
    query: String,
    /// List entities, or bio sentences.
    pieces: Vec<String>,
    answers: Vec<String>,
}

impl Scenario {
    fn draft(&self) -> String {
        match self.task {
            TaskKind::LongformBio => self.pieces.join(" "),
            _ => self.pieces.join(", "),
        }
    }
}

fn scenario() -> impl Strategy<Value = Scenario> {
    let list = (phrase(1, 3), prop::collection::vec(phrase(3, 3), 4..=8), prop::collection::vec(phrase(2, 5), 8))
        .prop_map(|(topic, pieces, answers)| Scenario {
            task: TaskKind::ListQA,
            query: format!("Name some {}", topic.to_lowercase()),
            pieces,
            answers,
        });
    let bio = (phrase(2, 2), prop::collection::vec(phrase(10, 16), 2..=5), prop::collection::vec(phrase(2, 5), 8))
        .prop_map(|(name, sentences, answers)| Scenario {
            task: TaskKind::LongformBio,
            query: format!("Tell me a bio of {name}"),
            pieces: sentences.into_iter().map(|s| format!("{s}.")).collect(),
            answers,
        });
    prop_oneof![list, bio]
}

fn last_frame(prompt: &str) -> &str {
    prompt.rsplit("\n\n").next().unwrap_or(prompt)
}

fn pick(answers: &[String], key: &str) -> String {
    let h = key.bytes().fold(7usize, |a, b| a.wrapping_mul(31).wrapping_add(b as usize));
    answers[h % answers.len()].clone()
}

/// Mock that answers by step; plans hold one question per list entity or
/// three per bio sentence.
fn scenario_backend(s: &Scenario, variant: Variant) -> impl Fn(&CompletionRequest) -> Result<String, BackendError> + Sync + '_ {
    move |r: &CompletionRequest| {
        let frame = last_frame(&r.prompt);
        let questions = |passage: &str| -> Vec<String> {
            match s.task {
                TaskKind::LongformBio => {
                    let words: Vec<&str> = passage.split_whitespace().collect();
                    (0..3).map(|i| format!("{} is {}?", QUESTION_WORDS[i], words[i + 1].trim_end_matches('.'))).collect()
                }
                _ => s.pieces.iter().map(|e| format!("Where was {e} born?")).collect(),
            }
        };
        let passage = || frame.lines().nth(1).and_then(|l| l.strip_prefix("A: ")).unwrap_or_default().to_string();
        Ok(match r.step {
            Step::BaselineGen => s.draft(),
            Step::Plan => {
                let p = passage();
                questions(&p).iter().map(|q| format!("{}, {q}", p.split_whitespace().next().unwrap())).collect::<Vec<_>>().join("\n")
            }
            Step::Execute if variant == Variant::Joint => questions(&passage())
                .iter()
                .map(|q| format!("Q: {q}\nA: {}", pick(&s.answers, q)))
                .collect::<Vec<_>>()
                .join("\n"),
            Step::Execute if frame.ends_with("Answers:") => {
                let n = frame.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count();
                (1..=n).map(|i| format!("{i}. {}", s.answers[i % s.answers.len()])).collect::<Vec<_>>().join("\n")
            }
            Step::Execute => pick(&s.answers, frame),
            Step::CrossCheck => ["CONSISTENT.", "INCONSISTENT.", "PARTIALLY CONSISTENT. part"][r.prompt.len() % 3].to_string(),
            Step::FinalGen => pick(&s.answers, &r.prompt),
        })
    }
}

fn ngrams(text: &str, n: usize) -> HashSet<Vec<String>> {
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    words.windows(n).map(<[String]>::to_vec).collect()
}

fn isolation() -> Result<String, String> {
    let start = Instant::now();
    let banks = BankSet::builtin();
    let mut runner = runner(1);
    let strategy = scenario();
    let mut total = 0;
    for variant in [Variant::Joint, Variant::TwoStep, Variant::Factored, Variant::FactorRevise] {
        for case in 0..200 {
            let s = sample(&mut runner, &strategy);
            let query = Query::new(format!("q{case}"), s.query.clone(), s.task).unwrap();
            let backend = FnBackend::new("mock", scenario_backend(&s, variant));
            let config = PipelineConfig { max_questions: 20, ..PipelineConfig::with_variant(variant) };
            let result = run(&query, &config, &backend, &banks).map_err(|e| format!("{variant} case {case}: {e}"))?;
            let draft = ngrams(&result.baseline_response, 10);
            ensure!(!draft.is_empty(), "{variant} case {case}: draft shorter than 10 words");
            let execute: Vec<_> = result.trace.calls.iter().filter(|c| c.step == Step::Execute).collect();
            ensure!(!execute.is_empty(), "{variant} case {case}: no execute calls");
            if variant == Variant::Joint {
                let passages = match s.task {
                    TaskKind::LongformBio => s.pieces.clone(),
                    _ => vec![s.draft()],
                };
                for (call, passage) in execute.iter().zip(&passages) {
                    ensure!(call.prompt.contains(passage.as_str()), "joint case {case}: combined prompt lacks the draft");
                }
                ensure!(!isolation_violations(&result).is_empty(), "joint case {case}: positive control not flagged");
            } else {
                for call in &execute {
                    ensure!(
                        ngrams(&call.prompt, 10).is_disjoint(&draft),
                        "{variant} case {case}: execute prompt seq {} shares a 10-gram with the draft",
                        call.seq
                    );
                }
                ensure!(isolation_violations(&result).is_empty(), "{variant} case {case}: isolation_violations disagrees");
            }
            total += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{total} scenarios, {:.2} s", elapsed.as_secs_f64()))
}

/// Expected calls for one query with `p` passages, `k` planned questions
/// (`per_passage[i]` of them from passage `i`) and `c` answered questions.
fn expected_calls(variant: Variant, rule: bool, p: usize, per_passage: &[usize], c: usize) -> usize {
    let k: usize = per_passage.iter().sum();
    let plan = if rule { 0 } else { p };
    match variant {
        Variant::Baseline | Variant::ZeroShot | Variant::ZeroShotCot => 1,
        Variant::Joint if rule => 1 + per_passage.iter().filter(|&&n| n > 0).count() + p,
        Variant::Joint => 1 + p + p,
        Variant::TwoStep => 1 + plan + k.min(1) + p,
        Variant::Factored => 1 + plan + k + p,
        Variant::FactorRevise => 1 + plan + k + c + p,
    }
}

fn call_counts() -> Result<String, String> {
    let banks = BankSet::builtin();
    let mut runner = runner(2);
    let trial = (0usize..7, 0usize..=10, prop::collection::vec(any::<bool>(), 10), 1usize..=4, any::<bool>(), any::<bool>());
    let mut by_variant: BTreeMap<String, usize> = BTreeMap::new();
    for t in 0..500 {
        let (v, k, empty, passages, bio, rule) = sample(&mut runner, &trial);
        let variant = Variant::ALL[v];
        let task = if bio { TaskKind::LongformBio } else { TaskKind::ListQA };
        let rule = rule && !bio;
        let p = if bio { passages } else { 1 };
        // Spread k questions over the passages.
        let per_passage: Vec<usize> = (0..p).map(|i| k / p + usize::from(i < k % p)).collect();
        let qid = |i: usize, j: usize| format!("What is item {i} {j}?");
        let is_empty = |q: &str| -> bool {
            let n: usize = q.bytes().filter(u8::is_ascii_digit).map(|b| (b - b'0') as usize).sum();
            empty[n % 10]
        };
        let entities: Vec<String> = (0..k).map(|i| format!("Entity {i}")).collect();
        let draft = if bio {
            (0..p).map(|i| format!("Person did thing {i}.")).collect::<Vec<_>>().join(" ")
        } else if entities.is_empty() {
            ",".to_string()
        } else {
            entities.join(", ")
        };
        let rule_questions: Vec<String> =
            entities.iter().map(|e| format!("Does {e} answer the question Name some things?")).collect();
        let passage_index = |frame: &str| -> usize {
            if !bio {
                return 0;
            }
            frame.lines().nth(1).and_then(|l| l.split_whitespace().last()).and_then(|w| w.trim_end_matches('.').parse().ok()).unwrap_or(0)
        };
        let backend = FnBackend::new("mock", |r: &CompletionRequest| {
            let frame = last_frame(&r.prompt);
            let answer = |q: &str| if is_empty(q) { String::new() } else { "Some answer".to_string() };
            Ok(match r.step {
                Step::BaselineGen => draft.clone(),
                Step::Plan => {
                    let i = passage_index(frame);
                    (0..per_passage[i]).map(|j| qid(i, j)).collect::<Vec<_>>().join("\n")
                }
                Step::Execute if variant == Variant::Joint && rule => {
                    rule_questions.iter().map(|q| format!("Q: {q}\nA: yes")).collect::<Vec<_>>().join("\n")
                }
                Step::Execute if variant == Variant::Joint => {
                    let i = passage_index(frame);
                    (0..per_passage[i]).map(|j| format!("Q: {}\nA: yes", qid(i, j))).collect::<Vec<_>>().join("\n")
                }
                Step::Execute if frame.ends_with("Answers:") => {
                    let n = frame.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count();
                    (1..=n).map(|i| format!("{i}. x")).collect::<Vec<_>>().join("\n")
                }
                Step::Execute => {
                    let q = frame.lines().rev().find_map(|l| l.strip_prefix("Q: ")).unwrap_or_default();
                    answer(q)
                }
                Step::CrossCheck => "CONSISTENT.".to_string(),
                Step::FinalGen => "Revised.".to_string(),
            })
        });
        let query_text = if bio { "Tell me a bio of Some Person" } else { "Name some things" };
        let query = Query::new(format!("t{t}"), query_text, task).unwrap();
        let strategy = if rule { PlannerStrategy::RuleTemplated } else { PlannerStrategy::OpenGenerated };
        let config = PipelineConfig { planner_strategy: strategy, ..PipelineConfig::with_variant(variant) };
        let result = run(&query, &config, &backend, &banks).map_err(|e| format!("trial {t} {variant}: {e}"))?;
        let questions: Vec<String> = if rule {
            rule_questions.clone()
        } else {
            (0..p).flat_map(|i| (0..per_passage[i]).map(move |j| (i, j))).map(|(i, j)| qid(i, j)).collect()
        };
        let c = if variant == Variant::FactorRevise { questions.iter().filter(|q| !is_empty(q)).count() } else { 0 };
        let rule_per_passage = if rule { vec![k] } else { per_passage.clone() };
        let want = expected_calls(variant, rule, p, &rule_per_passage, c);
        let got = result.trace.calls.len();
        ensure!(got == want, "trial {t}: {variant} rule={rule} p={p} k={k} c={c}: {got} calls, formula {want}");
        if !variant.is_degenerate() {
            ensure!(result.plan.len() == k, "trial {t}: plan has {} questions, expected {k}", result.plan.len());
        }
        *by_variant.entry(variant.to_string()).or_default() += 1;
    }
    Ok(format!("500 trials across {} variants", by_variant.len()))
}

fn politicians_backend() -> ScriptedBackend {
    ScriptedBackend::from_script(Script::load(&root().join("fixtures/politicians.rules")).unwrap()).unwrap()
}

fn politicians_query() -> Query {
    Query::new("politicians", "Name some politicians who were born in NY, New York", TaskKind::ListQA).unwrap()
}

fn politicians() -> Result<String, String> {
    let banks = BankSet::builtin();
    let backend = politicians_backend();
    let query = politicians_query();
    let draft = "Hillary Clinton, Donald Trump, Michael Bloomberg";
    let baseline = run(&query, &PipelineConfig::with_variant(Variant::Baseline), &backend, &banks).map_err(|e| e.to_string())?;
    ensure!(baseline.final_response == draft, "baseline final `{}`", baseline.final_response);
    for variant in [Variant::Factored, Variant::FactorRevise, Variant::TwoStep, Variant::Joint] {
        let r = run(&query, &PipelineConfig::with_variant(variant), &backend, &banks).map_err(|e| format!("{variant}: {e}"))?;
        ensure!(r.baseline_response == draft, "{variant}: draft `{}`", r.baseline_response);
        ensure!(r.final_response == "Donald Trump", "{variant}: final `{}`", r.final_response);
        let answers: Vec<&str> = r.qa.iter().map(|q| q.answer.as_str()).collect();
        ensure!(
            answers == ["Chicago, Illinois", "New York City, New York", "Boston, Massachusetts"],
            "{variant}: answers {answers:?}"
        );
        if variant == Variant::FactorRevise {
            let statuses: Vec<VerdictStatus> = r.verdicts.as_ref().unwrap().iter().map(|v| v.status).collect();
            ensure!(
                statuses == [VerdictStatus::Inconsistent, VerdictStatus::Consistent, VerdictStatus::Inconsistent],
                "verdicts {statuses:?}"
            );
            // Refuted facts never reach the reviser.
            let final_call = r.trace.calls.iter().rfind(|c| c.step == Step::FinalGen).unwrap();
            let frame = last_frame(&final_call.prompt);
            ensure!(!frame.contains("Hillary Clinton"), "refuted fact in revision context");
            ensure!(!frame.contains("Michael Bloomberg"), "refuted fact in revision context");
            ensure!(frame.contains("A: Donald Trump\n"), "consistent part missing from revision context");
        }
    }
    Ok("baseline keeps all three; factored, factor+revise, two-step and joint keep only Donald Trump".into())
}

fn metric_oracles() -> Result<String, String> {
    let mut runner = runner(4);
    let vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"];
    let cased = |w: &str, upper: bool| if upper { w.to_uppercase() } else { w.to_string() };
    let name = (0usize..8, any::<bool>());
    let query = (
        prop::collection::vec(name.clone(), 0..6),
        prop::collection::vec((0usize..8, prop::option::of(0usize..8)), 1..4),
    );
    let list_case = prop::collection::vec(query, 1..6);
    for case in 0..1000 {
        let queries = sample(&mut runner, &list_case);
        let mut judgments = Vec::new();
        let (mut tp, mut fp) = (0u64, 0u64);
        for (i, (pred, gold)) in queries.iter().enumerate() {
            let predicted: Vec<String> = pred.iter().map(|&(w, u)| cased(vocab[w], u)).collect();
            let gold_entities: Vec<GoldEntity> = gold
                .iter()
                .map(|&(n, alias)| GoldEntity::with_aliases(vocab[n], alias.map(|a| vocab[a])))
                .collect();
            // Brute force: a gold entity is hit when any prediction equals any of
            // its forms; a distinct prediction is a miss when it equals no form.
            let forms: Vec<BTreeSet<&str>> =
                gold.iter().map(|&(n, alias)| [Some(vocab[n]), alias.map(|a| vocab[a])].into_iter().flatten().collect()).collect();
            let distinct: BTreeSet<&str> = pred.iter().map(|&(w, _)| vocab[w]).collect();
            let mut claimed: BTreeSet<&str> = BTreeSet::new();
            let mut hits = 0;
            for f in &forms {
                let new: Vec<&&str> = f.iter().filter(|x| !claimed.contains(**x)).collect();
                if new.iter().any(|x| distinct.contains(**x)) {
                    hits += 1;
                }
                claimed.extend(f.iter().copied());
            }
            let misses = distinct.iter().filter(|p| !forms.iter().any(|f| f.contains(*p))).count();
            tp += hits;
            fp += misses as u64;
            judgments.push(ListJudgment::new(format!("q{i}"), predicted, gold_entities));
        }
        let got = micro_precision(&judgments).map_err(|e| e.to_string())?;
        let n = queries.len() as u64;
        let precision = if tp + fp == 0 { Ratio::from_integer(0) } else { Ratio::new(tp, tp + fp) };
        let to_f64 = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
        ensure!(got.precision == to_f64(precision), "list case {case}: precision {} vs {precision}", got.precision);
        ensure!(got.avg_pos == to_f64(Ratio::new(tp, n)), "list case {case}: avg_pos");
        ensure!(got.avg_neg == to_f64(Ratio::new(fp, n)), "list case {case}: avg_neg");
        ensure!(got.no_predictions == (tp + fp == 0), "list case {case}: flag");
    }

    let spans = prop::collection::vec(name, 0..6);
    let span_case = prop::collection::vec((spans.clone(), prop::collection::vec(name_strategy(), 1..5)), 1..5);
    for case in 0..1000 {
        let pairs_raw = sample(&mut runner, &span_case);
        let mut pairs = Vec::new();
        let (mut m_sum, mut p_sum, mut g_sum) = (0u64, 0u64, 0u64);
        for (pred, gold) in &pairs_raw {
            let pred_s: Vec<String> = pred.iter().map(|&(w, u)| cased(vocab[w], u)).collect();
            let gold_s: Vec<String> = gold.iter().map(|&w| vocab[w].to_string()).collect();
            let p: BTreeSet<&str> = pred.iter().map(|&(w, _)| vocab[w]).collect();
            let g: BTreeSet<&str> = gold.iter().map(|&w| vocab[w]).collect();
            let m = p.iter().filter(|x| g.contains(*x)).count() as u64;
            let (np, ng) = (p.len() as u64, g.len() as u64);
            let got = multispan_f1(&pred_s, &gold_s);
            let prec = if np == 0 { Ratio::from_integer(0) } else { Ratio::new(m, np) };
            let rec = Ratio::new(m, ng);
            let f1 = if prec + rec == Ratio::from_integer(0) { Ratio::from_integer(0) } else { Ratio::from_integer(2) * prec * rec / (prec + rec) };
            let to_f64 = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
            ensure!(got.precision == to_f64(prec), "span case {case}: precision");
            ensure!(got.recall == to_f64(rec), "span case {case}: recall");
            ensure!(got.f1 == to_f64(f1), "span case {case}: f1 {} vs {f1}", got.f1);
            m_sum += m;
            p_sum += np;
            g_sum += ng;
            pairs.push((pred_s, gold_s));
        }
        let corpus = multispan_corpus(&pairs);
        let to_f64 = |a: u64, b: u64| if b == 0 { 0.0 } else { *Ratio::new(a, b).numer() as f64 / *Ratio::new(a, b).denom() as f64 };
        ensure!(corpus.f1 == to_f64(2 * m_sum, p_sum + g_sum), "span corpus case {case}: f1");
        ensure!(corpus.precision == to_f64(m_sum, p_sum), "span corpus case {case}: precision");
        ensure!(corpus.recall == to_f64(m_sum, g_sum), "span corpus case {case}: recall");
    }
    Ok("1000 list and 1000 span instances agree exactly".into())
}

fn name_strategy() -> impl Strategy<Value = usize> {
    0usize..8
}

fn worked_examples() -> Result<String, String> {
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let g = |xs: &[&str]| xs.iter().map(|x| GoldEntity::new(*x)).collect::<Vec<_>>();
    let list = micro_precision(&[
        ListJudgment::new("1", s(&["a", "b", "c"]), g(&["a", "b"])),
        ListJudgment::new("2", s(&["d"]), g(&["d", "e"])),
    ])
    .map_err(|e| e.to_string())?;
    ensure!(list.precision == 3.0 / 4.0, "precision {}", list.precision);
    ensure!(list.avg_pos == 1.5 && list.avg_neg == 0.5, "avg_pos {} avg_neg {}", list.avg_pos, list.avg_neg);

    let span = multispan_f1(&s(&["a"]), &s(&["a", "b"]));
    ensure!(span.precision == 1.0 && span.recall == 0.5, "P {} R {}", span.precision, span.recall);
    ensure!(span.f1 == 2.0 / 3.0, "F1 {}", span.f1);
    let exact = multispan_f1(&s(&["Johannes Gutenberg", "1450"]), &s(&["Johannes Gutenberg", "1450"]));
    ensure!(exact.f1 == 1.0, "Gutenberg F1 {}", exact.f1);

    let facts = |supported: usize, total: usize| (0..total).map(|i| (format!("f{i}"), i < supported)).collect::<Vec<_>>();
    let fs = factscore(&[
        FactJudgment { response_id: "1".into(), facts: facts(3, 4), rarity: None },
        FactJudgment { response_id: "2".into(), facts: facts(1, 2), rarity: None },
    ])
    .map_err(|e| e.to_string())?;
    ensure!(fs.score == 62.5, "factscore {}", fs.score);
    ensure!(fs.avg_facts == 3.0, "avg facts {}", fs.avg_facts);
    Ok("precision 3/4, F1 2/3, factscore 62.5".into())
}

fn cove(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cove")).args(args).env_remove("COVE_API_KEY").output().unwrap()
}

fn determinism_and_replay() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let rules = root().join("fixtures/politicians.rules").display().to_string();
    let data = root().join("fixtures/politicians.jsonl").display().to_string();
    let variants = ["baseline", "joint", "two_step", "factored", "factor_revise"];
    for variant in variants {
        let mut files = Vec::new();
        for copy in ["a", "b"] {
            let out = dir.path().join(format!("{variant}-{copy}"));
            let o = cove(&["run", "--mock", &rules, "--dataset", &data, "--variant", variant, "--out", out.to_str().unwrap()]);
            ensure!(o.status.code() == Some(0), "{variant}: run failed: {}", String::from_utf8_lossy(&o.stderr));
            files.push(fs::read(out.join("results.jsonl")).unwrap());
        }
        ensure!(files[0] == files[1], "{variant}: result files differ between identical runs");
        let o = cove(&["replay", dir.path().join(format!("{variant}-a")).to_str().unwrap()]);
        let err = String::from_utf8_lossy(&o.stderr);
        ensure!(o.status.code() == Some(0), "{variant}: replay exit {:?}: {err}", o.status.code());
        ensure!(err.contains("0 live calls"), "{variant}: replay reported live calls: {err}");
    }

    // Library level: record random scenarios, then replay them strictly.
    let banks = BankSet::builtin();
    let mut runner = runner(6);
    let strategy = scenario();
    for case in 0..50 {
        let s = sample(&mut runner, &strategy);
        let variant = [Variant::Joint, Variant::TwoStep, Variant::Factored, Variant::FactorRevise][case % 4];
        let query = Query::new(format!("r{case}"), s.query.clone(), s.task).unwrap();
        let config = PipelineConfig::with_variant(variant);
        let recorder = Recorder::new(FnBackend::new("mock", scenario_backend(&s, variant)));
        let recorded = run(&query, &config, &recorder, &banks).map_err(|e| e.to_string())?;
        let replayer = Replayer::strict(recorded.trace.calls.clone());
        let replayed = run(&query, &config, &replayer, &banks).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(replayer.finish().is_ok() && replayer.live_calls() == 0, "case {case}: replay incomplete");
        ensure!(encode_result(&replayed) == encode_result(&recorded), "case {case}: replayed result differs");
    }

    // One-byte prompt mutations.
    let source = dir.path().join("factor_revise-a");
    let line = fs::read_to_string(source.join("results.jsonl")).unwrap();
    let original: PipelineResult = decode_result(line.trim()).unwrap();
    let targets = (0..original.trace.calls.len(), any::<prop::sample::Index>());
    let mut detected = 0;
    for trial in 0..20 {
        let (call, index) = sample(&mut runner, &targets);
        let mut mutated = original.clone();
        let prompt = &mut mutated.trace.calls[call].prompt;
        let positions: Vec<usize> = prompt.bytes().enumerate().filter(|(_, b)| b.is_ascii_alphabetic()).map(|(i, _)| i).collect();
        let at = positions[index.index(positions.len())];
        let mut bytes = prompt.clone().into_bytes();
        bytes[at] = if bytes[at] == b'x' { b'y' } else { b'x' };
        *prompt = String::from_utf8(bytes).unwrap();
        let run_dir = dir.path().join(format!("mutated-{trial}"));
        fs::create_dir(&run_dir).unwrap();
        fs::copy(source.join("manifest.json"), run_dir.join("manifest.json")).unwrap();
        fs::write(run_dir.join("results.jsonl"), encode_result(&mutated) + "\n").unwrap();
        let o = cove(&["replay", run_dir.to_str().unwrap()]);
        ensure!(
            o.status.code() == Some(4),
            "mutation {trial} (call {call}, byte {at}) exit {:?}",
            o.status.code()
        );
        detected += 1;
    }
    Ok(format!("{} variants byte-identical and replayed, 50 recorded scenarios, {detected}/20 mutations caught", variants.len()))
}

fn parser_robustness() -> Result<String, String> {
    let mut runner = runner(7);
    let plan_line = (
        prop::option::of(phrase(1, 4)),
        prop::sample::select(QUESTION_WORDS.to_vec()),
        phrase(1, 5),
        any::<bool>(),
    );
    let plan_case = prop::collection::vec(plan_line, 0..12);
    for case in 0..1000 {
        let lines = sample(&mut runner, &plan_case);
        let mut expected = Vec::new();
        let mut text = String::new();
        for (i, (fact, qword, body, numbered)) in lines.iter().enumerate() {
            let question = format!("{qword} {} {body}?", i + 1);
            if *numbered {
                text.push_str(&format!("{}. ", i + 1));
            }
            match fact {
                Some(f) => text.push_str(&format!("{f}, {question}\n")),
                None => text.push_str(&format!("{question}\n")),
            }
            expected.push((fact.clone().unwrap_or_default(), question));
        }
        let (plan, _) = parse_plan(&text, 1000);
        let got: Vec<(String, String)> = plan.items.iter().map(|i| (i.source_fact.clone(), i.question.clone())).collect();
        ensure!(got == expected, "plan case {case}: {text:?} parsed as {got:?}");
    }

    let list_case = (prop::collection::vec(phrase(1, 4), 0..10), 0u8..3);
    for case in 0..1000 {
        let (entities, style) = sample(&mut runner, &list_case);
        let text = match style {
            0 => entities.join(", "),
            1 => entities.iter().enumerate().map(|(i, e)| format!("{}. {e}", i + 1)).collect::<Vec<_>>().join("\n"),
            _ => entities.iter().map(|e| format!("- {e}")).collect::<Vec<_>>().join("\n"),
        };
        let got = parse_list_answer(&text);
        ensure!(got == entities, "list case {case}: {text:?} parsed as {got:?}");
    }

    let labels = [
        ("CONSISTENT", VerdictStatus::Consistent),
        ("INCONSISTENT", VerdictStatus::Inconsistent),
        ("PARTIALLY CONSISTENT", VerdictStatus::PartiallyConsistent),
    ];
    let verdict_case = (0usize..3, prop::collection::vec(any::<bool>(), 20), prop::sample::select(vec![".", ":", ". ", " ", ""]), phrase(0, 4), any::<bool>());
    for case in 0..1000 {
        let (l, upper, sep, rest, prefix) = sample(&mut runner, &verdict_case);
        let (label, status) = labels[l];
        let cased: String = label
            .chars()
            .zip(upper.iter().cycle())
            .map(|(c, &u)| if u { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
            .collect();
        let sep = if rest.is_empty() || !sep.is_empty() { sep } else { " " };
        let text = format!("{}{cased}{sep}{rest}", if prefix { "Response: " } else { "" });
        let (verdict, warning) = parse_crosscheck(&text);
        ensure!(verdict.status == status && warning.is_none(), "verdict case {case}: {text:?} read as {verdict:?}");
        if status != VerdictStatus::Inconsistent {
            ensure!(verdict.consistent_part.as_deref() == Some(rest.as_str()), "verdict case {case}: part {:?}", verdict.consistent_part);
        }
    }
    let garbage = "[a-zA-Z0-9 ,.!?:-]{0,40}";
    let mut tried = 0;
    while tried < 1000 {
        let text = sample(&mut runner, &garbage);
        let mut body = text.trim().to_string();
        if body.len() >= 9 && body[..9].eq_ignore_ascii_case("response:") {
            body = body[9..].trim_start().to_string();
        }
        let norm: String = body.chars().map(|c| if c == '-' { ' ' } else { c.to_ascii_uppercase() }).collect();
        if labels.iter().any(|(l, _)| norm.starts_with(l) && !norm[l.len()..].starts_with(|c: char| c.is_alphanumeric())) {
            continue;
        }
        tried += 1;
        let (verdict, warning) = parse_crosscheck(&text);
        ensure!(verdict.status == VerdictStatus::Inconsistent && warning.is_some(), "garbage {text:?} read as {verdict:?}");
    }
    Ok("1000 plans, 1000 lists, 1000 labelled and 1000 garbage verdicts".into())
}

fn concurrency_backend() -> ScriptedBackend {
    let plan: Vec<String> = (1..=8).map(|i| format!("Thing {i}, What is thing {i}?")).collect();
    ScriptedBackend::new(vec![
        ScriptedRule::regex(r"Q: Name some things\nA:\z", "Thing 1, Thing 2"),
        ScriptedRule::regex(r"Context: Q: Name some things\nA: [^\n]*\nResponse:\z", plan.join("\n")),
        ScriptedRule::regex(r"Q: What is thing \d\?\nA:\z", "A thing"),
        ScriptedRule::regex(r"From another source,\n(?:Q: [^\n]*\nA: [^\n]*\n)+Response:\z", "Thing 1"),
    ])
    .unwrap()
    .with_delay(Duration::from_millis(10))
}

fn concurrency() -> Result<String, String> {
    let banks = BankSet::builtin();
    let query = Query::new("c", "Name some things", TaskKind::ListQA).unwrap();
    let mut worst: f64 = 0.0;
    for rep in 0..20 {
        let mut times = Vec::new();
        for parallelism in [1, 4] {
            let backend = concurrency_backend();
            let config = PipelineConfig { parallelism, ..PipelineConfig::with_variant(Variant::Factored) };
            let start = Instant::now();
            let r = run(&query, &config, &backend, &banks).map_err(|e| e.to_string())?;
            times.push(start.elapsed());
            ensure!(r.plan.len() == 8 && backend.calls() == 11, "rep {rep}: {} questions, {} calls", r.plan.len(), backend.calls());
            ensure!(backend.max_in_flight() <= parallelism, "rep {rep}: {} in flight at parallelism {parallelism}", backend.max_in_flight());
            if parallelism == 4 {
                ensure!(backend.max_in_flight() == 4, "rep {rep}: only {} in flight", backend.max_in_flight());
            }
        }
        let ratio = times[1].as_secs_f64() / times[0].as_secs_f64();
        ensure!(ratio < 0.6, "rep {rep}: parallel {:?} vs sequential {:?}", times[1], times[0]);
        worst = worst.max(ratio);
    }
    Ok(format!("20 repetitions, worst parallel/sequential ratio {worst:.2}, max in flight 4"))
}
