//! The `cove` command line.
//!
//! Exit codes:
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success                                             |
//! | 1    | configuration, usage, bank or mock-script error     |
//! | 2    | dataset or results error (parse, schema, id mismatch)|
//! | 3    | unrecoverable backend error                         |
//! | 4    | replay divergence                                   |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cove_core::datasets::{count_by_task, Gold, TaskRecord};
use cove_core::eval::{
    clip_sentences, extract_facts, factscore, factscore_by_bucket, judge_fact, micro_precision, multispan_corpus,
    render_table, BucketScore, EvalReport, FactJudgment, JudgeMode, ListJudgment, Metrics,
};
use cove_core::pipeline::{parse_list_answer, run as run_pipeline, PipelineError};
use cove_core::prompts::{BankSet, BankStep};
use cove_core::trace::{encode_call, encode_result};
use cove_core::{
    Backend, BackendError, CallRecord, Completion, CompletionRequest, PipelineResult, TaskKind,
};

use crate::backend::{HttpBackend, Replayer, Script, ScriptedBackend};
use crate::batch::map_bounded;
use crate::config::{BackendKind, BackendSettings, ConfigLayer, Effective, API_KEY_ENV};
use crate::io::{
    load_banks, load_dataset, read_results, read_text, results_path, sha256_hex, write_results_atomic, BackendInfo,
    DatasetInfo, ResultsWriter, RunManifest, REPORT_JSON, REPORT_TXT, RESULTS_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATASET: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cove", version, about = "Draft, plan verification questions, answer them independently, revise.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over a dataset and write one result line per query.
    Run(RunArgs),
    /// Score a results file against gold data.
    Eval(EvalArgs),
    /// Re-run recorded results against their own recordings and compare.
    Replay(ReplayArgs),
    /// Check datasets, config files, banks and mock scripts.
    Validate(ValidateArgs),
    /// Join the reports of several run directories into one table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKindArg>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    #[arg(long)]
    pub token_limit: Option<usize>,
    /// Scripted mock rules file; implies `--backend mock`.
    #[arg(long)]
    pub mock: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKindArg {
    Http,
    Mock,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub planner: Option<String>,
    #[arg(long)]
    pub max_questions: Option<usize>,
    /// Concurrent backend calls within one query.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// abort | skip
    #[arg(long)]
    pub on_failure: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long = "stop")]
    pub stop: Vec<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory; defaults to `<runs-dir>/<timestamp>-<config hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
    /// Queries processed concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory of replacement demonstration banks.
    #[arg(long)]
    pub banks: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FactSource {
    /// One fact per sentence of the response.
    Sentences,
    /// Facts extracted by the backend.
    Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeArg {
    /// Normalized match against the gold facts.
    Exact,
    /// Yes/no question to the backend.
    Backend,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Run directory or results file.
    pub results: PathBuf,
    /// Gold dataset; defaults to the dataset named in the run manifest.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Where to write the structured report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label; defaults to the variant found in the results.
    #[arg(long)]
    pub label: Option<String>,
    /// Clip biographies to this many sentences before scoring.
    #[arg(long)]
    pub clip: Option<usize>,
    #[arg(long, value_enum, default_value = "sentences")]
    pub facts: FactSource,
    #[arg(long, value_enum, default_value = "exact")]
    pub judge: JudgeArg,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Run directory or results file.
    pub results: PathBuf,
    /// Bank directory; defaults to the one named in the run manifest.
    #[arg(long)]
    pub banks: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Dataset files.
    pub datasets: Vec<PathBuf>,
    /// Require every record to be of this task (list | multispan | bio).
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub banks: Option<PathBuf>,
    #[arg(long)]
    pub mock: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Run directories holding `report.json`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the joined reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_from<I, T>(args: I, env: &dyn Fn(&str) -> Option<String>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a, env),
        Command::Eval(a) => cmd_eval(&a, env),
        Command::Replay(a) => cmd_replay(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            code
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn fail(code: i32, message: impl std::fmt::Display) -> Failure {
    Failure { code, message: message.to_string() }
}

type Outcome = Result<(), Failure>;

impl BackendArgs {
    fn layer(&self) -> Result<ConfigLayer, Failure> {
        let mut layer = ConfigLayer::default();
        let b = &mut layer.backend;
        b.kind = self.backend.map(|k| match k {
            BackendKindArg::Http => BackendKind::Http,
            BackendKindArg::Mock => BackendKind::Mock,
        });
        b.endpoint = self.endpoint.clone();
        b.model = self.model.clone();
        b.timeout_secs = self.timeout_secs;
        b.max_attempts = self.max_attempts;
        b.backoff_ms = self.backoff_ms;
        b.token_limit = self.token_limit;
        b.mock_script = self.mock.clone();
        if self.mock.is_some() && self.backend.is_none() {
            b.kind = Some(BackendKind::Mock);
        }
        Ok(layer)
    }
}

impl RunArgs {
    fn layer(&self) -> Result<ConfigLayer, Failure> {
        let mut layer = self.backend.layer()?;
        let p = &mut layer.pipeline;
        p.variant = self.variant.clone();
        p.planner_strategy = self.planner.clone();
        p.max_questions = self.max_questions;
        p.parallelism = self.parallelism;
        p.seed = self.seed;
        p.on_failure = self.on_failure.clone();
        let d = &mut layer.decoding;
        d.temperature = self.temperature;
        d.max_tokens = self.max_tokens;
        d.stop_sequences = (!self.stop.is_empty()).then(|| self.stop.clone());
        let r = &mut layer.run;
        r.dataset = self.dataset.clone();
        r.out = self.out.clone();
        r.runs_dir = self.runs_dir.clone();
        r.jobs = self.jobs;
        r.banks = self.banks.clone();
        Ok(layer)
    }
}

/// Defaults, then the config file, then the environment, then `flags`.
fn effective(config: Option<&Path>, flags: &ConfigLayer, env: &dyn Fn(&str) -> Option<String>) -> Result<Effective, Failure> {
    let mut layer = ConfigLayer::default();
    if let Some(path) = config {
        layer = layer.overlay(&ConfigLayer::load(path).map_err(|e| fail(EXIT_CONFIG, e))?);
    }
    let env_layer = ConfigLayer::from_env(env).map_err(|e| fail(EXIT_CONFIG, e))?;
    layer.overlay(&env_layer).overlay(flags).resolve().map_err(|e| fail(EXIT_CONFIG, e))
}

fn make_backend(settings: &BackendSettings, env: &dyn Fn(&str) -> Option<String>) -> Result<(Box<dyn Backend>, BackendInfo), Failure> {
    let api_key = env(API_KEY_ENV).filter(|k| !k.is_empty());
    match settings.kind {
        BackendKind::Mock => {
            let path = settings.mock_script.as_deref().ok_or_else(|| fail(EXIT_CONFIG, "mock backend needs a script"))?;
            let text = read_text(path).map_err(|e| fail(EXIT_CONFIG, e))?;
            let script = Script::parse(&text).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
            let backend = ScriptedBackend::from_script(script).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
            let info = BackendInfo {
                kind: "mock".into(),
                id: backend.id().to_string(),
                endpoint: None,
                model: None,
                script_sha256: Some(sha256_hex(text.as_bytes())),
                api_key_set: false,
            };
            Ok((Box::new(backend), info))
        }
        BackendKind::Http => {
            let backend = HttpBackend::new(settings.http.clone(), api_key.clone()).map_err(|e| fail(EXIT_CONFIG, e))?;
            let info = BackendInfo {
                kind: "http".into(),
                id: backend.id().to_string(),
                endpoint: Some(backend.url().to_string()),
                model: Some(settings.http.model.clone()),
                script_sha256: None,
                api_key_set: api_key.is_some(),
            };
            Ok((Box::new(backend), info))
        }
    }
}

/// Counts calls passed through to the wrapped backend.
struct Counting<'a> {
    inner: &'a dyn Backend,
    calls: AtomicU64,
}

impl Backend for Counting<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn complete_batch(&self, requests: &[CompletionRequest], parallelism: usize) -> Vec<Result<Completion, BackendError>> {
        self.calls.fetch_add(requests.len() as u64, Ordering::SeqCst);
        self.inner.complete_batch(requests, parallelism)
    }
}

fn pipeline_exit(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Backend { .. } | PipelineError::EmptyBaseline => EXIT_BACKEND,
        PipelineError::Config(_) | PipelineError::Render(_) | PipelineError::NotApplicable(_) => EXIT_CONFIG,
    }
}

enum QueryOutcome {
    Done,
    NotStarted,
    Failed { code: i32, message: String },
}

pub fn cmd_run(args: &RunArgs, env: &dyn Fn(&str) -> Option<String>) -> Outcome {
    let eff = effective(args.backend.config.as_deref(), &args.layer()?, env)?;
    let dataset_path = eff.run.dataset.clone().ok_or_else(|| fail(EXIT_CONFIG, "no dataset given (--dataset or [run] dataset)"))?;
    let dataset_text = read_text(&dataset_path).map_err(|e| fail(EXIT_DATASET, e))?;
    let records = load_dataset(&dataset_path, None).map_err(|e| fail(EXIT_DATASET, e))?;
    let queries = records
        .iter()
        .map(TaskRecord::to_query)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(EXIT_DATASET, e))?;
    let banks = load_banks(eff.run.banks.as_deref()).map_err(|e| fail(EXIT_CONFIG, e))?;
    let (backend, backend_info) = make_backend(&eff.backend, env)?;

    let config_hash = eff.config_hash();
    let now = chrono::Utc::now();
    let out_dir = match &eff.run.out {
        Some(dir) => dir.clone(),
        None => eff.run.runs_dir.join(format!("{}-{}", now.format("%Y%m%dT%H%M%SZ"), &config_hash[..12])),
    };
    fs::create_dir_all(&out_dir).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", out_dir.display())))?;

    let dataset_info = DatasetInfo { path: dataset_path.clone(), sha256: sha256_hex(dataset_text.as_bytes()), records: records.len() };
    match RunManifest::load(&out_dir).map_err(|e| fail(EXIT_CONFIG, e))? {
        Some(existing) => {
            if existing.config_hash != config_hash {
                return Err(fail(EXIT_CONFIG, format!("{} holds a run with a different configuration", out_dir.display())));
            }
            if existing.dataset.sha256 != dataset_info.sha256 {
                return Err(fail(EXIT_DATASET, format!("{} holds a run over a different dataset", out_dir.display())));
            }
        }
        None => {
            let manifest = RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                timestamp: now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                config_hash: config_hash.clone(),
                config: eff.clone(),
                dataset: dataset_info,
                backend: backend_info,
                output_dir: out_dir.clone(),
            };
            manifest.write_new(&out_dir).map_err(|e| fail(EXIT_CONFIG, e))?;
        }
    }

    let results_file = out_dir.join(RESULTS_FILE);
    let done: HashSet<String> = if results_file.exists() {
        read_results(&results_file).map_err(|e| fail(EXIT_DATASET, e))?.into_iter().map(|r| r.query_id().to_string()).collect()
    } else {
        HashSet::new()
    };
    let pending: Vec<_> = queries.iter().filter(|q| !done.contains(&q.id)).collect();
    let writer = ResultsWriter::open(&results_file).map_err(|e| fail(EXIT_DATASET, e))?;

    let counting = Counting { inner: backend.as_ref(), calls: AtomicU64::new(0) };
    let stop = AtomicBool::new(false);
    let started = Instant::now();
    let outcomes = map_bounded(&pending, eff.run.jobs, |query| {
        if stop.load(Ordering::SeqCst) {
            return QueryOutcome::NotStarted;
        }
        match run_pipeline(query, &eff.pipeline, &counting, &banks) {
            Ok(result) => match writer.append(&result) {
                Ok(()) => QueryOutcome::Done,
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    QueryOutcome::Failed { code: EXIT_DATASET, message: e.to_string() }
                }
            },
            Err(e) => {
                let code = pipeline_exit(&e);
                if code != EXIT_OK {
                    stop.store(true, Ordering::SeqCst);
                }
                QueryOutcome::Failed { code, message: format!("query {}: {e}", query.id) }
            }
        }
    });

    // Put results back in dataset order so reruns are byte-identical.
    let mut all = read_results(&results_file).map_err(|e| fail(EXIT_DATASET, e))?;
    let order: HashMap<&str, usize> = queries.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    all.sort_by_key(|r| order.get(r.query_id()).copied().unwrap_or(usize::MAX));
    write_results_atomic(&results_file, &all).map_err(|e| fail(EXIT_DATASET, e))?;

    let completed = outcomes.iter().filter(|o| matches!(o, QueryOutcome::Done)).count();
    let failures: Vec<(i32, &String)> = outcomes
        .iter()
        .filter_map(|o| match o {
            QueryOutcome::Failed { code, message } => Some((*code, message)),
            _ => None,
        })
        .collect();
    let not_started = outcomes.iter().filter(|o| matches!(o, QueryOutcome::NotStarted)).count();
    eprintln!(
        "run: {completed} completed, {} already done, {} failed, {not_started} not started; {} backend calls in {} ms; output {}",
        done.len(),
        failures.len(),
        counting.calls.load(Ordering::SeqCst),
        started.elapsed().as_millis(),
        out_dir.display()
    );
    println!("{}", out_dir.display());
    match failures.first() {
        Some((code, message)) => Err(fail(*code, message)),
        None => Ok(()),
    }
}

fn uniform_label(results: &[&PipelineResult]) -> String {
    let labels: Vec<String> = results.iter().map(|r| r.trace.config.variant.to_string()).collect();
    match labels.first() {
        Some(first) if labels.iter().all(|l| l == first) => first.clone(),
        Some(_) => "mixed".to_string(),
        None => String::new(),
    }
}

pub fn cmd_eval(args: &EvalArgs, env: &dyn Fn(&str) -> Option<String>) -> Outcome {
    let run_dir = args.results.is_dir().then(|| args.results.clone());
    let manifest = match &run_dir {
        Some(dir) => RunManifest::load(dir).map_err(|e| fail(EXIT_DATASET, e))?,
        None => None,
    };
    let results_file = results_path(&args.results);
    let results_text = read_text(&results_file).map_err(|e| fail(EXIT_DATASET, e))?;
    let results = read_results(&results_file).map_err(|e| fail(EXIT_DATASET, e))?;
    if results.is_empty() {
        return Err(fail(EXIT_DATASET, format!("{}: no results", results_file.display())));
    }
    let gold_path = args
        .dataset
        .clone()
        .or_else(|| manifest.as_ref().and_then(|m| m.config.run.dataset.clone()))
        .ok_or_else(|| fail(EXIT_CONFIG, "no gold dataset given (--dataset)"))?;
    let gold_text = read_text(&gold_path).map_err(|e| fail(EXIT_DATASET, e))?;
    let gold = load_dataset(&gold_path, None).map_err(|e| fail(EXIT_DATASET, e))?;
    let by_id: HashMap<&str, &TaskRecord> = gold.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut seen = HashSet::new();
    for r in &results {
        let Some(g) = by_id.get(r.query_id()) else {
            return Err(fail(EXIT_DATASET, format!("result `{}` has no gold record", r.query_id())));
        };
        if g.task_kind != r.trace.query.task_kind {
            return Err(fail(EXIT_DATASET, format!("result `{}` is {}, gold is {}", r.query_id(), r.trace.query.task_kind, g.task_kind)));
        }
        if !seen.insert(r.query_id()) {
            return Err(fail(EXIT_DATASET, format!("result `{}` appears twice", r.query_id())));
        }
    }

    let needs_backend = args.facts == FactSource::Backend || args.judge == JudgeArg::Backend;
    let backend = if needs_backend {
        let eff = effective(args.backend.config.as_deref(), &args.backend.layer()?, env)?;
        Some((make_backend(&eff.backend, env)?.0, eff.pipeline.decoding))
    } else {
        None
    };
    let banks = BankSet::builtin();
    let mut calls: Vec<CallRecord> = Vec::new();

    let mut meta = BTreeMap::new();
    meta.insert("dataset_sha256".to_string(), sha256_hex(gold_text.as_bytes()));
    meta.insert("results_sha256".to_string(), sha256_hex(results_text.as_bytes()));
    if let Some(m) = &manifest {
        meta.insert("config_hash".to_string(), m.config_hash.clone());
    }
    if let Some(n) = args.clip {
        meta.insert("clip_sentences".to_string(), n.to_string());
    }
    let mut reports = Vec::new();
    for task in TaskKind::ALL {
        let group: Vec<&PipelineResult> = results.iter().filter(|r| r.trace.query.task_kind == task).collect();
        if group.is_empty() {
            continue;
        }
        let label = args.label.clone().unwrap_or_else(|| uniform_label(&group));
        let mut warnings = Vec::new();
        let missing = gold.iter().filter(|g| g.task_kind == task && !seen.contains(g.id.as_str())).count();
        if missing > 0 {
            warnings.push(format!("{missing} gold record(s) have no result"));
        }
        let mut buckets = Vec::new();
        let metrics = match task {
            TaskKind::ListQA => {
                let judgments: Vec<ListJudgment> = group
                    .iter()
                    .map(|r| {
                        let Gold::Entities(e) = &by_id[r.query_id()].gold else { unreachable!("checked task kind") };
                        ListJudgment::new(r.query_id(), parse_list_answer(&r.final_response), e.clone())
                    })
                    .collect();
                let score = micro_precision(&judgments).map_err(|e| fail(EXIT_DATASET, e))?;
                if score.no_predictions {
                    warnings.push("no predictions in any result; precision reported as 0".to_string());
                }
                Metrics::List(score)
            }
            TaskKind::MultiSpanQA => {
                let pairs: Vec<(Vec<String>, Vec<String>)> = group
                    .iter()
                    .map(|r| {
                        let Gold::Spans(s) = &by_id[r.query_id()].gold else { unreachable!("checked task kind") };
                        (parse_list_answer(&r.final_response), s.clone())
                    })
                    .collect();
                Metrics::MultiSpan(multispan_corpus(&pairs))
            }
            TaskKind::LongformBio => {
                let mut judgments = Vec::new();
                for r in &group {
                    let Gold::Facts { facts: gold_facts, rarity } = &by_id[r.query_id()].gold else {
                        unreachable!("checked task kind")
                    };
                    let response = match args.clip {
                        Some(n) => clip_sentences(&r.final_response, n),
                        None => r.final_response.as_str(),
                    };
                    let facts: Vec<String> = if response.trim().is_empty() {
                        Vec::new()
                    } else {
                        match (&backend, args.facts) {
                            (Some((b, decoding)), FactSource::Backend) => {
                                let bank = banks.get(task, BankStep::FactExtract, None).map_err(|e| fail(EXIT_CONFIG, e))?;
                                extract_facts(response, b.as_ref(), bank, decoding, &mut calls).map_err(|e| fail(EXIT_BACKEND, e))?
                            }
                            _ => cove_core::text::sentences(response).into_iter().map(str::to_string).collect(),
                        }
                    };
                    let mode = match &backend {
                        Some((b, decoding)) if args.judge == JudgeArg::Backend => {
                            JudgeMode::BackendJudge { backend: b.as_ref(), decoding: decoding.clone() }
                        }
                        _ => JudgeMode::ExactNormalized,
                    };
                    let mut judged = Vec::with_capacity(facts.len());
                    for f in facts {
                        let v = judge_fact(&f, gold_facts, &mode, &mut calls).map_err(|e| fail(EXIT_BACKEND, e))?;
                        if let Some(w) = v.warning {
                            warnings.push(w);
                        }
                        judged.push((f, v.supported));
                    }
                    judgments.push(FactJudgment { response_id: r.query_id().to_string(), facts: judged, rarity: *rarity });
                }
                let score = factscore(&judgments).map_err(|e| fail(EXIT_DATASET, e))?;
                buckets = factscore_by_bucket(&judgments)
                    .into_iter()
                    .map(|(rarity, score)| BucketScore { rarity, score })
                    .collect();
                Metrics::Bio(score)
            }
        };
        let mut report = EvalReport::new(task, label, group.len(), metrics);
        report.buckets = buckets;
        report.meta = meta.clone();
        report.warnings = warnings;
        reports.push(report);
    }

    let table = render_table(&reports);
    print!("{table}");
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize") + "\n";
    if let Some(out) = &args.out {
        fs::write(out, &json).map_err(|e| fail(EXIT_DATASET, format!("{}: {e}", out.display())))?;
    }
    if let Some(dir) = &run_dir {
        fs::write(dir.join(REPORT_JSON), &json).map_err(|e| fail(EXIT_DATASET, e))?;
        fs::write(dir.join(REPORT_TXT), &table).map_err(|e| fail(EXIT_DATASET, e))?;
        if !calls.is_empty() {
            let lines: String = calls.iter().map(|c| encode_call(c) + "\n").collect();
            fs::write(dir.join("eval_calls.jsonl"), lines).map_err(|e| fail(EXIT_DATASET, e))?;
        }
    }
    Ok(())
}

pub fn cmd_replay(args: &ReplayArgs) -> Outcome {
    let manifest = if args.results.is_dir() { RunManifest::load(&args.results).map_err(|e| fail(EXIT_DATASET, e))? } else { None };
    let banks_dir = args.banks.clone().or_else(|| manifest.and_then(|m| m.config.run.banks));
    let banks = load_banks(banks_dir.as_deref()).map_err(|e| fail(EXIT_CONFIG, e))?;
    let file = results_path(&args.results);
    let text = read_text(&file).map_err(|e| fail(EXIT_DATASET, e))?;
    let results = read_results(&file).map_err(|e| fail(EXIT_DATASET, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();

    let mut calls = 0usize;
    for (recorded, line) in results.iter().zip(lines) {
        let id = recorded.query_id();
        let replayer = Replayer::strict(recorded.trace.calls.clone());
        let outcome = run_pipeline(&recorded.trace.query, &recorded.trace.config, &replayer, &banks);
        calls += recorded.trace.calls.len() - replayer.remaining();
        if let Some(d) = replayer.divergences().first() {
            return Err(fail(EXIT_DIVERGENCE, format!("divergence in query {id} at {d}")));
        }
        let regenerated = match outcome {
            Ok(r) => r,
            Err(e) => return Err(fail(EXIT_DIVERGENCE, format!("divergence in query {id}: replay failed: {e}"))),
        };
        if let Err(d) = replayer.finish() {
            return Err(fail(EXIT_DIVERGENCE, format!("divergence in query {id} at {d}")));
        }
        if encode_result(&regenerated) != line {
            return Err(fail(EXIT_DIVERGENCE, format!("divergence in query {id}: regenerated result differs from the recording")));
        }
    }
    eprintln!("replay: {} queries, {calls} recorded calls matched, 0 live calls", results.len());
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Outcome {
    if args.datasets.is_empty() && args.config.is_none() && args.banks.is_none() && args.mock.is_empty() {
        return Err(fail(EXIT_CONFIG, "nothing to validate"));
    }
    if let Some(path) = &args.config {
        ConfigLayer::load(path).and_then(|l| l.resolve()).map_err(|e| fail(EXIT_CONFIG, e))?;
        println!("{}: ok", path.display());
    }
    if let Some(dir) = &args.banks {
        let banks = load_banks(Some(dir)).map_err(|e| fail(EXIT_CONFIG, e))?;
        println!("{}: ok ({} banks)", dir.display(), banks.len());
    }
    for path in &args.mock {
        let script = Script::load(path).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
        let rules = script.rules.len();
        ScriptedBackend::from_script(script).map_err(|e| fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
        println!("{}: ok ({rules} rules)", path.display());
    }
    let task = args.task.as_deref().map(str::parse::<TaskKind>).transpose().map_err(|e| fail(EXIT_CONFIG, e))?;
    for path in &args.datasets {
        let records = load_dataset(path, task).map_err(|e| fail(EXIT_DATASET, e))?;
        let counts = count_by_task(&records).map(|(t, n)| format!("{t} {n}")).join(", ");
        println!("{}: {} records ({counts})", path.display(), records.len());
    }
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Outcome {
    let mut all: Vec<EvalReport> = Vec::new();
    for dir in &args.runs {
        let path = if dir.is_dir() { dir.join(REPORT_JSON) } else { dir.clone() };
        let text = read_text(&path).map_err(|e| fail(EXIT_DATASET, format!("{e} (run `cove eval` first)")))?;
        let reports: Vec<EvalReport> = serde_json::from_str(&text).map_err(|e| fail(EXIT_DATASET, format!("{}: {e}", path.display())))?;
        all.extend(reports);
    }
    print!("{}", render_table(&all));
    if let Some(out) = &args.json {
        let json = serde_json::to_string_pretty(&all).expect("reports serialize") + "\n";
        fs::write(out, json).map_err(|e| fail(EXIT_DATASET, format!("{}: {e}", out.display())))?;
    }
    Ok(())
}
