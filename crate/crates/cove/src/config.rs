//! Layered run configuration: built-in defaults, then a TOML file, then
//! `COVE_*` environment variables, then command-line flags.
//!
//! ```toml
//! [pipeline]
//! variant = "factored"          # baseline | zero_shot | zero_shot_cot | joint | two_step | factored | factor_revise
//! planner_strategy = "open"     # open | yesno | rule
//! max_questions = 10
//! parallelism = 4
//! seed = 0
//! on_failure = "abort"          # abort | skip
//!
//! [decoding]
//! temperature = 0.0
//! max_tokens = 512
//! stop_sequences = []
//!
//! [backend]
//! kind = "http"                 # http | mock
//! endpoint = "http://localhost:8000/v1"
//! model = "llama-2-70b-chat"
//! timeout_secs = 120
//! max_attempts = 3
//! backoff_ms = 500
//! token_limit = 4096
//! mock_script = "fixtures/politicians.rules"
//!
//! [run]
//! dataset = "data/sample/list.jsonl"
//! out = "runs/politicians"             # fixed output directory
//! runs_dir = "runs"             # parent for timestamped directories
//! jobs = 1
//! banks = "my-banks"            # directory of replacement bank files
//! ```
//!
//! The API token is read from `COVE_API_KEY` only and never written out.

use std::path::{Path, PathBuf};

use cove_core::{validate_config, ConfigError, DecodingParams, PipelineConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::HttpSettings;

pub const API_KEY_ENV: &str = "COVE_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineLayer {
    pub variant: Option<String>,
    pub planner_strategy: Option<String>,
    pub max_questions: Option<usize>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub on_failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodingLayer {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub stop_sequences: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendLayer {
    pub kind: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub token_limit: Option<usize>,
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLayer {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runs_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub banks: Option<PathBuf>,
}

/// One source of settings; unset fields defer to lower layers.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    #[serde(default)]
    pub pipeline: PipelineLayer,
    #[serde(default)]
    pub decoding: DecodingLayer,
    #[serde(default)]
    pub backend: BackendLayer,
    #[serde(default)]
    pub run: RunLayer,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => { $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )* };
}

impl ConfigLayer {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigFileError> {
        toml::from_str(text).map_err(|e| ConfigFileError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigFileError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text, path)
    }

    /// Settings from `COVE_ENDPOINT`, `COVE_MODEL`, `COVE_TIMEOUT_SECS` and
    /// `COVE_MAX_ATTEMPTS`, read through `get`.
    pub fn from_env(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigFileError> {
        fn num<T: std::str::FromStr>(name: &str, v: Option<String>) -> Result<Option<T>, ConfigFileError> {
            v.map(|s| {
                s.trim().parse().map_err(|_| ConfigFileError::Env { name: name.to_string(), message: format!("not a number: `{s}`") })
            })
            .transpose()
        }
        let mut layer = Self::default();
        layer.backend.endpoint = get("COVE_ENDPOINT");
        layer.backend.model = get("COVE_MODEL");
        layer.backend.timeout_secs = num("COVE_TIMEOUT_SECS", get("COVE_TIMEOUT_SECS"))?;
        layer.backend.max_attempts = num("COVE_MAX_ATTEMPTS", get("COVE_MAX_ATTEMPTS"))?;
        Ok(layer)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &ConfigLayer) -> Self {
        overlay!(self.pipeline, top.pipeline, variant, planner_strategy, max_questions, parallelism, seed, on_failure);
        overlay!(self.decoding, top.decoding, temperature, max_tokens, stop_sequences);
        overlay!(self.backend, top.backend, kind, endpoint, model, timeout_secs, max_attempts, backoff_ms, token_limit, mock_script);
        overlay!(self.run, top.run, dataset, out, runs_dir, jobs, banks);
        self
    }

    pub fn resolve(&self) -> Result<Effective, ConfigFileError> {
        let p = &self.pipeline;
        let defaults = PipelineConfig::default();
        let pipeline = PipelineConfig {
            variant: p.variant.as_deref().map(str::parse).transpose()?.unwrap_or(defaults.variant),
            planner_strategy: p.planner_strategy.as_deref().map(str::parse).transpose()?.unwrap_or(defaults.planner_strategy),
            max_questions: p.max_questions.unwrap_or(defaults.max_questions),
            parallelism: p.parallelism.unwrap_or(defaults.parallelism),
            seed: p.seed.unwrap_or(defaults.seed),
            on_failure: p.on_failure.as_deref().map(str::parse).transpose()?.unwrap_or(defaults.on_failure),
            decoding: DecodingParams {
                temperature: self.decoding.temperature.unwrap_or(defaults.decoding.temperature),
                max_tokens: self.decoding.max_tokens.unwrap_or(defaults.decoding.max_tokens),
                stop_sequences: self.decoding.stop_sequences.clone().unwrap_or_default(),
            },
        };
        validate_config(&pipeline)?;

        let b = &self.backend;
        let http_defaults = HttpSettings::default();
        let kind = b.kind.unwrap_or(if b.mock_script.is_some() { BackendKind::Mock } else { BackendKind::Http });
        if kind == BackendKind::Mock && b.mock_script.is_none() {
            return Err(ConfigError::InvalidConfig("mock backend needs a mock_script".into()).into());
        }
        let backend = BackendSettings {
            kind,
            http: HttpSettings {
                endpoint: b.endpoint.clone().unwrap_or(http_defaults.endpoint),
                model: b.model.clone().unwrap_or(http_defaults.model),
                timeout_secs: b.timeout_secs.unwrap_or(http_defaults.timeout_secs),
                max_attempts: b.max_attempts.unwrap_or(http_defaults.max_attempts),
                backoff_ms: b.backoff_ms.unwrap_or(http_defaults.backoff_ms),
                token_limit: b.token_limit,
            },
            mock_script: b.mock_script.clone(),
        };
        let jobs = self.run.jobs.unwrap_or(1);
        if jobs == 0 {
            return Err(ConfigError::InvalidConfig("jobs must be at least 1".into()).into());
        }
        let run = RunSettings {
            dataset: self.run.dataset.clone(),
            out: self.run.out.clone(),
            runs_dir: self.run.runs_dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
            jobs,
            banks: self.run.banks.clone(),
        };
        Ok(Effective { pipeline, backend, run })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub http: HttpSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub runs_dir: PathBuf,
    pub jobs: usize,
    pub banks: Option<PathBuf>,
}

/// Fully resolved settings, echoed into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effective {
    pub pipeline: PipelineConfig,
    pub backend: BackendSettings,
    pub run: RunSettings,
}

impl Effective {
    /// Hash of everything that can change results: pipeline settings,
    /// backend identity and the bank override.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "pipeline": self.pipeline,
            "backend": self.backend,
            "banks": self.run.banks,
            "dataset": self.run.dataset,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }
}
