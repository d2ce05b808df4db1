//! The text-completion interface every pipeline stage goes through.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{DecodingParams, Step};

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub decoding: DecodingParams,
    /// Stage issuing the call. Backends ignore it; recorders keep it.
    pub step: Step,
}

impl CompletionRequest {
    pub fn new(step: Step, prompt: impl Into<String>, decoding: &DecodingParams) -> Self {
        Self { prompt: prompt.into(), decoding: decoding.clone(), step }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Wall time of the call as measured (or simulated) by the backend.
    pub wall_ms: u64,
}

impl Completion {
    pub fn new(text: impl Into<String>, wall_ms: u64) -> Self {
        Self { text: text.into(), wall_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("no scripted rule matched prompt: {excerpt}")]
    NoRuleMatched { excerpt: String },
    #[error("prompt of {tokens} tokens exceeds backend limit of {limit}")]
    TokenLimitExceeded { tokens: usize, limit: usize },
    #[error("request rejected with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay divergence at seq {seq}: {message}")]
    ReplayDivergence { seq: u64, message: String },
}

/// A text-completion provider. Implementations must be reentrant: the
/// pipeline shares one backend across concurrent stages.
pub trait Backend: Sync {
    /// Identifier stored in every call record.
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;

    /// Completes `requests` with at most `parallelism` calls in flight.
    /// `out[i]` always answers `requests[i]`; failures occupy their own slot.
    ///
    /// The default runs sequentially in input order.
    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<Completion, BackendError>> {
        let _ = parallelism;
        requests.iter().map(|r| self.complete(r)).collect()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<Completion, BackendError>> {
        (**self).complete_batch(requests, parallelism)
    }
}

impl<B: Backend + ?Sized> Backend for alloc::boxed::Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<Completion, BackendError>> {
        (**self).complete_batch(requests, parallelism)
    }
}

/// Backend built from a closure; handy for tests and adapters.
pub struct FnBackend<F> {
    id: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Sync,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, BackendError> + Sync,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        (self.f)(request).map(|text| Completion::new(text, 0))
    }
}
