//! Chain-of-verification orchestration core.
//!
//! A draft answer is produced, verification questions are planned against
//! it, those questions are answered (jointly, in two steps, or one prompt per
//! question), optionally cross-checked fact by fact, and a final revised
//! answer is generated. Everything here is pure over a [`Backend`] trait and
//! builds without `std`; IO, HTTP, threads and the CLI live in the `cove`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backend;
pub mod datasets;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod text;
pub mod trace;

pub use backend::{Backend, BackendError, Completion, CompletionRequest};
pub use model::{
    CallRecord, ConfigError, CrossCheckVerdict, DecodingParams, FailurePolicy, PipelineConfig,
    PipelineResult, PipelineTrace, PlannedVerification, PlannerStrategy, Query, Step, TaskKind,
    validate_config, Variant, VerdictStatus, VerificationQA,
};
pub use pipeline::{run, PipelineError, VerificationPlan};
pub use prompts::{BankSet, DemoBank};
