//! Recording wrapper and replay backend.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use cove_core::{Backend, BackendError, CallRecord, Completion, CompletionRequest};

/// Passes calls through to `inner` and keeps a [`CallRecord`] for each
/// successful one. Appends are serialized; batches are recorded in request
/// order.
pub struct Recorder<B> {
    inner: B,
    records: Mutex<Vec<CallRecord>>,
}

impl<B: Backend> Recorder<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, records: Mutex::new(Vec::new()) }
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().expect("recorder poisoned").clone()
    }

    pub fn into_parts(self) -> (B, Vec<CallRecord>) {
        (self.inner, self.records.into_inner().expect("recorder poisoned"))
    }

    fn push(&self, request: &CompletionRequest, completion: &Completion) {
        let mut records = self.records.lock().expect("recorder poisoned");
        let seq = records.len() as u64;
        records.push(CallRecord {
            seq,
            step: request.step,
            prompt: request.prompt.clone(),
            completion: completion.text.clone(),
            backend_id: self.inner.id().to_string(),
            wall_ms: completion.wall_ms,
        });
    }
}

impl<B: Backend> Backend for Recorder<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let completion = self.inner.complete(request)?;
        self.push(request, &completion);
        Ok(completion)
    }

    fn complete_batch(
        &self,
        requests: &[CompletionRequest],
        parallelism: usize,
    ) -> Vec<Result<Completion, BackendError>> {
        let out = self.inner.complete_batch(requests, parallelism);
        for (request, result) in requests.iter().zip(&out) {
            if let Ok(c) = result {
                self.push(request, c);
            }
        }
        out
    }
}

/// Where a replayed prompt first differed from the recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub seq: u64,
    pub message: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "seq {}: {}", self.seq, self.message)
    }
}

fn first_difference(a: &str, b: &str) -> usize {
    a.bytes().zip(b.bytes()).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()))
}

enum Mode<'a> {
    /// Calls must arrive in recorded order with byte-identical prompts.
    Strict { cursor: Mutex<usize> },
    /// Completions are looked up by prompt; unknown prompts go to the
    /// fallback backend if there is one.
    ByPrompt { table: Mutex<HashMap<String, VecDeque<CallRecord>>>, fallback: Option<&'a dyn Backend> },
}

/// Serves recorded completions instead of calling a model.
pub struct Replayer<'a> {
    id: String,
    records: Vec<CallRecord>,
    mode: Mode<'a>,
    divergences: Mutex<Vec<Divergence>>,
    live_calls: AtomicU64,
}

impl<'a> Replayer<'a> {
    pub fn strict(records: Vec<CallRecord>) -> Self {
        let id = records.first().map(|r| r.backend_id.clone()).unwrap_or_else(|| "replay".to_string());
        Self {
            id,
            records,
            mode: Mode::Strict { cursor: Mutex::new(0) },
            divergences: Mutex::new(Vec::new()),
            live_calls: AtomicU64::new(0),
        }
    }

    pub fn by_prompt(records: Vec<CallRecord>, fallback: Option<&'a dyn Backend>) -> Self {
        let mut table: HashMap<String, VecDeque<CallRecord>> = HashMap::new();
        for r in &records {
            table.entry(r.prompt.clone()).or_default().push_back(r.clone());
        }
        let id = records.first().map(|r| r.backend_id.clone()).unwrap_or_else(|| "replay".to_string());
        Self {
            id,
            records,
            mode: Mode::ByPrompt { table: Mutex::new(table), fallback },
            divergences: Mutex::new(Vec::new()),
            live_calls: AtomicU64::new(0),
        }
    }

    pub fn divergences(&self) -> Vec<Divergence> {
        self.divergences.lock().expect("replayer poisoned").clone()
    }

    /// Calls forwarded to the fallback backend.
    pub fn live_calls(&self) -> u64 {
        self.live_calls.load(Ordering::SeqCst)
    }

    /// Recorded calls not yet served (strict mode).
    pub fn remaining(&self) -> usize {
        match &self.mode {
            Mode::Strict { cursor } => self.records.len() - *cursor.lock().expect("replayer poisoned"),
            Mode::ByPrompt { table, .. } => table.lock().expect("replayer poisoned").values().map(VecDeque::len).sum(),
        }
    }

    /// Errors if any call diverged or, in strict mode, recorded calls were
    /// left unused.
    pub fn finish(&self) -> Result<(), Divergence> {
        if let Some(d) = self.divergences().into_iter().next() {
            return Err(d);
        }
        if let Mode::Strict { cursor } = &self.mode {
            let at = *cursor.lock().expect("replayer poisoned");
            if at < self.records.len() {
                return Err(Divergence {
                    seq: self.records[at].seq,
                    message: format!("{} recorded call(s) were never replayed", self.records.len() - at),
                });
            }
        }
        Ok(())
    }

    fn diverge(&self, seq: u64, message: String) -> BackendError {
        self.divergences.lock().expect("replayer poisoned").push(Divergence { seq, message: message.clone() });
        BackendError::ReplayDivergence { seq, message }
    }
}

impl Backend for Replayer<'_> {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        match &self.mode {
            Mode::Strict { cursor } => {
                let mut at = cursor.lock().expect("replayer poisoned");
                let Some(record) = self.records.get(*at) else {
                    return Err(self.diverge(*at as u64, "more calls than were recorded".to_string()));
                };
                if record.step != request.step {
                    return Err(self.diverge(record.seq, format!("step {} where {} was recorded", request.step, record.step)));
                }
                if record.prompt != request.prompt {
                    let byte = first_difference(&record.prompt, &request.prompt);
                    return Err(self.diverge(record.seq, format!("prompt differs from the recording at byte {byte}")));
                }
                *at += 1;
                Ok(Completion::new(record.completion.clone(), record.wall_ms))
            }
            Mode::ByPrompt { table, fallback } => {
                let hit = table.lock().expect("replayer poisoned").get_mut(&request.prompt).and_then(VecDeque::pop_front);
                match (hit, fallback) {
                    (Some(r), _) => Ok(Completion::new(r.completion, r.wall_ms)),
                    (None, Some(live)) => {
                        self.live_calls.fetch_add(1, Ordering::SeqCst);
                        live.complete(request)
                    }
                    (None, None) => Err(self.diverge(u64::MAX, "prompt was never recorded".to_string())),
                }
            }
        }
    }
}
