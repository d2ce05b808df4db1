//! Backend implementations: HTTP, scripted mock, record and replay.

pub mod http;
pub mod record;
pub mod scripted;

pub use http::{HttpBackend, HttpSettings};
pub use record::{Divergence, Recorder, Replayer};
pub use scripted::{Matcher, Script, ScriptError, ScriptedBackend, ScriptedRule};
