//! Proposer backends: an HTTP chat-completions client, a replay script and a
//! random-perturbation baseline, all behind [`Proposer`].

mod baseline;
mod http;
mod replay;

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::SolutionScore;
use crate::model::ProblemSpec;

pub use baseline::{baseline_propose, BaselineProposer, BASELINE_COLD_AREA};
pub use http::{backoff_delay, HttpProposer, InFlightLimiter, LlmConfig};
pub use replay::ReplayProposer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    /// Earlier turns, oldest first.
    #[serde(default)]
    pub conversation: Vec<Turn>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ProposerRequest {
    pub fn new(user_text: impl Into<String>) -> Self {
        Self {
            system_text: None,
            user_text: user_text.into(),
            conversation: Vec::new(),
            temperature: 1.0,
            seed: None,
        }
    }

    pub fn check(&self) -> Result<(), ProposerError> {
        if self.user_text.trim().is_empty() {
            return Err(ProposerError::InvalidRequest("empty user text".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProposerError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerResponse {
    pub raw_text: String,
    pub backend_id: String,
    pub latency: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<(u64, u64)>,
}

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed service response: {0}")]
    BadResponse(String),
    #[error("replay script exhausted after {served} response(s)")]
    ReplayExhausted { served: usize },
    #[error("token budget exceeded: {used} used of {limit}")]
    BudgetExceeded { used: u64, limit: u64 },
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{path}: {detail}")]
    Script { path: String, detail: String },
}

impl ProposerError {
    /// The service itself is unavailable or refusing work; later runs
    /// against it would fail the same way.
    pub fn is_outage(&self) -> bool {
        matches!(
            self,
            ProposerError::Transport { .. }
                | ProposerError::Auth { .. }
                | ProposerError::BudgetExceeded { .. }
        )
    }

    /// Configuration and credential problems, as opposed to a backend that
    /// ran and then failed.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ProposerError::MissingCredential(_)
                | ProposerError::Script { .. }
                | ProposerError::InvalidRequest(_)
        )
    }
}

pub trait Proposer: Send {
    fn backend_id(&self) -> String;

    fn propose(&mut self, request: &ProposerRequest) -> Result<ProposerResponse, ProposerError>;

    /// Called with every evaluated attempt; stateless backends ignore it.
    fn observe(&mut self, _score: &SolutionScore) {}
}

/// Which backend a run uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposerConfig {
    Llm(LlmConfig),
    /// `path` is a JSON array of strings or a directory of text files.
    Replay {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        responses: Vec<String>,
    },
    #[default]
    Baseline,
}

impl ProposerConfig {
    pub fn label(&self) -> &'static str {
        match self {
            ProposerConfig::Llm(_) => "llm",
            ProposerConfig::Replay { .. } => "replay",
            ProposerConfig::Baseline => "baseline",
        }
    }

    /// Build a backend for one run. `limiter` is shared by every HTTP backend
    /// built for the same experiment.
    pub fn build(
        &self,
        problem: &ProblemSpec,
        seed: u64,
        limiter: Option<Arc<InFlightLimiter>>,
    ) -> Result<Box<dyn Proposer>, ProposerError> {
        Ok(match self {
            ProposerConfig::Llm(cfg) => {
                let limiter =
                    limiter.unwrap_or_else(|| Arc::new(InFlightLimiter::new(cfg.max_in_flight)));
                Box::new(HttpProposer::new(cfg.clone(), limiter, seed)?)
            }
            ProposerConfig::Replay { path, responses } => match path {
                Some(p) => Box::new(ReplayProposer::from_path(p)?),
                None => Box::new(ReplayProposer::new(responses.clone())),
            },
            ProposerConfig::Baseline => Box::new(BaselineProposer::new(problem.clone(), seed)),
        })
    }
}

/// Append-only JSON-lines log shared by concurrent runs.
#[derive(Debug, Clone)]
pub struct TranscriptSink {
    file: Arc<Mutex<File>>,
}

#[derive(Debug, Serialize)]
pub struct TranscriptEntry<'a> {
    pub run: &'a str,
    pub iteration: u32,
    pub attempt: u32,
    pub request: &'a ProposerRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<&'a ProposerResponse>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TranscriptSink {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Arc::new(Mutex::new(file)),
        })
    }

    pub fn record(&self, entry: &TranscriptEntry<'_>) -> std::io::Result<()> {
        let mut line = serde_json::to_string(entry).map_err(std::io::Error::other)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_checks() {
        assert!(ProposerRequest::new("go").check().is_ok());
        assert!(ProposerRequest::new("  ").check().is_err());
        let mut r = ProposerRequest::new("go");
        r.temperature = -1.0;
        assert!(r.check().is_err());
    }

    #[test]
    fn config_json_shapes() {
        let c: ProposerConfig = serde_json::from_str(r#"{"kind": "baseline"}"#).unwrap();
        assert_eq!(c, ProposerConfig::Baseline);
        let c: ProposerConfig =
            serde_json::from_str(r#"{"kind": "replay", "responses": ["a", "b"]}"#).unwrap();
        assert_eq!(c.label(), "replay");
        let c: ProposerConfig = serde_json::from_str(
            r#"{"kind": "llm", "endpoint": "http://localhost:1/v1/chat/completions", "model": "m"}"#,
        )
        .unwrap();
        match c {
            ProposerConfig::Llm(cfg) => {
                assert_eq!(cfg.temperature, 1.0);
                assert_eq!(cfg.max_in_flight, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transcript_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let sink = TranscriptSink::create(&path).unwrap();
        let req = ProposerRequest::new("hello");
        for i in 0..3 {
            sink.record(&TranscriptEntry {
                run: "r",
                iteration: i,
                attempt: 0,
                request: &req,
                response: None,
                error: Some("x".into()),
            })
            .unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["request"]["user_text"], "hello");
    }
}
