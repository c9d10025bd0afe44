use std::path::Path;
use std::time::Duration;

use super::{Proposer, ProposerError, ProposerRequest, ProposerResponse};

/// Serves a fixed list of responses in order.
#[derive(Debug, Clone)]
pub struct ReplayProposer {
    responses: Vec<String>,
    next: usize,
}

impl ReplayProposer {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses, next: 0 }
    }

    /// A JSON array of strings, or a directory whose files are served in
    /// file-name order.
    pub fn from_path(path: &Path) -> Result<Self, ProposerError> {
        let err = |detail: String| ProposerError::Script {
            path: path.display().to_string(),
            detail,
        };
        if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| err(e.to_string()))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            let responses = files
                .iter()
                .map(std::fs::read_to_string)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(e.to_string()))?;
            Ok(Self::new(responses))
        } else {
            let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            let responses: Vec<String> =
                serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
            Ok(Self::new(responses))
        }
    }

    pub fn remaining(&self) -> usize {
        self.responses.len() - self.next
    }
}

impl Proposer for ReplayProposer {
    fn backend_id(&self) -> String {
        "replay".to_owned()
    }

    fn propose(&mut self, request: &ProposerRequest) -> Result<ProposerResponse, ProposerError> {
        request.check()?;
        let text = self
            .responses
            .get(self.next)
            .ok_or(ProposerError::ReplayExhausted { served: self.next })?;
        self.next += 1;
        Ok(ProposerResponse {
            raw_text: text.clone(),
            backend_id: self.backend_id(),
            latency: Duration::ZERO,
            token_usage: None,
        })
    }
}
