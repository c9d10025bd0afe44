use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Proposer, ProposerError, ProposerRequest, ProposerResponse, Role};

fn default_temperature() -> f64 {
    1.0
}
fn default_timeout_secs() -> f64 {
    120.0
}
fn default_max_retries() -> u32 {
    4
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    30_000
}
fn default_api_key_env() -> String {
    "TRUSSLOOP_API_KEY".to_owned()
}
fn default_max_in_flight() -> usize {
    2
}

/// Chat-completions endpoint settings. The credential is read from the
/// environment variable named by `api_key_env`; it never appears in config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Send requests without an `Authorization` header.
    #[serde(default)]
    pub anonymous: bool,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Stop once this many prompt + completion tokens have been reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_total_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: default_temperature(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_max_ms: default_backoff_max_ms(),
            api_key_env: default_api_key_env(),
            anonymous: false,
            max_in_flight: default_max_in_flight(),
            max_total_tokens: None,
            system_text: None,
        }
    }

    pub fn check(&self) -> Result<(), ProposerError> {
        let bad = |m: &str| Err(ProposerError::InvalidRequest(m.to_owned()));
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout_secs must be > 0");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be >= 0");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be >= 1");
        }
        if self.endpoint.is_empty() || self.model.is_empty() {
            return bad("endpoint and model are required");
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests across runs.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightPermit(self)
    }

    pub fn active(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Delay before retry number `retry` (1-based): `base · 2^(retry-1) · (1 + jitter)`,
/// capped at `max`. With `jitter` in `[0, 0.5)` the sequence never decreases.
pub fn backoff_delay(retry: u32, base: Duration, max: Duration, jitter: f64) -> Duration {
    let factor = 2f64.powi(retry.saturating_sub(1).min(62) as i32) * (1.0 + jitter);
    let secs = (base.as_secs_f64() * factor).min(max.as_secs_f64());
    Duration::from_secs_f64(secs)
}

enum Attempt {
    Done(String, Option<(u64, u64)>),
    Retry(String, Option<Duration>),
    Fatal(ProposerError),
}

pub struct HttpProposer {
    config: LlmConfig,
    agent: ureq::Agent,
    limiter: Arc<InFlightLimiter>,
    credential: Option<String>,
    rng: ChaCha8Rng,
    tokens_used: u64,
    /// Delays actually slept, for inspection.
    pub retry_delays: Vec<Duration>,
}

impl HttpProposer {
    pub fn new(
        config: LlmConfig,
        limiter: Arc<InFlightLimiter>,
        seed: u64,
    ) -> Result<Self, ProposerError> {
        config.check()?;
        let credential = if config.anonymous {
            None
        } else {
            Some(
                std::env::var(&config.api_key_env)
                    .map_err(|_| ProposerError::MissingCredential(config.api_key_env.clone()))?,
            )
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            limiter,
            credential,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tokens_used: 0,
            retry_delays: Vec::new(),
        })
    }

    pub fn tokens_used(&self) -> u64 {
        self.tokens_used
    }

    /// The JSON body sent for `request`.
    pub fn wire_body(&self, request: &ProposerRequest) -> Value {
        let role = |r: Role| match r {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let mut messages = Vec::new();
        if let Some(s) = request
            .system_text
            .as_ref()
            .or(self.config.system_text.as_ref())
        {
            messages.push(json!({"role": "system", "content": s}));
        }
        for t in &request.conversation {
            messages.push(json!({"role": role(t.role), "content": t.text}));
        }
        messages.push(json!({"role": "user", "content": request.user_text}));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &str) -> Attempt {
        let _permit = self.limiter.acquire();
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.credential {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return classify_transport(e),
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return classify_transport(e),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok((content, usage)) => Attempt::Done(content, usage),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(ProposerError::Auth { status }),
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}"), retry_after),
            _ => Attempt::Fatal(ProposerError::Rejected {
                status,
                body: truncate(&text, 500),
            }),
        }
    }
}

fn classify_transport(e: ureq::Error) -> Attempt {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Protocol(_)
        | ureq::Error::BodyStalled => Attempt::Retry(e.to_string(), None),
        other => Attempt::Fatal(ProposerError::Transport {
            attempts: 1,
            detail: other.to_string(),
        }),
    }
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_owned(),
    }
}

/// `choices[0].message.content` and `usage` from a completion body.
fn extract_content(text: &str) -> Result<(String, Option<(u64, u64)>), ProposerError> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| ProposerError::BadResponse(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProposerError::BadResponse("no choices[0].message.content".into()))?;
    let usage = v.get("usage").and_then(|u| {
        Some((
            u.get("prompt_tokens")?.as_u64()?,
            u.get("completion_tokens")?.as_u64()?,
        ))
    });
    Ok((content.to_owned(), usage))
}

impl Proposer for HttpProposer {
    fn backend_id(&self) -> String {
        format!("llm:{}", self.config.model)
    }

    fn propose(&mut self, request: &ProposerRequest) -> Result<ProposerResponse, ProposerError> {
        request.check()?;
        if let Some(limit) = self.config.max_total_tokens {
            if self.tokens_used >= limit {
                return Err(ProposerError::BudgetExceeded {
                    used: self.tokens_used,
                    limit,
                });
            }
        }
        let body = self.wire_body(request).to_string();
        let start = Instant::now();
        let base = Duration::from_millis(self.config.backoff_base_ms);
        let max = Duration::from_millis(self.config.backoff_max_ms);
        let mut last_delay = Duration::ZERO;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(raw_text, usage) => {
                    if let Some((p, c)) = usage {
                        self.tokens_used += p + c;
                    }
                    return Ok(ProposerResponse {
                        raw_text,
                        backend_id: self.backend_id(),
                        latency: start.elapsed(),
                        token_usage: usage,
                    });
                }
                Attempt::Fatal(ProposerError::Transport { detail, .. }) => {
                    return Err(ProposerError::Transport { attempts, detail })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(detail, retry_after) => {
                    if attempts > self.config.max_retries {
                        return Err(ProposerError::Transport { attempts, detail });
                    }
                    let jitter = self.rng.random_range(0.0..0.5);
                    let mut delay = backoff_delay(attempts, base, max, jitter);
                    if let Some(ra) = retry_after {
                        delay = delay.max(ra.min(max));
                    }
                    delay = delay.max(last_delay);
                    last_delay = delay;
                    self.retry_delays.push(delay);
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposer::Turn;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned `(status, body)` per connection, then stops.
    fn stub_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!(
            "http://{}/v1/chat/completions",
            listener.local_addr().unwrap()
        );
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn ok_body(text: &str) -> String {
        json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 5}
        })
        .to_string()
    }

    fn config(url: String) -> LlmConfig {
        LlmConfig {
            anonymous: true,
            backoff_base_ms: 1,
            backoff_max_ms: 20,
            timeout_secs: 5.0,
            ..LlmConfig::new(url, "stub-model")
        }
    }

    #[test]
    fn retries_429_then_succeeds() {
        let (url, server) = stub_server(vec![(429, "{}".into()), (200, ok_body("hello"))]);
        let mut p = HttpProposer::new(config(url), Arc::new(InFlightLimiter::new(2)), 7).unwrap();
        let mut req = ProposerRequest::new("prompt");
        req.conversation.push(Turn {
            role: Role::Assistant,
            text: "earlier".into(),
        });
        let resp = p.propose(&req).unwrap();
        assert_eq!(resp.raw_text, "hello");
        assert_eq!(resp.token_usage, Some((10, 5)));
        assert_eq!(p.retry_delays.len(), 1);
        assert!(resp.latency >= p.retry_delays[0]);
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["messages"][0]["content"], "earlier");
        assert_eq!(sent["messages"][1]["role"], "user");
        assert_eq!(sent["model"], "stub-model");
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let (url, server) = stub_server(vec![(401, "{}".into())]);
        let mut p = HttpProposer::new(config(url), Arc::new(InFlightLimiter::new(1)), 0).unwrap();
        let err = p.propose(&ProposerRequest::new("x")).unwrap_err();
        assert!(matches!(err, ProposerError::Auth { status: 401 }));
        assert!(p.retry_delays.is_empty());
        server.join().unwrap();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = stub_server(vec![(400, r#"{"error":"bad"}"#.into())]);
        let mut p = HttpProposer::new(config(url), Arc::new(InFlightLimiter::new(1)), 0).unwrap();
        let err = p.propose(&ProposerRequest::new("x")).unwrap_err();
        assert!(matches!(err, ProposerError::Rejected { status: 400, .. }));
        server.join().unwrap();
    }

    #[test]
    fn retries_stop_at_limit() {
        let replies = vec![(503, "{}".to_owned()); 3];
        let (url, server) = stub_server(replies);
        let cfg = LlmConfig {
            max_retries: 2,
            ..config(url)
        };
        let mut p = HttpProposer::new(cfg, Arc::new(InFlightLimiter::new(1)), 0).unwrap();
        let err = p.propose(&ProposerRequest::new("x")).unwrap_err();
        assert!(matches!(err, ProposerError::Transport { attempts: 3, .. }));
        assert_eq!(p.retry_delays.len(), 2);
        assert!(p.retry_delays.windows(2).all(|w| w[0] <= w[1]));
        server.join().unwrap();
    }

    #[test]
    fn token_budget() {
        let (url, server) = stub_server(vec![(200, ok_body("a"))]);
        let cfg = LlmConfig {
            max_total_tokens: Some(15),
            ..config(url)
        };
        let mut p = HttpProposer::new(cfg, Arc::new(InFlightLimiter::new(1)), 0).unwrap();
        p.propose(&ProposerRequest::new("x")).unwrap();
        assert!(matches!(
            p.propose(&ProposerRequest::new("x")),
            Err(ProposerError::BudgetExceeded {
                used: 15,
                limit: 15
            })
        ));
        server.join().unwrap();
    }

    #[test]
    fn missing_credential() {
        let cfg = LlmConfig {
            api_key_env: "TRUSSLOOP_TEST_UNSET_VARIABLE".into(),
            ..LlmConfig::new("http://127.0.0.1:9/", "m")
        };
        assert!(matches!(
            HttpProposer::new(cfg, Arc::new(InFlightLimiter::new(1)), 0),
            Err(ProposerError::MissingCredential(_))
        ));
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let lim = Arc::new(InFlightLimiter::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        let threads: Vec<_> = (0..6)
            .map(|_| {
                let lim = lim.clone();
                let peak = peak.clone();
                std::thread::spawn(move || {
                    let _p = lim.acquire();
                    let now = lim.active();
                    let mut pk = peak.lock().unwrap();
                    *pk = (*pk).max(now);
                    drop(pk);
                    std::thread::sleep(Duration::from_millis(5));
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(lim.active(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn backoff_never_decreases(
                base_ms in 1u64..1000,
                max_ms in 1u64..100_000,
                jitters in proptest::collection::vec(0.0f64..0.5, 1..12),
            ) {
                let base = Duration::from_millis(base_ms);
                let max = Duration::from_millis(max_ms);
                let delays: Vec<Duration> = jitters
                    .iter()
                    .enumerate()
                    .map(|(i, j)| backoff_delay(i as u32 + 1, base, max, *j))
                    .collect();
                prop_assert!(delays.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(delays.iter().all(|d| *d <= max));
            }
        }
    }
}
