use std::collections::VecDeque;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::ChatMessage;

pub const API_KEY_ENV: &str = "DISCO_API_KEY";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gave up after {attempts} attempts (last status: {})", fmt_status(*.last_status))]
    RetriesExhausted { last_status: Option<u16>, attempts: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    InvalidResponse(String),
    #[error("mock script exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("bad mock script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_status(s: Option<u16>) -> String {
    s.map_or_else(|| "timeout".to_owned(), |s| s.to_string())
}

pub trait ChatProvider {
    fn chat(&mut self, messages: &[ChatMessage], temperature: f64) -> Result<String, ProviderError>;
}

/// Returns scripted responses in order.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    responses: VecDeque<String>,
    served: usize,
}

impl MockProvider {
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            responses: responses.into_iter().map(Into::into).collect(),
            served: 0,
        }
    }

    /// Reads a JSON Lines file with one JSON string per line. Blank lines
    /// are skipped.
    pub fn from_script_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)?;
        let mut responses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: String = serde_json::from_str(line).map_err(|e| ProviderError::Script {
                line: i + 1,
                message: e.to_string(),
            })?;
            responses.push(s);
        }
        Ok(Self::from_responses(responses))
    }

    pub fn remaining(&self) -> usize {
        self.responses.len()
    }
}

impl ChatProvider for MockProvider {
    fn chat(&mut self, _: &[ChatMessage], _: f64) -> Result<String, ProviderError> {
        let r = self
            .responses
            .pop_front()
            .ok_or(ProviderError::ScriptExhausted(self.served))?;
        self.served += 1;
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            timeout_secs: 120,
            max_retries: 5,
            backoff_ms: 1000,
        }
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct HttpProvider {
    settings: ProviderSettings,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retries_used: usize,
}

impl HttpProvider {
    /// Reads the API key from the environment if set.
    pub fn new(settings: ProviderSettings) -> Result<Self, ProviderError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(settings, api_key)
    }

    pub fn with_api_key(settings: ProviderSettings, api_key: Option<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self { settings, api_key, client, retries_used: 0 })
    }

    /// Retries performed so far across all calls.
    pub fn retries_used(&self) -> usize {
        self.retries_used
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.settings.endpoint.trim_end_matches('/'))
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

fn first_choice(body: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::InvalidResponse("missing choices[0].message.content".into()))
}

impl ChatProvider for HttpProvider {
    fn chat(&mut self, messages: &[ChatMessage], temperature: f64) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.settings.model,
            "messages": messages,
            "temperature": temperature,
        });
        let url = self.url();
        let mut last_status = None;
        for attempt in 0..=self.settings.max_retries {
            if attempt > 0 {
                let delay = self.settings.backoff_ms.saturating_mul(1 << (attempt - 1).min(20));
                thread::sleep(Duration::from_millis(delay));
                self.retries_used += 1;
            }
            let mut req = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
                    if (200..300).contains(&status) {
                        return first_choice(&text);
                    }
                    if !retryable(status) {
                        return Err(ProviderError::Status { status, body: text });
                    }
                    last_status = Some(status);
                }
                Err(e) if e.is_timeout() || e.is_connect() => last_status = None,
                Err(e) => return Err(ProviderError::Transport(e.to_string())),
            }
        }
        Err(ProviderError::RetriesExhausted {
            last_status,
            attempts: self.settings.max_retries + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves one canned `(status, body)` per connection and returns the
    /// base URL.
    fn serve(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, reply) in replies {
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
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                bodies.push(String::from_utf8(body).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn settings(endpoint: String, max_retries: usize) -> ProviderSettings {
        ProviderSettings {
            endpoint,
            model: "m".into(),
            timeout_secs: 10,
            max_retries,
            backoff_ms: 1,
        }
    }

    #[test]
    fn mock_returns_in_order() {
        let mut m = MockProvider::from_responses(["a", "b"]);
        assert_eq!(m.chat(&[], 1.0).unwrap(), "a");
        assert_eq!(m.chat(&[], 1.0).unwrap(), "b");
        assert!(matches!(m.chat(&[], 1.0), Err(ProviderError::ScriptExhausted(2))));
    }

    #[test]
    fn mock_script_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("script.jsonl");
        std::fs::write(&p, "\"one\\nline\"\n\n\"two\"\n").unwrap();
        let mut m = MockProvider::from_script_file(&p).unwrap();
        assert_eq!(m.remaining(), 2);
        assert_eq!(m.chat(&[], 1.0).unwrap(), "one\nline");
        std::fs::write(&p, "not json\n").unwrap();
        assert!(matches!(
            MockProvider::from_script_file(&p),
            Err(ProviderError::Script { line: 1, .. })
        ));
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#.to_owned();
        let (url, h) = serve(vec![(429, "{}".into()), (429, "{}".into()), (200, ok)]);
        let mut p = HttpProvider::with_api_key(settings(url, 3), Some("k".into())).unwrap();
        let out = p.chat(&[ChatMessage::user("q")], 0.7).unwrap();
        assert_eq!(out, "hi");
        assert_eq!(p.retries_used(), 2);
        let bodies = h.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[2]).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["temperature"], 0.7);
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["messages"][0]["content"], "q");
    }

    #[test]
    fn exhausted_retries_report_last_status() {
        let (url, h) = serve(vec![(503, "{}".into()), (429, "{}".into())]);
        let mut p = HttpProvider::with_api_key(settings(url, 1), None).unwrap();
        match p.chat(&[], 1.0) {
            Err(ProviderError::RetriesExhausted { last_status, attempts }) => {
                assert_eq!(last_status, Some(429));
                assert_eq!(attempts, 2);
            }
            other => panic!("{other:?}"),
        }
        h.join().unwrap();
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, h) = serve(vec![(401, "denied".into())]);
        let mut p = HttpProvider::with_api_key(settings(url, 3), None).unwrap();
        match p.chat(&[], 1.0) {
            Err(ProviderError::Status { status, body }) => {
                assert_eq!((status, body.as_str()), (401, "denied"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p.retries_used(), 0);
        h.join().unwrap();
    }
}
