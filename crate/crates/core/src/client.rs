//! Chat-completions clients: an HTTP client with retries, and offline stubs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::session::{Action, ActionCategory};

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "SHOPBENCH_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn single(prompt: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        CompletionRequest {
            messages: vec![ChatMessage::user(prompt)],
            temperature,
            max_tokens,
        }
    }

    /// Content of the last message.
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("endpoint unreachable after {attempts} attempts: {last}")]
    Unreachable { attempts: u32, last: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Other(String),
}

/// Something that turns a prompt into a completion. Implementations must be
/// usable from several threads at once.
pub trait CompletionClient: Send + Sync {
    /// Model identifier recorded in dataset metadata and reports.
    fn model(&self) -> &str;
    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff.saturating_mul(1 << retry.min(16))
    }
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(ClientError),
}

/// Client for an OpenAI-style `POST /chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    /// `endpoint` is the full URL of the completions route. The credential,
    /// if any, is read from [`API_KEY_ENV`].
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ClientError::Other(e.to_string()))?;
        Ok(HttpChatClient {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            retry: RetryPolicy::default(),
            http,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let mut rb = self.http.post(&self.endpoint).json(body);
        if let Some(k) = &self.api_key {
            rb = rb.bearer_auth(k);
        }
        let resp = match rb.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Transient(format!("HTTP {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(ClientError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        match extract_content(&text) {
            Ok(s) => Attempt::Done(s),
            Err(e) => Attempt::Fatal(e),
        }
    }
}

fn extract_content(body: &str) -> Result<String, ClientError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ClientError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| ClientError::Malformed("missing choices[0].message.content".into()))
}

impl CompletionClient for HttpChatClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        let body = json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut last = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Attempt::Done(s) => return Ok(s),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(msg) => {
                    tracing::warn!(attempt, %msg, "transient endpoint failure");
                    last = msg;
                }
            }
        }
        Err(ClientError::Unreachable {
            attempts: self.retry.retries + 1,
            last,
        })
    }
}

/// Always answers with the same text.
#[derive(Debug, Default)]
pub struct FixedClient {
    text: String,
    calls: AtomicUsize,
}

impl FixedClient {
    pub fn new(text: impl Into<String>) -> Self {
        FixedClient {
            text: text.into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionClient for FixedClient {
    fn model(&self) -> &str {
        "stub-fixed"
    }

    fn complete(&self, _: &CompletionRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.text.clone())
    }
}

/// Delegates to a closure. Handy for scripted failures in tests.
pub struct FnClient<F> {
    model: String,
    f: F,
    calls: AtomicUsize,
}

impl<F> FnClient<F>
where
    F: Fn(usize, &CompletionRequest) -> Result<String, ClientError> + Send + Sync,
{
    /// `f` receives the zero-based call number and the request.
    pub fn new(model: impl Into<String>, f: F) -> Self {
        FnClient {
            model: model.into(),
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> CompletionClient for FnClient<F>
where
    F: Fn(usize, &CompletionRequest) -> Result<String, ClientError> + Send + Sync,
{
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(n, req)
    }
}

/// Offline rationale writer. Reads the last `Action:` line of the prompt
/// and answers with a templated first-person sentence.
#[derive(Debug, Default)]
pub struct TemplateClient {
    calls: AtomicUsize,
}

impl TemplateClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// The templated rationale [`TemplateClient`] gives for `action`.
pub fn template_rationale(action: &Action) -> String {
    let target = action.target().unwrap_or("");
    let last = target.rsplit('.').next().unwrap_or(target);
    match ActionCategory::of(action) {
        ActionCategory::Search => format!(
            "I'm looking for {}, so I'll search for it.",
            action.text().unwrap_or("something")
        ),
        ActionCategory::Filter if last.starts_with("rating") => {
            "I'm looking for options with high ratings, so I'll only show 4 stars and up.".into()
        }
        ActionCategory::Filter => {
            "I want to stay within my budget, so I'll narrow the results by price.".into()
        }
        ActionCategory::ViewProduct => {
            "This one looks promising, so I want to see more details about it.".into()
        }
        ActionCategory::Purchase => "This product has what I need, so I'll buy it now.".into(),
        ActionCategory::Terminate => {
            "Nothing here is what I want, so I'll close the browser window.".into()
        }
        ActionCategory::Other => match last {
            "next_page" => "None of these fit yet, so I'll check the next page.".into(),
            "prev_page" => "I want another look at the earlier results.".into(),
            "back_to_results" => "This isn't quite right, so I'll go back to the results.".into(),
            _ => format!("I'll click {last} to keep going."),
        },
    }
}

impl CompletionClient for TemplateClient {
    fn model(&self) -> &str {
        "stub-template"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let line = req
            .prompt()
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Action: "))
            .ok_or_else(|| ClientError::Other("prompt has no `Action:` line".into()))?;
        let action: Action = serde_json::from_str(line.trim())
            .map_err(|e| ClientError::Other(format!("unreadable action in prompt: {e}")))?;
        Ok(template_rationale(&action))
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    use super::*;

    /// Serves one canned HTTP response per entry, in order, then stops.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end().to_ascii_lowercase();
                    if l.is_empty() {
                        break;
                    }
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if l.starts_with("authorization:") {
                        auth = line.trim_end().to_owned();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(format!("{auth}\n{}", String::from_utf8(buf).unwrap()));
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            retries: 3,
            initial_backoff: Duration::from_millis(1),
        }
    }

    #[test]
    fn http_client_sends_model_and_settings() {
        let (url, h) = serve(vec![(200, ok_body("hello"))]);
        let c = HttpChatClient::new(url, "m-1")
            .unwrap()
            .with_retry(fast())
            .with_api_key(Some("sk-test".into()));
        let out = c.complete(&CompletionRequest::single("hi", 0.0, 200)).unwrap();
        assert_eq!(out, "hello");
        let seen = h.join().unwrap();
        let (auth, body) = seen[0].split_once('\n').unwrap();
        assert_eq!(auth, "authorization: Bearer sk-test");
        let v: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(v["model"], "m-1");
        assert_eq!(v["max_tokens"], 200);
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["messages"][0]["content"], "hi");
    }

    #[test]
    fn transient_failures_are_retried() {
        let (url, h) = serve(vec![
            (503, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("third time")),
        ]);
        let c = HttpChatClient::new(url, "m").unwrap().with_retry(fast());
        assert_eq!(
            c.complete(&CompletionRequest::single("x", 0.0, 10)).unwrap(),
            "third time"
        );
        assert_eq!(h.join().unwrap().len(), 3);
    }

    #[test]
    fn retry_budget_is_bounded() {
        let (url, h) = serve(vec![(500, "{}".into()); 4]);
        let c = HttpChatClient::new(url, "m").unwrap().with_retry(fast());
        let err = c.complete(&CompletionRequest::single("x", 0.0, 10)).unwrap_err();
        assert!(matches!(err, ClientError::Unreachable { attempts: 4, .. }), "{err}");
        assert_eq!(h.join().unwrap().len(), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, h) = serve(vec![(400, "bad".into())]);
        let c = HttpChatClient::new(url, "m").unwrap().with_retry(fast());
        let err = c.complete(&CompletionRequest::single("x", 0.0, 10)).unwrap_err();
        assert!(matches!(err, ClientError::Status { status: 400, .. }));
        h.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let c = HttpChatClient::new(format!("http://127.0.0.1:{port}/x"), "m")
            .unwrap()
            .with_retry(RetryPolicy {
                retries: 1,
                initial_backoff: Duration::from_millis(1),
            });
        let err = c.complete(&CompletionRequest::single("x", 0.0, 10)).unwrap_err();
        assert!(matches!(err, ClientError::Unreachable { attempts: 2, .. }));
    }

    #[test]
    fn backoff_doubles() {
        let r = RetryPolicy::default();
        assert_eq!(r.backoff(0), Duration::from_secs(1));
        assert_eq!(r.backoff(2), Duration::from_secs(4));
    }

    #[test]
    fn template_client_reads_last_action() {
        let c = TemplateClient::new();
        let prompt = "Action: {\"type\":\"terminate\"}\nContext:\n<html></html>\nAction: {\"type\":\"click\",\"name\":\"results.filter.rating_4_up\"}\nRationale:";
        let out = c.complete(&CompletionRequest::single(prompt, 0.0, 200)).unwrap();
        assert!(out.contains("I'm looking for options with high ratings"));
        assert_eq!(c.calls(), 1);
    }
}
