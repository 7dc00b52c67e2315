use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::error::{Error, Result};

/// One text completion call.
#[derive(Clone, Debug, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    /// Zero-based retry counter.
    pub attempt: u32,
}

/// Text-in, text-out completion backend. An `Err` is a failed attempt and
/// may be retried.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String>;
}

type Responder = dyn Fn(&CompletionRequest) -> std::result::Result<String, String> + Send + Sync;

/// Offline client driven by a pure function of the request.
pub struct MockClient {
    responder: Box<Responder>,
    calls: AtomicUsize,
}

impl MockClient {
    pub fn new(
        responder: impl Fn(&CompletionRequest) -> std::result::Result<String, String> + Send + Sync + 'static,
    ) -> Self {
        Self {
            responder: Box::new(responder),
            calls: AtomicUsize::new(0),
        }
    }

    /// Always answers with the same comma-separated list.
    pub fn fixed<S: AsRef<str>>(labels: &[S]) -> Self {
        let text = labels.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(", ");
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionClient for MockClient {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.responder)(request)
    }
}

pub const DEFAULT_API_KEY_ENV: &str = "COPROMPT_API_KEY";

/// JSON-over-HTTP client for completion endpoints. Endpoints whose path
/// contains `chat` get a `messages` body; others get a `prompt` body.
pub struct HttpClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: String,
    max_tokens: usize,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            max_tokens: 128,
        }
    }

    /// Reads the key from the environment variable `key_env`.
    pub fn from_env(endpoint: &str, model: &str, key_env: &str) -> Result<Self> {
        let key = std::env::var(key_env)
            .map_err(|_| Error::invalid("api_key", format!("environment variable {key_env} is not set")))?;
        Ok(Self::new(endpoint, model, key))
    }

    fn body(&self, r: &CompletionRequest) -> Value {
        if self.endpoint.contains("chat") {
            json!({
                "model": self.model,
                "messages": [{"role": "user", "content": r.prompt}],
                "temperature": r.temperature,
                "top_p": r.top_p,
                "max_tokens": self.max_tokens,
            })
        } else {
            json!({
                "model": self.model,
                "prompt": r.prompt,
                "temperature": r.temperature,
                "top_p": r.top_p,
                "max_tokens": self.max_tokens,
            })
        }
    }
}

/// Completion text from either response shape.
pub fn extract_completion(body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("text")
        .or_else(|| choice.get("message")?.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl CompletionClient for HttpClient {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        let body = self.body(request).to_string();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(&body)
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !status.is_success() {
            return Err(format!("HTTP {status}: {text}"));
        }
        let json: Value = serde_json::from_str(&text).map_err(|e| format!("bad JSON response: {e}"))?;
        extract_completion(&json).ok_or_else(|| "response has no completion text".to_string())
    }
}

/// Spaces out request starts to at most `per_second`.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        let interval = if per_second.is_finite() {
            Duration::from_secs_f64(1.0 / per_second)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_shapes() {
        let a = json!({"choices": [{"text": " /person"}]});
        assert_eq!(extract_completion(&a).unwrap(), " /person");
        let b = json!({"choices": [{"message": {"role": "assistant", "content": "/location"}}]});
        assert_eq!(extract_completion(&b).unwrap(), "/location");
        assert!(extract_completion(&json!({"error": "x"})).is_none());
    }

    #[test]
    fn limiter_spaces_requests() {
        let rl = RateLimiter::new(50.0);
        let start = Instant::now();
        for _ in 0..4 {
            rl.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(55));
        let free = RateLimiter::new(f64::INFINITY);
        free.acquire();
    }

    #[test]
    fn mock_counts_calls() {
        let m = MockClient::fixed(&["/a", "/b"]);
        let req = CompletionRequest {
            prompt: String::new(),
            temperature: 0.7,
            top_p: 1.0,
            attempt: 0,
        };
        assert_eq!(m.complete(&req).unwrap(), "/a, /b");
        assert_eq!(m.calls(), 1);
    }
}
