use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};

use super::{
    read_image, BackendConfig, BackendError, FinishReason, ModelClient, ModelRequest, ModelResponse, RetryPolicy,
};

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyLimiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a ConcurrencyLimiter,
}

impl ConcurrencyLimiter {
    pub fn new(max: usize) -> Self {
        ConcurrencyLimiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct RemoteClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
    limiter: Arc<ConcurrencyLimiter>,
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/jpeg",
    }
}

/// Delay before retry number `attempt` (1-based): exponential with jitter.
pub(crate) fn backoff(policy: &RetryPolicy, attempt: u32, unit: f64) -> Duration {
    let window = policy.base_backoff_ms as f64 * 2f64.powi(attempt.saturating_sub(1).min(16) as i32);
    let ms = window * (1.0 - policy.jitter) + window * policy.jitter * unit;
    Duration::from_micros((ms * 1000.0) as u64)
}

impl RemoteClient {
    /// Reads the API key now so an unset variable fails before any call.
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let var = config.auth_env_var.as_deref().expect("validated");
        let api_key =
            std::env::var(var).map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(config.timeout_ms.map(Duration::from_millis))
            .build()
            .into();
        Ok(RemoteClient {
            agent,
            endpoint: config.endpoint.clone().expect("validated"),
            api_key,
            retry: config.retry,
            limiter: Arc::new(ConcurrencyLimiter::new(config.max_concurrency)),
        })
    }

    pub fn limiter(&self) -> Arc<ConcurrencyLimiter> {
        self.limiter.clone()
    }

    fn body(request: &ModelRequest) -> Result<Value, BackendError> {
        let engine = base64::engine::general_purpose::STANDARD;
        let messages = request
            .messages
            .iter()
            .map(|m| {
                let content = match &m.image_ref {
                    None => json!(m.text),
                    Some(path) => {
                        let data = engine.encode(read_image(path)?);
                        json!([
                            { "type": "text", "text": m.text },
                            { "type": "image_url", "image_url": {
                                "url": format!("data:{};base64,{data}", mime_for(path)) } },
                        ])
                    }
                };
                Ok(json!({ "role": m.role.as_str(), "content": content }))
            })
            .collect::<Result<Vec<_>, BackendError>>()?;
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_output_tokens,
        });
        if let Some(seed) = request.sampling.seed {
            body["seed"] = json!(seed);
        }
        Ok(body)
    }

    fn send(&self, body: &Value) -> Result<(String, FinishReason), Failure> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            let mut body = text;
            body.truncate(500);
            return Err(Failure::Fatal(BackendError::Rejected { status, body }));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(BackendError::BadResponse(e.to_string())))?;
        let choice = &value["choices"][0];
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| Failure::Fatal(BackendError::BadResponse("no choices[0].message.content".into())))?;
        let finish = choice["finish_reason"]
            .as_str()
            .map(FinishReason::from_wire)
            .unwrap_or_default();
        Ok((content.to_string(), finish))
    }
}

impl ModelClient for RemoteClient {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let fingerprint = request.fingerprint()?;
        let body = Self::body(request)?;
        let mut log = Vec::new();
        for attempt in 1..=self.retry.max_attempts {
            let outcome = {
                let _permit = self.limiter.acquire();
                let start = Instant::now();
                self.send(&body).map(|r| (r, start.elapsed()))
            };
            match outcome {
                Ok(((text, finish_reason), elapsed)) => {
                    return Ok(ModelResponse {
                        text,
                        finish_reason,
                        latency_ms: elapsed.as_millis() as u64,
                        request_fingerprint: fingerprint,
                        attempts: attempt,
                    })
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    log.push(format!("attempt {attempt}: {msg}"));
                    if attempt < self.retry.max_attempts {
                        thread::sleep(backoff(&self.retry, attempt, rand::random::<f64>()));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts: self.retry.max_attempts,
            log,
        })
    }
}
