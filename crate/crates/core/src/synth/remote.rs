//! Chat-completion backend over HTTP. Credentials come from the
//! environment; in-flight requests are bounded and rate-limit responses
//! back off exponentially.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{SynthBackend, SynthError};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Endpoint base, e.g. `https://api.example.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub request_timeout: Duration,
    pub max_retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: "SCHEMASHIFT_API_KEY".into(),
            max_in_flight: 4,
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    slots: Mutex<usize>,
    available: Condvar,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, SynthError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            SynthError::BackendUnavailable(format!(
                "API key environment variable `{}` is not set",
                config.api_key_env
            ))
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| SynthError::BackendUnavailable(e.to_string()))?;
        Ok(RemoteBackend {
            slots: Mutex::new(config.max_in_flight),
            available: Condvar::new(),
            config,
            api_key,
            client,
        })
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut slots = self.slots.lock().unwrap();
        while *slots == 0 {
            slots = self.available.wait(slots).unwrap();
        }
        *slots -= 1;
        SlotGuard { backend: self }
    }

    fn post_once(&self, prompt: &str) -> Result<Result<String, u16>, SynthError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    SynthError::Timeout(self.config.request_timeout)
                } else {
                    SynthError::BackendUnavailable(e.to_string())
                }
            })?;
        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Ok(Err(status.as_u16()));
        }
        if !status.is_success() {
            return Err(SynthError::BackendUnavailable(format!(
                "HTTP {status} from backend"
            )));
        }
        let completion: Completion = response
            .json()
            .map_err(|e| SynthError::BackendUnavailable(format!("bad response body: {e}")))?;
        let content = completion
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| SynthError::BackendUnavailable("empty choices".into()))?;
        Ok(Ok(content))
    }
}

struct SlotGuard<'a> {
    backend: &'a RemoteBackend,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut slots = self.backend.slots.lock().unwrap();
        *slots += 1;
        self.backend.available.notify_one();
    }
}

impl SynthBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn complete(&self, prompt: &str) -> Result<String, SynthError> {
        let _slot = self.acquire();
        let mut delay = Duration::from_millis(250);
        for attempt in 0..=self.config.max_retries {
            match self.post_once(prompt)? {
                Ok(content) => return Ok(content),
                Err(status) => {
                    if attempt == self.config.max_retries {
                        return Err(SynthError::BackendUnavailable(format!(
                            "HTTP {status} after {} retries",
                            self.config.max_retries
                        )));
                    }
                    std::thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!("retry loop returns")
    }
}
