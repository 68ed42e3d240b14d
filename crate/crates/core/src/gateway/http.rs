//! Chat-completions style HTTP provider.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendError, LmRequest, LmResponse};
use crate::runtime::memory::TokenUsage;

pub const ENV_BASE_URL: &str = "LM_BASE_URL";
pub const ENV_API_KEY: &str = "LM_API_KEY";
pub const ENV_MODEL: &str = "LM_MODEL";

const ERROR_BODY_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    /// Reads the provider settings, naming every missing variable.
    pub fn from_env() -> Result<Self, String> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let mut missing = Vec::new();
        let base_url = get(ENV_BASE_URL).unwrap_or_else(|| {
            missing.push(ENV_BASE_URL);
            String::new()
        });
        let api_key = get(ENV_API_KEY).unwrap_or_else(|| {
            missing.push(ENV_API_KEY);
            String::new()
        });
        let model = get(ENV_MODEL).unwrap_or_else(|| {
            missing.push(ENV_MODEL);
            String::new()
        });
        if !missing.is_empty() {
            return Err(format!("live mode requires environment variables: {}", missing.join(", ")));
        }
        Ok(Self {
            base_url,
            api_key,
            model,
            timeout: Duration::from_secs(300),
        })
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

fn truncate(body: &str) -> String {
    if body.len() <= ERROR_BODY_CAP {
        return body.to_string();
    }
    let mut cut = ERROR_BODY_CAP;
    while !body.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}...", &body[..cut])
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, BackendError> {
        let model = if request.model.is_empty() || request.model == "scripted" {
            self.config.model.as_str()
        } else {
            request.model.as_str()
        };
        let body = json!({
            "model": model,
            "max_tokens": request.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.serialized_memory},
            ],
        });
        let started = Instant::now();
        let response = self
            .client
            .post(self.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::Transient {
                status: None,
                message: e.to_string(),
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| BackendError::Transient {
            status: Some(status.as_u16()),
            message: e.to_string(),
        })?;
        if !status.is_success() {
            let code = status.as_u16();
            let message = truncate(&text);
            return Err(if code == 429 || status.is_server_error() {
                BackendError::Transient {
                    status: Some(code),
                    message,
                }
            } else {
                BackendError::Permanent {
                    status: Some(code),
                    message,
                }
            });
        }
        let parsed: Value = serde_json::from_str(&text).map_err(|e| BackendError::Permanent {
            status: Some(status.as_u16()),
            message: format!("unparseable response ({e}): {}", truncate(&text)),
        })?;
        let content = parsed["choices"][0]["message"]["content"]
            .as_str()
            .filter(|c| !c.is_empty())
            .ok_or_else(|| BackendError::Permanent {
                status: Some(status.as_u16()),
                message: format!("response has no message content: {}", truncate(&text)),
            })?;
        let usage = &parsed["usage"];
        Ok(LmResponse {
            text: content.to_string(),
            token_usage: TokenUsage {
                input: usage["prompt_tokens"].as_u64().unwrap_or(0),
                output: usage["completion_tokens"].as_u64().unwrap_or(0),
            },
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
