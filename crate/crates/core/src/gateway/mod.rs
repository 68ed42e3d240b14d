//! Provider-agnostic model access.
//!
//! [`LmGateway`] wraps a [`Backend`] with bounded retries and writes one
//! [`CallLogEntry`] per attempt. Two backends ship: [`ScriptedBackend`] for
//! offline, deterministic runs and [`HttpBackend`] for chat-completions
//! style HTTP providers.

mod http;
mod log;
mod scripted;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::http::{HttpBackend, HttpConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use self::log::{read_log, CallLog, CallLogEntry, RequestDigest, TextDigest, DIGEST_TEXT_CAP};
pub use self::scripted::{ScriptEntry, ScriptError, ScriptedBackend, Selector};

use crate::clock::{Clock, SystemClock};
use crate::runtime::memory::TokenUsage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub agent_name: String,
    pub system_prompt: String,
    pub serialized_memory: String,
    pub model: String,
    pub max_output_tokens: u32,
    /// Index the step being produced will carry.
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResponse {
    pub text: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Worth retrying: rate limits, 5xx, connection trouble.
    #[error("transient provider failure{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transient { status: Option<u16>, message: String },
    #[error("provider error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Permanent { status: Option<u16>, message: String },
    #[error(transparent)]
    Script(#[from] ScriptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("provider failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: BackendError },
    #[error(transparent)]
    Backend(BackendError),
    #[error("call log: {0}")]
    Log(String),
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &LmRequest) -> Result<LmResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (attempts are 1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct LmGateway {
    backend: Arc<dyn Backend>,
    log: Option<Arc<CallLog>>,
    retry: RetryPolicy,
    sleeper: Sleeper,
    clock: Arc<dyn Clock>,
}

impl LmGateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            log: None,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(std::thread::sleep),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_log(mut self, log: Arc<CallLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn log(&self) -> Option<&Arc<CallLog>> {
        self.log.as_ref()
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete(&self, request: &LmRequest) -> Result<LmResponse, GatewayError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let started = Instant::now();
            let result = self.backend.complete(request);
            let elapsed = started.elapsed().as_millis() as u64;
            if let Some(log) = &self.log {
                log.append(self.clock.now(), request, attempt, &result, elapsed)
                    .map_err(|e| GatewayError::Log(e.to_string()))?;
            }
            match result {
                Ok(mut response) => {
                    if response.latency_ms == 0 {
                        response.latency_ms = elapsed;
                    }
                    return Ok(response);
                }
                Err(err @ BackendError::Transient { .. }) if attempt < max => {
                    tracing::warn!(agent = %request.agent_name, attempt, error = %err, "retrying model call");
                    (self.sleeper)(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(err @ BackendError::Transient { .. }) => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts: attempt,
                        last: err,
                    })
                }
                Err(err) => return Err(GatewayError::Backend(err)),
            }
        }
    }
}

impl std::fmt::Debug for LmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmGateway")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .finish()
    }
}
