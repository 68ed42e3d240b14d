//! Deterministic stand-in for a model provider.
//!
//! A script is a list of `[[response]]` tables:
//!
//! ```toml
//! [[response]]
//! agent = "manager_agent"
//! step = 0
//! text = "..."
//!
//! [[response]]
//! agent = "manager_agent"
//! step = 4
//! contains = "TASK FAILED - Missing"
//! text = "..."
//! ```
//!
//! For each request the backend tries, in order: matchers whose `contains`
//! needle occurs in the serialized memory (restricted to `step` when given),
//! then an entry keyed by the exact step, then the agent's next unkeyed entry.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

use super::{Backend, BackendError, LmRequest, LmResponse};
use crate::runtime::memory::TokenUsage;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("scripted backend has no response for agent '{agent}' at step {step}")]
    UnknownKey { agent: String, step: usize },
    #[error("script exhausted for agent '{agent}' at step {step}: all {available} sequential responses were consumed")]
    Exhausted {
        agent: String,
        step: usize,
        available: usize,
    },
    #[error("invalid script: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    /// Served in declaration order, once each.
    Sequential,
    Step(usize),
    /// Branch point: fires when the memory contains `needle`.
    Contains { needle: String, step: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEntry {
    pub agent: String,
    pub selector: Selector,
    pub text: String,
    pub latency_ms: u64,
}

impl ScriptEntry {
    pub fn sequential(agent: &str, text: impl Into<String>) -> Self {
        Self {
            agent: agent.into(),
            selector: Selector::Sequential,
            text: text.into(),
            latency_ms: 0,
        }
    }

    pub fn at_step(agent: &str, step: usize, text: impl Into<String>) -> Self {
        Self {
            selector: Selector::Step(step),
            ..Self::sequential(agent, text)
        }
    }

    pub fn when_contains(agent: &str, needle: &str, step: Option<usize>, text: impl Into<String>) -> Self {
        Self {
            selector: Selector::Contains {
                needle: needle.into(),
                step,
            },
            ..Self::sequential(agent, text)
        }
    }
}

#[derive(Deserialize)]
struct ScriptFile {
    #[serde(default)]
    response: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    agent: String,
    step: Option<usize>,
    contains: Option<String>,
    text: String,
    #[serde(default)]
    latency_ms: u64,
}

#[derive(Default)]
struct Cursors {
    sequential: BTreeMap<String, usize>,
    consumed: BTreeSet<usize>,
}

pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    state: Mutex<Cursors>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, ScriptError> {
        if entries.is_empty() {
            return Err(ScriptError::Invalid("script has no responses".into()));
        }
        let mut keyed = BTreeSet::new();
        for entry in &entries {
            if entry.text.trim().is_empty() {
                return Err(ScriptError::Invalid(format!("empty response text for agent '{}'", entry.agent)));
            }
            if let Selector::Step(step) = entry.selector {
                if !keyed.insert((entry.agent.clone(), step)) {
                    return Err(ScriptError::Invalid(format!(
                        "duplicate response for agent '{}' at step {step}",
                        entry.agent
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            state: Mutex::new(Cursors::default()),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ScriptError> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| ScriptError::Invalid(e.to_string()))?;
        let entries = file
            .response
            .into_iter()
            .map(|raw| ScriptEntry {
                selector: match (raw.contains, raw.step) {
                    (Some(needle), step) => Selector::Contains { needle, step },
                    (None, Some(step)) => Selector::Step(step),
                    (None, None) => Selector::Sequential,
                },
                agent: raw.agent,
                text: raw.text,
                latency_ms: raw.latency_ms,
            })
            .collect();
        Self::new(entries)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScriptError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn entries(&self) -> &[ScriptEntry] {
        &self.entries
    }

    fn select(&self, request: &LmRequest) -> Result<&ScriptEntry, ScriptError> {
        let agent = request.agent_name.as_str();
        let step = request.step_index;
        let mut state = self.state.lock().expect("script lock");

        for (i, entry) in self.entries.iter().enumerate() {
            if entry.agent != agent {
                continue;
            }
            if let Selector::Contains { needle, step: bound } = &entry.selector {
                // Step-bound matchers are replay-safe and never consumed.
                let applies = match bound {
                    Some(s) => *s == step,
                    None => !state.consumed.contains(&i),
                };
                if applies && request.serialized_memory.contains(needle.as_str()) {
                    if bound.is_none() {
                        state.consumed.insert(i);
                    }
                    return Ok(entry);
                }
            }
        }

        if let Some(entry) = self
            .entries
            .iter()
            .find(|e| e.agent == agent && e.selector == Selector::Step(step))
        {
            return Ok(entry);
        }

        let sequential: Vec<&ScriptEntry> = self
            .entries
            .iter()
            .filter(|e| e.agent == agent && e.selector == Selector::Sequential)
            .collect();
        if sequential.is_empty() {
            return Err(ScriptError::UnknownKey {
                agent: agent.into(),
                step,
            });
        }
        let cursor = state.sequential.entry(agent.to_string()).or_insert(0);
        match sequential.get(*cursor) {
            Some(entry) => {
                *cursor += 1;
                Ok(entry)
            }
            None => Err(ScriptError::Exhausted {
                agent: agent.into(),
                step,
                available: sequential.len(),
            }),
        }
    }
}

fn approx_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, BackendError> {
        let entry = self.select(request)?;
        Ok(LmResponse {
            text: entry.text.clone(),
            token_usage: TokenUsage {
                input: approx_tokens(request.system_prompt.chars().count() + request.serialized_memory.chars().count()),
                output: approx_tokens(entry.text.chars().count()),
            },
            latency_ms: entry.latency_ms,
        })
    }
}

impl std::fmt::Debug for ScriptedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedBackend")
            .field("entries", &self.entries.len())
            .finish()
    }
}
