//! Agent memory: task steps and the ordered log of action steps.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::compaction::CompactedSummary;
use crate::runtime::tool::{ToolCall, FINAL_ANSWER};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    #[default]
    Normal,
    /// Human guidance injected between steps.
    Intervention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStep {
    pub text: String,
    #[serde(default)]
    pub additional_args: BTreeMap<String, String>,
    #[serde(default)]
    pub priority: Priority,
}

impl TaskStep {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            additional_args: BTreeMap::new(),
            priority: Priority::Normal,
        }
    }

    pub fn with_args(mut self, args: BTreeMap<String, String>) -> Self {
        self.additional_args = args;
        self
    }

    pub fn intervention(text: impl Into<String>) -> Self {
        Self {
            priority: Priority::Intervention,
            ..Self::new(text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepError {
    pub kind: String,
    pub message: String,
}

impl StepError {
    pub fn new(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    pub index: usize,
    pub reasoning: String,
    pub tool_calls: Vec<ToolCall>,
    pub observation: String,
    pub error: Option<StepError>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    #[serde(default)]
    pub compacted: bool,
    /// Structured form of the summary; present only when `compacted`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<CompactedSummary>,
}

impl ActionStep {
    /// A step that carries tool calls or an observation.
    pub fn is_meaningful(&self) -> bool {
        !self.tool_calls.is_empty() || !self.observation.is_empty()
    }

    /// Highest step index this entry stands for.
    pub fn last_covered_index(&self) -> usize {
        match &self.summary {
            Some(summary) => summary.covered_step_range.1.max(self.index),
            None => self.index,
        }
    }

    pub fn final_answer(&self) -> Option<&str> {
        self.tool_calls
            .iter()
            .find(|c| c.tool == FINAL_ANSWER)
            .and_then(|c| c.args.get("answer"))
            .and_then(|v| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MemoryStep {
    Task(TaskStep),
    Action(ActionStep),
}

/// One agent's log. The first task entry is the original assignment; later
/// task entries are follow-up delegations or human guidance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub agent_name: String,
    pub steps: Vec<MemoryStep>,
    /// Index of the last completed step when compaction last fired.
    #[serde(default)]
    pub last_compaction_step: Option<usize>,
}

impl AgentMemory {
    pub fn new(agent_name: impl Into<String>) -> Self {
        Self {
            agent_name: agent_name.into(),
            steps: Vec::new(),
            last_compaction_step: None,
        }
    }

    pub fn with_task(agent_name: impl Into<String>, task: TaskStep) -> Self {
        let mut memory = Self::new(agent_name);
        memory.push_task(task);
        memory
    }

    pub fn push_task(&mut self, task: TaskStep) {
        self.steps.push(MemoryStep::Task(task));
    }

    pub fn push_action(&mut self, step: ActionStep) {
        self.steps.push(MemoryStep::Action(step));
    }

    pub fn task(&self) -> Option<&TaskStep> {
        self.steps.iter().find_map(|s| match s {
            MemoryStep::Task(t) => Some(t),
            MemoryStep::Action(_) => None,
        })
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskStep> {
        self.steps.iter().filter_map(|s| match s {
            MemoryStep::Task(t) => Some(t),
            MemoryStep::Action(_) => None,
        })
    }

    pub fn actions(&self) -> impl Iterator<Item = &ActionStep> {
        self.steps.iter().filter_map(|s| match s {
            MemoryStep::Action(a) => Some(a),
            MemoryStep::Task(_) => None,
        })
    }

    pub fn last_action(&self) -> Option<&ActionStep> {
        self.actions().last()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Index the next completed step will carry.
    pub fn next_step_index(&self) -> usize {
        self.actions()
            .map(|a| a.last_covered_index() + 1)
            .max()
            .unwrap_or(0)
    }

    /// Completed steps since the last compaction (or since the start).
    pub fn steps_since_compaction(&self) -> usize {
        let next = self.next_step_index();
        match self.last_compaction_step {
            Some(at) => next.saturating_sub(at + 1),
            None => next,
        }
    }

    /// True when a task entry follows the most recent action step.
    pub fn has_task_after_last_action(&self) -> bool {
        match self.steps.last() {
            Some(MemoryStep::Task(_)) => self.actions().next().is_some(),
            _ => false,
        }
    }

    /// Deterministic text the model is conditioned on.
    pub fn serialize(&self) -> String {
        let mut blocks = Vec::with_capacity(self.steps.len());
        let mut seen_task = false;
        for step in &self.steps {
            match step {
                MemoryStep::Task(task) => {
                    let header = match (task.priority, seen_task) {
                        (Priority::Intervention, _) => {
                            "=== HIGH-PRIORITY GUIDANCE FROM HUMAN OPERATOR ==="
                        }
                        (Priority::Normal, false) => "=== TASK ===",
                        (Priority::Normal, true) => "=== NEW TASK ===",
                    };
                    seen_task = true;
                    blocks.push(render_task(header, task));
                }
                MemoryStep::Action(action) => blocks.push(render_action(action)),
            }
        }
        blocks.join("\n\n")
    }
}

fn render_task(header: &str, task: &TaskStep) -> String {
    let mut out = format!("{header}\n{}", task.text);
    if !task.additional_args.is_empty() {
        out.push_str("\nAdditional arguments:");
        for (key, value) in &task.additional_args {
            out.push_str(&format!("\n- {key}: {value}"));
        }
    }
    out
}

fn render_action(step: &ActionStep) -> String {
    if step.compacted {
        let mut out = String::from("=== SUMMARY ===");
        if !step.observation.is_empty() {
            out.push('\n');
            out.push_str(&step.observation);
        }
        return out;
    }
    let mut out = format!("=== STEP {} ===", step.index);
    if !step.reasoning.is_empty() {
        out.push_str("\nThought: ");
        out.push_str(&step.reasoning);
    }
    if !step.tool_calls.is_empty() {
        let calls = serde_json::to_string(&step.tool_calls).unwrap_or_default();
        out.push_str("\nAction:\n```action\n");
        out.push_str(&calls);
        out.push_str("\n```");
    }
    if !step.observation.is_empty() {
        out.push_str("\nObservation:\n");
        out.push_str(&step.observation);
    }
    if let Some(err) = &step.error {
        out.push_str(&format!("\nError ({}): {}", err.kind, err.message));
    }
    out
}
