//! Context compaction: back up, summarize, rebuild.
//!
//! [`CompactionMonitor`] runs after every step. Once the token estimate
//! reaches the threshold (and enough steps passed since the last
//! compaction) it
//!
//! 1. writes every step that will leave memory to
//!    `memory_backup/<agent>_<seq>.jsonl`,
//! 2. extracts a [`CompactedSummary`] from all backed-up steps so far,
//! 3. rebuilds memory as: first task, one summary step, then the remaining
//!    task entries and the last few meaningful steps in their original order.
//!
//! Summaries are pure extraction; no model is consulted.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::prompt::render_tool_listing;
use crate::runtime::agent::{StepCallback, StepContext};
use crate::runtime::memory::{ActionStep, AgentMemory, MemoryStep, StepError};
use crate::runtime::tool::{ToolCall, ToolSpec};
use crate::workspace::{WorkspaceHandle, MEMORY_BACKUP_DIR};

pub const KEY_OBSERVATION_BUDGET: usize = 2000;
const RECENT_CALLS_PER_TOOL: usize = 3;
const CALL_DETAIL_CHARS: usize = 160;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactionPolicy {
    pub threshold_fraction: f64,
    pub min_interval_steps: usize,
    pub keep_recent_meaningful: usize,
    pub chars_per_token: f64,
    /// `None` means: estimate of the rendered tool listing.
    pub tool_schema_overhead_tokens: Option<u64>,
    pub key_observation_budget: usize,
    pub recent_reasoning: usize,
}

impl Default for CompactionPolicy {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.75,
            min_interval_steps: 3,
            keep_recent_meaningful: 3,
            chars_per_token: 4.0,
            tool_schema_overhead_tokens: None,
            key_observation_budget: KEY_OBSERVATION_BUDGET,
            recent_reasoning: 3,
        }
    }
}

impl CompactionPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction <= 1.0) {
            return Err(format!("threshold_fraction {} must be in (0, 1]", self.threshold_fraction));
        }
        if self.chars_per_token <= 0.0 {
            return Err("chars_per_token must be positive".into());
        }
        if self.min_interval_steps == 0 || self.keep_recent_meaningful == 0 {
            return Err("min_interval_steps and keep_recent_meaningful must be positive".into());
        }
        Ok(())
    }

    fn tokens_for_chars(&self, chars: usize) -> u64 {
        (chars as f64 / self.chars_per_token).ceil() as u64
    }

    pub fn overhead_tokens(&self, tools: &[ToolSpec]) -> u64 {
        match self.tool_schema_overhead_tokens {
            Some(fixed) => fixed,
            None if tools.is_empty() => 0,
            None => render_tool_listing(tools)
                .map(|listing| self.tokens_for_chars(listing.chars().count()))
                .unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolUsage {
    pub count: usize,
    /// Most recent calls, oldest first.
    pub recent_calls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactedSummary {
    pub tool_usage: BTreeMap<String, ToolUsage>,
    pub key_observations: Vec<String>,
    pub recent_reasoning: Vec<String>,
    pub errors: Vec<String>,
    pub final_outputs: Vec<String>,
    pub covered_step_range: (usize, usize),
    pub step_count: usize,
    pub backup_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactionRecord {
    pub agent_name: String,
    pub backup_file: PathBuf,
    pub summary: CompactedSummary,
    pub created_at: DateTime<Utc>,
    pub tokens_before: u64,
    pub tokens_after: u64,
}

#[derive(Debug, Error)]
pub enum CompactionError {
    #[error("cannot write compaction backup {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot read compaction backup {path}: {message}")]
    BackupRead { path: PathBuf, message: String },
}

/// One line of a backup file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackupLine {
    pub index: usize,
    pub reasoning: String,
    pub tool_calls: Vec<ToolCall>,
    pub observation: String,
    pub error: Option<StepError>,
    pub started_at: DateTime<Utc>,
    pub ended_at: DateTime<Utc>,
}

impl From<&ActionStep> for BackupLine {
    fn from(step: &ActionStep) -> Self {
        Self {
            index: step.index,
            reasoning: step.reasoning.clone(),
            tool_calls: step.tool_calls.clone(),
            observation: step.observation.clone(),
            error: step.error.clone(),
            started_at: step.started_at,
            ended_at: step.ended_at,
        }
    }
}

impl From<BackupLine> for ActionStep {
    fn from(line: BackupLine) -> Self {
        ActionStep {
            index: line.index,
            reasoning: line.reasoning,
            tool_calls: line.tool_calls,
            observation: line.observation,
            error: line.error,
            started_at: line.started_at,
            ended_at: line.ended_at,
            token_usage: None,
            compacted: false,
            summary: None,
        }
    }
}

/// `ceil(chars(serialized memory) / chars_per_token) + overhead`.
pub fn estimate_tokens(memory: &AgentMemory, tools: &[ToolSpec], policy: &CompactionPolicy) -> u64 {
    policy.tokens_for_chars(memory.serialize().chars().count()) + policy.overhead_tokens(tools)
}

pub fn should_compact(
    estimate: u64,
    context_limit: u64,
    steps_since_last: usize,
    policy: &CompactionPolicy,
) -> bool {
    estimate as f64 >= policy.threshold_fraction * context_limit as f64
        && steps_since_last >= policy.min_interval_steps
}

/// Writes `steps` to a fresh `memory_backup/<agent>_<seq>.jsonl`; never
/// overwrites an existing backup.
pub fn backup_steps(
    agent_name: &str,
    steps: &[ActionStep],
    workspace: &WorkspaceHandle,
) -> Result<PathBuf, CompactionError> {
    let dir = workspace.join(MEMORY_BACKUP_DIR);
    fs::create_dir_all(&dir).map_err(|source| CompactionError::Storage {
        path: dir.clone(),
        source,
    })?;
    let mut body = String::new();
    for step in steps {
        let line = serde_json::to_string(&BackupLine::from(step)).expect("backup lines serialize");
        body.push_str(&line);
        body.push('\n');
    }
    let mut seq = next_backup_seq(&dir, agent_name);
    loop {
        let path = dir.join(format!("{agent_name}_{seq:04}.jsonl"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                file.write_all(body.as_bytes())
                    .and_then(|_| file.sync_all())
                    .map_err(|source| CompactionError::Storage {
                        path: path.clone(),
                        source,
                    })?;
                return Ok(path);
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => seq += 1,
            Err(source) => return Err(CompactionError::Storage { path, source }),
        }
    }
}

fn next_backup_seq(dir: &Path, agent_name: &str) -> u32 {
    let prefix = format!("{agent_name}_");
    fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(Result::ok)
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|name| {
            name.strip_prefix(&prefix)?
                .strip_suffix(".jsonl")?
                .parse::<u32>()
                .ok()
        })
        .max()
        .map_or(1, |m| m + 1)
}

pub fn read_backup(path: &Path) -> Result<Vec<ActionStep>, CompactionError> {
    let file = fs::File::open(path).map_err(|e| CompactionError::BackupRead {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut steps = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CompactionError::BackupRead {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: BackupLine = serde_json::from_str(&line).map_err(|e| CompactionError::BackupRead {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        steps.push(parsed.into());
    }
    Ok(steps)
}

/// Observations ordered by recency, then size, cut to `budget` characters.
pub fn select_key_observations(steps: &[ActionStep], budget: usize) -> Vec<String> {
    let mut candidates: Vec<(usize, &str)> = steps
        .iter()
        .filter(|s| !s.observation.is_empty())
        .map(|s| (s.index, s.observation.as_str()))
        .collect();
    candidates.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| b.1.chars().count().cmp(&a.1.chars().count()))
    });
    let mut used = 0;
    let mut out = Vec::new();
    for (i, (_, text)) in candidates.iter().enumerate() {
        let len = text.chars().count();
        if used + len <= budget {
            used += len;
            out.push(text.to_string());
        } else {
            if i == 0 {
                out.push(text.chars().take(budget).collect());
            }
            break;
        }
    }
    out
}

pub fn summarize(steps: &[ActionStep], policy: &CompactionPolicy) -> CompactedSummary {
    let mut tool_usage: BTreeMap<String, ToolUsage> = BTreeMap::new();
    for step in steps {
        for call in &step.tool_calls {
            let usage = tool_usage.entry(call.tool.clone()).or_default();
            usage.count += 1;
            usage.recent_calls.push(describe_call(call));
            if usage.recent_calls.len() > RECENT_CALLS_PER_TOOL {
                usage.recent_calls.remove(0);
            }
        }
    }
    let reasoning: Vec<String> = steps
        .iter()
        .filter(|s| !s.reasoning.is_empty())
        .map(|s| s.reasoning.clone())
        .collect();
    let skip = reasoning.len().saturating_sub(policy.recent_reasoning);
    CompactedSummary {
        tool_usage,
        key_observations: select_key_observations(steps, policy.key_observation_budget),
        recent_reasoning: reasoning[skip..].to_vec(),
        errors: steps
            .iter()
            .filter_map(|s| s.error.as_ref().map(|e| e.message.clone()))
            .collect(),
        final_outputs: steps
            .iter()
            .filter_map(|s| s.final_answer().map(str::to_string))
            .collect(),
        covered_step_range: (
            steps.iter().map(|s| s.index).min().unwrap_or(0),
            steps.iter().map(|s| s.index).max().unwrap_or(0),
        ),
        step_count: steps.len(),
        backup_files: Vec::new(),
    }
}

fn describe_call(call: &ToolCall) -> String {
    let args = serde_json::to_string(&call.args).unwrap_or_default();
    let mut text = format!("{}({args})", call.tool);
    if text.chars().count() > CALL_DETAIL_CHARS {
        text = text.chars().take(CALL_DETAIL_CHARS).collect::<String>() + "...";
    }
    text
}

/// Text placed in the summary step's observation.
pub fn render_summary(summary: &CompactedSummary) -> String {
    let (first, last) = summary.covered_step_range;
    let mut out = format!(
        "Earlier work was compacted: {} steps (steps {first}-{last}). Full records are in {}.",
        summary.step_count,
        summary.backup_files.join(", ")
    );
    if !summary.tool_usage.is_empty() {
        out.push_str("\nTool usage:");
        for (tool, usage) in &summary.tool_usage {
            out.push_str(&format!("\n- {tool}: {} calls", usage.count));
            for call in &usage.recent_calls {
                out.push_str(&format!("\n    {call}"));
            }
        }
    }
    let lists = [
        ("Key observations (most recent first):", &summary.key_observations),
        ("Recent reasoning:", &summary.recent_reasoning),
        ("Errors:", &summary.errors),
        ("Final outputs:", &summary.final_outputs),
    ];
    for (title, items) in lists {
        if items.is_empty() {
            continue;
        }
        out.push('\n');
        out.push_str(title);
        for item in items {
            out.push_str("\n- ");
            out.push_str(item);
        }
    }
    out
}

/// Compacts `memory` in place. Returns `None` when nothing is removable.
/// On any storage failure memory is left untouched.
pub fn compact(
    memory: &mut AgentMemory,
    workspace: &WorkspaceHandle,
    tools: &[ToolSpec],
    policy: &CompactionPolicy,
    clock: &dyn Clock,
) -> Result<Option<CompactionRecord>, CompactionError> {
    let tokens_before = estimate_tokens(memory, tools, policy);
    let previous = memory.actions().find(|a| a.compacted).and_then(|a| a.summary.clone());

    let live: Vec<&ActionStep> = memory.actions().filter(|a| !a.compacted).collect();
    let mut kept: Vec<usize> = live
        .iter()
        .rev()
        .filter(|a| a.is_meaningful())
        .take(policy.keep_recent_meaningful)
        .map(|a| a.index)
        .collect();
    kept.sort_unstable();
    let removed: Vec<ActionStep> = live
        .iter()
        .filter(|a| !kept.contains(&a.index))
        .map(|a| (*a).clone())
        .collect();
    if removed.is_empty() {
        return Ok(None);
    }

    let mut backup_files = previous.map(|p| p.backup_files).unwrap_or_default();
    let mut covered = Vec::new();
    for name in &backup_files {
        covered.extend(read_backup(&workspace.join(name))?);
    }
    let backup_file = backup_steps(&memory.agent_name, &removed, workspace)?;
    backup_files.push(workspace.relative(&backup_file));
    covered.extend(removed);
    covered.sort_by_key(|s| s.index);

    let mut summary = summarize(&covered, policy);
    summary.backup_files = backup_files;

    let now = clock.now();
    let make_step = |observation: String| ActionStep {
        index: summary.covered_step_range.0,
        reasoning: String::new(),
        tool_calls: Vec::new(),
        observation,
        error: None,
        started_at: now,
        ended_at: now,
        token_usage: None,
        compacted: true,
        summary: Some(summary.clone()),
    };
    let rebuild = |summary_step: ActionStep| {
        let mut steps = Vec::with_capacity(kept.len() + 4);
        let mut first_task_seen = false;
        let mut rest = Vec::new();
        for step in &memory.steps {
            match step {
                MemoryStep::Task(_) if !first_task_seen => {
                    first_task_seen = true;
                    steps.push(step.clone());
                }
                MemoryStep::Task(_) => rest.push(step.clone()),
                MemoryStep::Action(a) if !a.compacted && kept.contains(&a.index) => rest.push(step.clone()),
                MemoryStep::Action(_) => {}
            }
        }
        steps.push(MemoryStep::Action(summary_step));
        steps.extend(rest);
        AgentMemory {
            agent_name: memory.agent_name.clone(),
            steps,
            last_compaction_step: memory.next_step_index().checked_sub(1),
        }
    };

    let mut rebuilt = rebuild(make_step(render_summary(&summary)));
    let mut tokens_after = estimate_tokens(&rebuilt, tools, policy);
    if tokens_after >= tokens_before {
        rebuilt = rebuild(make_step(String::new()));
        tokens_after = estimate_tokens(&rebuilt, tools, policy);
    }
    *memory = rebuilt;
    Ok(Some(CompactionRecord {
        agent_name: memory.agent_name.clone(),
        backup_file,
        summary,
        created_at: now,
        tokens_before,
        tokens_after,
    }))
}

/// Step callback that compacts whenever [`should_compact`] says so.
#[derive(Debug, Default)]
pub struct CompactionMonitor {
    pub policy: CompactionPolicy,
    records: Mutex<Vec<CompactionRecord>>,
}

impl CompactionMonitor {
    pub fn new(policy: CompactionPolicy) -> Self {
        Self {
            policy,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn records(&self) -> Vec<CompactionRecord> {
        self.records.lock().expect("records lock").clone()
    }
}

impl StepCallback for CompactionMonitor {
    fn name(&self) -> &str {
        "compaction"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let estimate = estimate_tokens(ctx.memory, ctx.tools, &self.policy);
        let since = ctx.memory.steps_since_compaction();
        if !should_compact(estimate, ctx.spec.model.context_limit_tokens, since, &self.policy) {
            return Ok(());
        }
        match compact(ctx.memory, ctx.workspace, ctx.tools, &self.policy, ctx.clock) {
            Ok(Some(record)) => {
                tracing::info!(
                    agent = %record.agent_name,
                    before = record.tokens_before,
                    after = record.tokens_after,
                    backup = %record.backup_file.display(),
                    "memory compacted"
                );
                self.records.lock().expect("records lock").push(record);
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::TickingClock;
    use crate::runtime::memory::TaskStep;
    use chrono::TimeZone;
    use serde_json::json;

    fn step(index: usize, observation: &str) -> ActionStep {
        let t = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, index as u32 % 60).unwrap();
        ActionStep {
            index,
            reasoning: format!("thinking {index}"),
            tool_calls: vec![ToolCall::new("see_file", json!({"filename": format!("f{index}.txt")}))],
            observation: observation.to_string(),
            error: None,
            started_at: t,
            ended_at: t,
            token_usage: None,
            compacted: false,
            summary: None,
        }
    }

    fn memory(n: usize) -> AgentMemory {
        let mut m = AgentMemory::with_task("writeup_agent", TaskStep::new("write"));
        for i in 0..n {
            m.push_action(step(i, &"x".repeat(100 + i)));
        }
        m
    }

    #[test]
    fn estimate_formula_examples() {
        let policy = CompactionPolicy {
            tool_schema_overhead_tokens: Some(200),
            ..Default::default()
        };
        let mut m = AgentMemory::new("a");
        assert_eq!(estimate_tokens(&m, &[], &policy), 200);
        m.push_task(TaskStep::new("y".repeat(4000 - "=== TASK ===\n".len())));
        assert_eq!(m.serialize().chars().count(), 4000);
        assert_eq!(estimate_tokens(&m, &[], &policy), 1200);
    }

    #[test]
    fn trigger_is_inclusive_and_rate_limited() {
        let p = CompactionPolicy::default();
        assert!(should_compact(96_000, 128_000, 5, &p));
        assert!(!should_compact(95_999, 128_000, 5, &p));
        assert!(!should_compact(96_000, 128_000, 2, &p));
        assert!(!should_compact(10, 128_000, 100, &p));
    }

    #[test]
    fn rebuild_keeps_task_summary_and_recent_steps() {
        let dir = tempfile::TempDir::new().unwrap();
        let ws = WorkspaceHandle::create(dir.path(), &["writeup_agent"]).unwrap();
        let mut m = memory(10);
        let record = compact(&mut m, &ws, &[], &CompactionPolicy::default(), &TickingClock::fixed())
            .unwrap()
            .unwrap();
        let actions: Vec<&ActionStep> = m.actions().collect();
        assert_eq!(actions.len(), 4);
        assert!(actions[0].compacted);
        assert_eq!(actions.iter().skip(1).map(|a| a.index).collect::<Vec<_>>(), vec![7, 8, 9]);
        assert_eq!(record.summary.covered_step_range, (0, 6));
        assert_eq!(record.summary.tool_usage["see_file"].count, 7);
        assert!(record.tokens_after < record.tokens_before);
        assert_eq!(read_backup(&record.backup_file).unwrap().len(), 7);
        assert_eq!(m.next_step_index(), 10);
        assert_eq!(m.steps_since_compaction(), 0);
        assert!(matches!(m.steps[0], MemoryStep::Task(_)));
    }

    #[test]
    fn second_compaction_gets_a_new_file_and_merged_summary() {
        let dir = tempfile::TempDir::new().unwrap();
        let ws = WorkspaceHandle::create(dir.path(), &["writeup_agent"]).unwrap();
        let clock = TickingClock::fixed();
        let policy = CompactionPolicy::default();
        let mut m = memory(6);
        let first = compact(&mut m, &ws, &[], &policy, &clock).unwrap().unwrap();
        for i in 6..10 {
            m.push_action(step(i, "more"));
        }
        let second = compact(&mut m, &ws, &[], &policy, &clock).unwrap().unwrap();
        assert_ne!(first.backup_file, second.backup_file);
        assert_eq!(second.summary.covered_step_range, (0, 6));
        assert_eq!(second.summary.backup_files.len(), 2);
        assert_eq!(m.actions().filter(|a| a.compacted).count(), 1);
    }

    #[test]
    fn underflow_keeps_every_meaningful_step() {
        let dir = tempfile::TempDir::new().unwrap();
        let ws = WorkspaceHandle::create(dir.path(), &["writeup_agent"]).unwrap();
        let mut m = memory(2);
        assert!(compact(&mut m, &ws, &[], &CompactionPolicy::default(), &TickingClock::fixed())
            .unwrap()
            .is_none());
        assert_eq!(m, memory(2));
    }

    #[test]
    fn summary_counts_and_errors() {
        let mut steps: Vec<ActionStep> = (0..3).map(|i| step(i, "o")).collect();
        steps[1].tool_calls.push(ToolCall::new("list_dir", json!({"directory": "."})));
        steps[2].error = Some(StepError::new("tool", "boom"));
        let s = summarize(&steps, &CompactionPolicy::default());
        assert_eq!(s.tool_usage["see_file"].count, 3);
        assert_eq!(s.tool_usage["list_dir"].count, 1);
        assert_eq!(s.errors, vec!["boom".to_string()]);
        assert_eq!(s.recent_reasoning.len(), 3);
    }

    #[test]
    fn oversized_first_observation_is_truncated() {
        let steps = vec![step(0, "short"), step(1, &"z".repeat(5000))];
        let picked = select_key_observations(&steps, 2000);
        assert_eq!(picked, vec!["z".repeat(2000)]);
    }
}
