//! The reason / act / observe loop.

use std::sync::Arc;

use thiserror::Error;

use crate::clock::Clock;
use crate::gateway::{GatewayError, LmGateway, LmRequest};
use crate::prompt::{render_system_prompt, PromptError};
use crate::roster::AgentSpec;
use crate::runtime::action::{ActionCodec, JsonActionCodec};
use crate::runtime::memory::{ActionStep, AgentMemory, StepError, TaskStep};
use crate::runtime::tool::{ToolCall, ToolContext, ToolError, ToolRegistry, ToolSpec, FINAL_ANSWER};
use crate::workspace::WorkspaceHandle;

pub const DEFAULT_MAX_STEPS: usize = 40;
pub const DEFAULT_OBSERVATION_CAP: usize = 32 * 1024;

/// View handed to callbacks after every completed step.
pub struct StepContext<'a> {
    pub spec: &'a AgentSpec,
    pub memory: &'a mut AgentMemory,
    /// Listed tools, including `final_answer`.
    pub tools: &'a [ToolSpec],
    pub workspace: &'a WorkspaceHandle,
    pub clock: &'a dyn Clock,
    /// The step just appended, as it was before any callback touched memory.
    pub completed: ActionStep,
    halt: Option<String>,
}

impl StepContext<'_> {
    /// Stops the run after the remaining callbacks have executed.
    pub fn request_halt(&mut self, reason: impl Into<String>) {
        self.halt.get_or_insert_with(|| reason.into());
    }

    pub fn halt_requested(&self) -> Option<&str> {
        self.halt.as_deref()
    }
}

pub trait StepCallback: Send + Sync {
    fn name(&self) -> &str {
        "callback"
    }
    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String>;
}

/// Returns `Some(reason)` to refuse a final answer and keep the agent working.
pub type FinalAnswerGate = Arc<dyn Fn(&AgentSpec, &str) -> Option<String> + Send + Sync>;

#[derive(Clone)]
pub struct RuntimeContext {
    pub workspace: WorkspaceHandle,
    pub gateway: Arc<LmGateway>,
    pub callbacks: Vec<Arc<dyn StepCallback>>,
    pub max_steps: usize,
    pub clock: Arc<dyn Clock>,
    pub observation_cap: usize,
    pub codec: Arc<dyn ActionCodec>,
    pub final_answer_gate: Option<FinalAnswerGate>,
}

impl RuntimeContext {
    pub fn new(workspace: WorkspaceHandle, gateway: Arc<LmGateway>, clock: Arc<dyn Clock>) -> Self {
        Self {
            workspace,
            gateway,
            callbacks: Vec::new(),
            max_steps: DEFAULT_MAX_STEPS,
            clock,
            observation_cap: DEFAULT_OBSERVATION_CAP,
            codec: Arc::new(JsonActionCodec),
            final_answer_gate: None,
        }
    }

    /// Appends a callback; callbacks run in registration order.
    pub fn register_callback(&mut self, callback: Arc<dyn StepCallback>) {
        self.callbacks.push(callback);
    }

    pub fn with_callback(mut self, callback: Arc<dyn StepCallback>) -> Self {
        self.register_callback(callback);
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    FinalAnswer(String),
    BudgetExhausted { steps: usize, last_observation: String },
    /// A callback stopped the run (for instance a delegation budget).
    Halted(String),
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("model call failed for agent '{agent}': {source}")]
    Provider {
        agent: String,
        #[source]
        source: GatewayError,
    },
    #[error("{0}")]
    Fatal(String),
    #[error("runtime misconfigured: {0}")]
    Config(String),
}

/// Runs `spec` on a fresh memory seeded with `task`.
pub fn run_agent(
    spec: &AgentSpec,
    task: TaskStep,
    ctx: &RuntimeContext,
    tools: &ToolRegistry,
) -> Result<(RunOutcome, AgentMemory), RuntimeError> {
    let mut memory = AgentMemory::with_task(spec.name.clone(), task);
    let outcome = run_with_memory(spec, &mut memory, ctx, tools)?;
    Ok((outcome, memory))
}

/// Continues an existing memory until a final answer, budget exhaustion or halt.
pub fn run_with_memory(
    spec: &AgentSpec,
    memory: &mut AgentMemory,
    ctx: &RuntimeContext,
    tools: &ToolRegistry,
) -> Result<RunOutcome, RuntimeError> {
    if ctx.max_steps == 0 {
        return Err(RuntimeError::Config("max_steps must be positive".into()));
    }
    if memory.task().is_none() {
        return Err(RuntimeError::Config(format!("memory of '{}' has no task", spec.name)));
    }
    for name in spec.tool_names() {
        if !tools.contains(name) {
            return Err(RuntimeError::Config(format!(
                "agent '{}' lists tool '{name}' but no implementation is bound",
                spec.name
            )));
        }
    }
    let system_prompt = render_system_prompt(spec)?;
    let listed = spec.listed_tools();
    let tool_ctx = ToolContext {
        agent_name: &spec.name,
        workspace: &ctx.workspace,
        policy: &spec.workspace_policy,
        clock: ctx.clock.as_ref(),
    };

    let mut taken = 0;
    let mut last_observation = String::new();
    while taken < ctx.max_steps {
        let index = memory.next_step_index();
        let started_at = ctx.clock.now();
        let request = LmRequest {
            agent_name: spec.name.clone(),
            system_prompt: system_prompt.clone(),
            serialized_memory: memory.serialize(),
            model: spec.model.model.clone().unwrap_or_else(|| spec.model.provider.clone()),
            max_output_tokens: spec.model.max_output_tokens,
            step_index: index,
        };
        let response = ctx.gateway.complete(&request).map_err(|source| RuntimeError::Provider {
            agent: spec.name.clone(),
            source,
        })?;

        let (reasoning, tool_calls, execution) = match ctx.codec.decode(&response.text) {
            Ok(parsed) => {
                let exec = execute_tool_calls(&parsed.calls, tools, &tool_ctx, ctx.final_answer_gate.as_ref().map(|g| (g, spec)));
                (parsed.reasoning, parsed.calls, exec)
            }
            Err(err) => (
                err.reasoning,
                Vec::new(),
                Execution {
                    observation: format!("Error: {}", err.message),
                    error: Some(StepError::new("parse", err.message)),
                    final_answer: None,
                    fatal: None,
                },
            ),
        };
        let step = ActionStep {
            index,
            reasoning,
            tool_calls,
            observation: cap_observation(execution.observation, ctx.observation_cap),
            error: execution.error,
            started_at,
            ended_at: ctx.clock.now(),
            token_usage: Some(response.token_usage),
            compacted: false,
            summary: None,
        };
        last_observation = step.observation.clone();
        memory.push_action(step.clone());
        taken += 1;
        if let Some(message) = execution.fatal {
            return Err(RuntimeError::Fatal(message));
        }

        let mut step_ctx = StepContext {
            spec,
            memory: &mut *memory,
            tools: &listed,
            workspace: &ctx.workspace,
            clock: ctx.clock.as_ref(),
            completed: step,
            halt: None,
        };
        for callback in &ctx.callbacks {
            if let Err(err) = callback.on_step(&mut step_ctx) {
                tracing::warn!(agent = %spec.name, callback = callback.name(), error = %err, "step callback failed");
            }
        }
        if let Some(reason) = step_ctx.halt {
            return Ok(RunOutcome::Halted(reason));
        }
        if let Some(answer) = execution.final_answer {
            // Guidance injected at this boundary takes precedence over finishing.
            if !memory.has_task_after_last_action() {
                return Ok(RunOutcome::FinalAnswer(answer));
            }
        }
    }
    Ok(RunOutcome::BudgetExhausted {
        steps: taken,
        last_observation,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub observation: String,
    /// First failure in the block, if any.
    pub error: Option<StepError>,
    pub final_answer: Option<String>,
    pub fatal: Option<String>,
}

/// Runs calls in order; each outcome is labeled and a failure does not stop
/// the calls after it. Calls following an accepted `final_answer` are skipped.
pub fn execute_tool_calls(
    calls: &[ToolCall],
    tools: &ToolRegistry,
    ctx: &ToolContext<'_>,
    gate: Option<(&FinalAnswerGate, &AgentSpec)>,
) -> Execution {
    let mut sections = Vec::with_capacity(calls.len());
    let mut error = None;
    let mut final_answer = None;
    let mut fatal = None;
    for (i, call) in calls.iter().enumerate() {
        let n = i + 1;
        if final_answer.is_some() {
            sections.push(format!("--- {} (call {n}) skipped ---\nnot executed: final_answer was already given", call.tool));
            continue;
        }
        let outcome: Result<String, String> = if call.tool == FINAL_ANSWER {
            match call.args.get("answer").and_then(|v| v.as_str()) {
                Some(answer) => match gate.and_then(|(g, spec)| g(spec, answer)) {
                    Some(refusal) => Err(refusal),
                    None => {
                        final_answer = Some(answer.to_string());
                        Ok(answer.to_string())
                    }
                },
                None => Err("final_answer requires a string argument 'answer'".into()),
            }
        } else {
            match tools.get(&call.tool) {
                None => {
                    let mut names = tools.names();
                    names.push(FINAL_ANSWER);
                    Err(format!("unknown tool {}; available: {}", call.tool, names.join(", ")))
                }
                Some(tool) => match tool.spec().check_args(&call.args) {
                    Err(msg) => Err(format!("invalid arguments for {}: {msg}", call.tool)),
                    Ok(()) => match tool.call(&call.args, ctx) {
                        Ok(output) => Ok(output),
                        Err(ToolError::Fatal(msg)) => {
                            fatal.get_or_insert(msg.clone());
                            Err(msg)
                        }
                        Err(e) => Err(e.to_string()),
                    },
                },
            }
        };
        match outcome {
            Ok(output) => sections.push(format!("--- {} (call {n}) ---\n{output}", call.tool)),
            Err(message) => {
                sections.push(format!("--- {} (call {n}) failed ---\n{message}", call.tool));
                error.get_or_insert_with(|| StepError::new("tool", message));
            }
        }
    }
    Execution {
        observation: sections.join("\n\n"),
        error,
        final_answer,
        fatal,
    }
}

fn cap_observation(observation: String, cap: usize) -> String {
    if observation.len() <= cap {
        return observation;
    }
    let mut cut = cap;
    while !observation.is_char_boundary(cut) {
        cut -= 1;
    }
    format!(
        "{}\n[observation truncated: showing {cut} of {} bytes]",
        &observation[..cut],
        observation.len()
    )
}
