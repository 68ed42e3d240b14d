//! Managed agents exposed to the manager as tools.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde_json::{Map, Value};

use super::presets::Roster;
use super::review::{enforce_termination_policy, DelegationReport, ReportMarkers, ReviewScore};
use super::{DelegationRecord, Guardrails};
use crate::persistence::ManagerState;
use crate::roster::AgentSpec;
use crate::runtime::agent::{run_with_memory, RunOutcome, RuntimeContext, StepCallback, StepContext};
use crate::runtime::memory::{AgentMemory, TaskStep};
use crate::runtime::tool::{Args, ParamSpec, ParamType, Tool, ToolContext, ToolError, ToolRegistry, ToolSpec};

/// Called with the agent that starts working, and with `None` when control returns to the manager.
pub type AgentChangeHook = Arc<dyn Fn(Option<&str>) + Send + Sync>;

#[derive(Debug, Default)]
struct Ledger {
    state: ManagerState,
    records: Vec<DelegationRecord>,
    latest_score: Option<ReviewScore>,
    terminate: Option<String>,
}

/// Shared state behind every delegation tool of one session.
pub struct Hub {
    roster: Roster,
    guardrails: Guardrails,
    markers: ReportMarkers,
    context: RuntimeContext,
    memories: Mutex<BTreeMap<String, AgentMemory>>,
    ledger: Mutex<Ledger>,
    on_agent_change: Option<AgentChangeHook>,
}

impl Hub {
    /// `context` is what sub-agents run with; `memories` holds their state so far.
    pub fn new(roster: Roster, guardrails: Guardrails, context: RuntimeContext) -> Self {
        Self {
            roster,
            guardrails,
            markers: ReportMarkers::default(),
            context,
            memories: Mutex::new(BTreeMap::new()),
            ledger: Mutex::new(Ledger::default()),
            on_agent_change: None,
        }
    }

    pub fn with_markers(mut self, markers: ReportMarkers) -> Self {
        self.markers = markers;
        self
    }

    pub fn with_agent_change(mut self, hook: AgentChangeHook) -> Self {
        self.on_agent_change = Some(hook);
        self
    }

    /// Restores saved sub-agent memories and the manager's bookkeeping.
    pub fn restore(
        self,
        memories: BTreeMap<String, AgentMemory>,
        state: ManagerState,
        records: Vec<DelegationRecord>,
        latest_score: Option<ReviewScore>,
    ) -> Self {
        *self.memories.lock().expect("memories lock") = memories;
        *self.ledger.lock().expect("ledger lock") = Ledger {
            state,
            records,
            latest_score,
            terminate: None,
        };
        self
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn guardrails(&self) -> &Guardrails {
        &self.guardrails
    }

    /// The manager's own tools followed by one delegation tool per member.
    pub fn manager_registry(self: &Arc<Self>) -> ToolRegistry {
        let mut registry = self.roster.registry_for(self.roster.manager());
        for member in self.roster.members() {
            registry.register(Arc::new(DelegationTool::new(member, self.clone())));
        }
        registry
    }

    pub fn records(&self) -> Vec<DelegationRecord> {
        self.ledger.lock().expect("ledger lock").records.clone()
    }

    pub fn manager_state(&self) -> ManagerState {
        self.ledger.lock().expect("ledger lock").state.clone()
    }

    pub fn latest_score(&self) -> Option<ReviewScore> {
        self.ledger.lock().expect("ledger lock").latest_score.clone()
    }

    /// Budget report once the total limit has been hit.
    pub fn terminated(&self) -> Option<String> {
        self.ledger.lock().expect("ledger lock").terminate.clone()
    }

    pub fn memories(&self) -> BTreeMap<String, AgentMemory> {
        self.memories.lock().expect("memories lock").clone()
    }

    fn budget_report(&self, ledger: &Ledger) -> String {
        let per_agent: Vec<String> = self
            .roster
            .members()
            .iter()
            .map(|m| format!("{} {}", m.name, ledger.state.delegation_count.get(&m.name).copied().unwrap_or(0)))
            .collect();
        let score = ledger
            .latest_score
            .as_ref()
            .map(|s| format!("{}/10", s.overall))
            .unwrap_or_else(|| "none".into());
        format!(
            "Delegation budget exhausted: {}/{} agent calls used ({}). Latest review score: {score}.",
            ledger.state.total_calls,
            self.guardrails.total_limit,
            per_agent.join(", ")
        )
    }

    /// Checks the guardrails, then runs `target` on its own memory.
    pub fn delegate(&self, target: &str, task: &str, args: BTreeMap<String, String>) -> Result<String, ToolError> {
        let spec = self
            .roster
            .members()
            .iter()
            .find(|m| m.name == target)
            .ok_or_else(|| ToolError::Failed(format!("'{target}' is not a managed agent")))?
            .clone();

        let (seq, iteration) = {
            let mut ledger = self.ledger.lock().expect("ledger lock");
            if let Some(report) = &ledger.terminate {
                return Err(ToolError::Failed(report.clone()));
            }
            let limits = self.guardrails;
            if ledger.state.total_calls >= limits.total_limit {
                let report = self.budget_report(&ledger);
                ledger.terminate = Some(report.clone());
                return Err(ToolError::Failed(format!(
                    "Maximum {} total agent calls reached; no further delegations are possible. {report}",
                    limits.total_limit
                )));
            }
            let done = ledger.state.iterations(target);
            if done >= limits.per_agent_limit {
                return Err(ToolError::Failed(format!(
                    "Maximum {} iterations per agent reached for {target} ({done}/{}). Delegate to a different agent or finish the project.",
                    limits.per_agent_limit, limits.per_agent_limit
                )));
            }
            *ledger.state.delegation_count.entry(target.to_string()).or_insert(0) += 1;
            ledger.state.total_calls += 1;
            (ledger.state.total_calls, done + 1)
        };

        let report = self.run_member(&spec, task, args.clone())?;
        let parsed = DelegationReport::parse(target, &report, &self.markers);
        let mut ledger = self.ledger.lock().expect("ledger lock");
        let mut annotation = format!(
            "[delegation {seq}/{} | {target} {iteration}/{} | verdict: {}]",
            self.guardrails.total_limit,
            self.guardrails.per_agent_limit,
            parsed.verdict.as_str()
        );
        if let Some(score) = &parsed.score {
            let decision = enforce_termination_policy(score, &self.guardrails);
            annotation.push_str(&format!(
                "\n[review score {}/10 | may_terminate: {} | mandatory_redirect: {}]",
                score.overall, decision.may_terminate, decision.mandatory_redirect
            ));
            ledger.latest_score = Some(score.clone());
            if self.guardrails.reset_after_accept && decision.may_terminate {
                ledger.state.iteration_baseline = ledger.state.delegation_count.clone();
            }
        }
        ledger.records.push(DelegationRecord {
            seq,
            target: target.to_string(),
            task: task.to_string(),
            additional_args: args,
            verdict: parsed.verdict,
            score: parsed.score,
            artifacts: parsed.artifacts_announced,
            report: report.clone(),
        });
        Ok(format!("{report}\n\n{annotation}"))
    }

    fn run_member(&self, spec: &AgentSpec, task: &str, args: BTreeMap<String, String>) -> Result<String, ToolError> {
        let mut memory = self
            .memories
            .lock()
            .expect("memories lock")
            .remove(&spec.name)
            .unwrap_or_else(|| AgentMemory::new(spec.name.clone()));
        memory.push_task(TaskStep::new(task).with_args(args));
        if let Some(hook) = &self.on_agent_change {
            hook(Some(&spec.name));
        }
        let result = run_with_memory(spec, &mut memory, &self.context, &self.roster.registry_for(spec));
        if let Some(hook) = &self.on_agent_change {
            hook(None);
        }
        self.memories.lock().expect("memories lock").insert(spec.name.clone(), memory);
        match result {
            Ok(RunOutcome::FinalAnswer(answer)) => Ok(answer),
            Ok(RunOutcome::BudgetExhausted { steps, last_observation }) => Ok(format!(
                "TASK FAILED - step budget exhausted after {steps} steps. Last observation: {last_observation}"
            )),
            Ok(RunOutcome::Halted(reason)) => Ok(format!("TASK FAILED - halted: {reason}")),
            Err(e) => Err(ToolError::Fatal(format!("{} could not run: {e}", spec.name))),
        }
    }
}

/// Tool the manager calls to hand a task to one member.
pub struct DelegationTool {
    spec: ToolSpec,
    hub: Arc<Hub>,
}

impl DelegationTool {
    pub fn new(member: &AgentSpec, hub: Arc<Hub>) -> Self {
        let spec = ToolSpec::new(
            &member.name,
            &member.description,
            vec![
                ParamSpec::required("task", ParamType::String, "Complete task description for the team member."),
                ParamSpec::nullable(
                    "additional_args",
                    ParamType::Object,
                    "Extra named values (paths, identifiers, settings) passed along with the task.",
                ),
            ],
        );
        Self { spec, hub }
    }
}

impl Tool for DelegationTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call(&self, args: &Map<String, Value>, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        let task = a.str("task")?;
        let extra = a
            .opt_object("additional_args")
            .map(|m| {
                m.iter()
                    .map(|(k, v)| {
                        let text = match v {
                            Value::String(s) => s.clone(),
                            other => other.to_string(),
                        };
                        (k.clone(), text)
                    })
                    .collect()
            })
            .unwrap_or_default();
        self.hub.delegate(&self.spec.name, task, extra)
    }
}

/// Stops the manager once the total delegation budget is spent.
pub struct GuardrailMonitor {
    hub: Arc<Hub>,
}

impl GuardrailMonitor {
    pub fn new(hub: Arc<Hub>) -> Self {
        Self { hub }
    }
}

impl StepCallback for GuardrailMonitor {
    fn name(&self) -> &str {
        "guardrails"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if let Some(report) = self.hub.terminated() {
            ctx.request_halt(report);
        }
        Ok(())
    }
}
