//! One research run: workspace, roster, manager loop and persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;
use uuid::Uuid;

use super::delegation::{AgentChangeHook, GuardrailMonitor, Hub};
use super::presets::Roster;
use super::review::ReportMarkers;
use super::Guardrails;
use crate::clock::{Clock, SystemClock};
use crate::compaction::{CompactionMonitor, CompactionPolicy, CompactionRecord};
use crate::gateway::{Backend, CallLog, LmGateway, RetryPolicy};
use crate::intervention::{AppliedGuidance, GuidanceSource, GuidanceTarget, InterventionChannel, InterventionMonitor, StatusSink};
use crate::persistence::{is_session, load_session, save_session, PersistenceError, SessionState, SessionStatus, SCHEMA_VERSION};
use crate::runtime::agent::{run_with_memory, RunOutcome, RuntimeContext, StepCallback, StepContext, DEFAULT_MAX_STEPS};
use crate::runtime::memory::{AgentMemory, TaskStep};
use crate::workspace::{WorkspaceError, WorkspaceHandle, CALL_LOG_FILE, INTERRUPT_FLAG};

const PAUSE_REASON: &str = "paused after the requested number of delegations";

/// How operator interrupts reach the agents.
#[derive(Clone)]
pub struct InterventionSetup {
    pub channel: Arc<InterventionChannel>,
    pub source: Arc<dyn GuidanceSource>,
    pub target: GuidanceTarget,
    pub status: Option<Arc<dyn StatusSink>>,
}

impl InterventionSetup {
    pub fn new(channel: Arc<InterventionChannel>, source: Arc<dyn GuidanceSource>) -> Self {
        Self {
            channel,
            source,
            target: GuidanceTarget::Current,
            status: None,
        }
    }
}

#[derive(Clone)]
pub struct SessionConfig {
    pub roster: Roster,
    pub backend: Arc<dyn Backend>,
    pub guardrails: Guardrails,
    pub markers: ReportMarkers,
    /// `None` disables compaction.
    pub compaction: Option<CompactionPolicy>,
    pub max_steps: usize,
    pub clock: Arc<dyn Clock>,
    pub retry: Option<RetryPolicy>,
    /// Refuse the manager's final answer until a review reaches the accept threshold.
    pub quality_gate: bool,
    pub intervention: Option<InterventionSetup>,
    /// Extra callbacks run after every step of every agent.
    pub observers: Vec<Arc<dyn StepCallback>>,
    pub on_agent_change: Option<AgentChangeHook>,
    /// Stop with [`SessionOutcome::Paused`] after this many delegations in one `run`.
    pub pause_after: Option<u32>,
}

impl SessionConfig {
    pub fn new(roster: Roster, backend: Arc<dyn Backend>) -> Self {
        Self {
            roster,
            backend,
            guardrails: Guardrails::default(),
            markers: ReportMarkers::default(),
            compaction: Some(CompactionPolicy::default()),
            max_steps: DEFAULT_MAX_STEPS,
            clock: Arc::new(SystemClock),
            retry: None,
            quality_gate: false,
            intervention: None,
            observers: Vec::new(),
            on_agent_change: None,
            pause_after: None,
        }
    }

    fn validate(&self) -> Result<(), SessionError> {
        self.guardrails.validate().map_err(SessionError::Config)?;
        if let Some(policy) = &self.compaction {
            policy.validate().map_err(SessionError::Config)?;
        }
        if self.max_steps == 0 {
            return Err(SessionError::Config("max_steps must be positive".into()));
        }
        if self.pause_after == Some(0) {
            return Err(SessionError::Config("pause_after must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionOutcome {
    Finished(String),
    /// Delegation or manager step budget spent; holds the budget report.
    BudgetExhausted(String),
    Paused(String),
    Failed(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("'{}' already holds a session; resume it or choose an empty directory", .0.display())]
    AlreadyExists(PathBuf),
    #[error("saved session roster {saved:?} differs from the configured roster {configured:?}")]
    RosterMismatch { saved: Vec<String>, configured: Vec<String> },
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("cannot open call log: {0}")]
    Log(#[from] std::io::Error),
}

pub struct Session {
    config: SessionConfig,
    workspace: WorkspaceHandle,
    meta: Arc<Mutex<SessionState>>,
    manager_memory: AgentMemory,
    hub: Arc<Hub>,
    compaction: Option<Arc<CompactionMonitor>>,
    intervention: Option<Arc<InterventionMonitor>>,
    gateway: Arc<LmGateway>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("workspace", &self.workspace.root())
            .field("manager", &self.manager_memory.agent_name)
            .finish()
    }
}

impl Session {
    /// Initializes `dir` as a new workspace for `task`.
    pub fn start(config: SessionConfig, dir: &Path, task: &str) -> Result<Self, SessionError> {
        config.validate()?;
        if task.trim().is_empty() {
            return Err(SessionError::Config("task must not be empty".into()));
        }
        if is_session(dir) {
            return Err(SessionError::AlreadyExists(dir.to_path_buf()));
        }
        let names: Vec<String> = config.roster.names().iter().map(|s| s.to_string()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let workspace = WorkspaceHandle::create(dir, &refs)?;
        let manager = config.roster.manager().name.clone();
        let state = SessionState {
            schema_version: SCHEMA_VERSION,
            session_id: Uuid::new_v4().to_string(),
            created_at: config.clock.now(),
            workspace_root: workspace.root().to_path_buf(),
            task: task.to_string(),
            manager: manager.clone(),
            roster: names.clone(),
            status: SessionStatus::Running,
            final_answer: None,
            agents: names
                .iter()
                .map(|n| (n.clone(), AgentMemory::new(n.clone())))
                .collect(),
            manager_state: Default::default(),
            delegations: Vec::new(),
            latest_score: None,
        };
        let manager_memory = AgentMemory::with_task(manager, TaskStep::new(task));
        let session = Self::assemble(config, workspace, state, manager_memory)?;
        session.save(SessionStatus::Running)?;
        Ok(session)
    }

    /// Reopens the session saved in `dir`.
    pub fn resume(config: SessionConfig, dir: &Path) -> Result<Self, SessionError> {
        config.validate()?;
        let mut state = load_session(dir)?;
        let configured: Vec<String> = config.roster.names().iter().map(|s| s.to_string()).collect();
        if state.roster != configured || state.manager != config.roster.manager().name {
            return Err(SessionError::RosterMismatch {
                saved: state.roster,
                configured,
            });
        }
        let refs: Vec<&str> = configured.iter().map(String::as_str).collect();
        let workspace = WorkspaceHandle::create(dir, &refs)?;
        let manager_memory = state
            .agents
            .remove(&state.manager)
            .unwrap_or_else(|| AgentMemory::with_task(state.manager.clone(), TaskStep::new(state.task.clone())));
        Self::assemble(config, workspace, state, manager_memory)
    }

    fn assemble(
        config: SessionConfig,
        workspace: WorkspaceHandle,
        mut state: SessionState,
        manager_memory: AgentMemory,
    ) -> Result<Self, SessionError> {
        let log = Arc::new(CallLog::open(workspace.join(CALL_LOG_FILE))?);
        let mut gateway = LmGateway::new(config.backend.clone())
            .with_log(log)
            .with_clock(config.clock.clone());
        if let Some(retry) = config.retry.clone() {
            gateway = gateway.with_retry(retry);
        }
        let gateway = Arc::new(gateway);

        let compaction = config.compaction.clone().map(|p| Arc::new(CompactionMonitor::new(p)));
        let intervention = config.intervention.as_ref().map(|setup| {
            let mut monitor = InterventionMonitor::new(setup.channel.clone(), setup.source.clone())
                .with_flag_file(workspace.join(INTERRUPT_FLAG), config.clock.clone());
            if setup.target == GuidanceTarget::Manager {
                monitor = monitor.target_manager(&state.manager);
            }
            if let Some(sink) = &setup.status {
                monitor = monitor.with_status(sink.clone());
            }
            Arc::new(monitor)
        });

        let mut sub_ctx = RuntimeContext::new(workspace.clone(), gateway.clone(), config.clock.clone())
            .with_max_steps(config.max_steps);
        if let Some(c) = &compaction {
            sub_ctx.register_callback(c.clone());
        }
        if let Some(i) = &intervention {
            sub_ctx.register_callback(i.clone());
        }
        for observer in &config.observers {
            sub_ctx.register_callback(observer.clone());
        }

        let memories: BTreeMap<String, AgentMemory> = std::mem::take(&mut state.agents)
            .into_iter()
            .filter(|(name, _)| *name != state.manager)
            .collect();
        let mut hub = Hub::new(config.roster.clone(), config.guardrails, sub_ctx)
            .with_markers(config.markers.clone())
            .restore(
                memories,
                state.manager_state.clone(),
                state.delegations.clone(),
                state.latest_score.clone(),
            );
        if let Some(hook) = &config.on_agent_change {
            hub = hub.with_agent_change(hook.clone());
        }
        Ok(Self {
            config,
            workspace,
            meta: Arc::new(Mutex::new(state)),
            manager_memory,
            hub: Arc::new(hub),
            compaction,
            intervention,
            gateway,
        })
    }

    pub fn workspace(&self) -> &WorkspaceHandle {
        &self.workspace
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn gateway(&self) -> &Arc<LmGateway> {
        &self.gateway
    }

    pub fn status(&self) -> SessionStatus {
        self.meta.lock().expect("meta lock").status
    }

    pub fn manager_memory(&self) -> &AgentMemory {
        &self.manager_memory
    }

    pub fn compaction_records(&self) -> Vec<CompactionRecord> {
        self.compaction.as_ref().map(|c| c.records()).unwrap_or_default()
    }

    pub fn applied_guidance(&self) -> Vec<AppliedGuidance> {
        self.intervention.as_ref().map(|i| i.applied()).unwrap_or_default()
    }

    /// Full state as it would be saved now.
    pub fn snapshot(&self) -> SessionState {
        snapshot(&self.meta.lock().expect("meta lock"), &self.hub, &self.manager_memory)
    }

    fn save(&self, status: SessionStatus) -> Result<(), SessionError> {
        self.meta.lock().expect("meta lock").status = status;
        save_session(&self.snapshot(), self.workspace.root())?;
        Ok(())
    }

    fn finish(&self, status: SessionStatus, final_answer: Option<String>) -> Result<(), SessionError> {
        self.meta.lock().expect("meta lock").final_answer = final_answer;
        self.save(status)
    }

    /// Runs the manager until it finishes, pauses, fails or spends its budget.
    /// A session that already ended returns its recorded outcome without any model call.
    pub fn run(&mut self) -> Result<SessionOutcome, SessionError> {
        let (status, recorded) = {
            let meta = self.meta.lock().expect("meta lock");
            (meta.status, meta.final_answer.clone().unwrap_or_default())
        };
        match status {
            SessionStatus::Finished => return Ok(SessionOutcome::Finished(recorded)),
            SessionStatus::BudgetExhausted => return Ok(SessionOutcome::BudgetExhausted(recorded)),
            _ => {}
        }
        self.save(SessionStatus::Running)?;

        let manager = self.hub.roster().manager().clone();
        let registry = self.hub.manager_registry();
        let mut ctx = RuntimeContext::new(self.workspace.clone(), self.gateway.clone(), self.config.clock.clone())
            .with_max_steps(self.config.max_steps);
        if let Some(c) = &self.compaction {
            ctx.register_callback(c.clone());
        }
        if let Some(i) = &self.intervention {
            ctx.register_callback(i.clone());
        }
        ctx.register_callback(Arc::new(GuardrailMonitor::new(self.hub.clone())));
        ctx.register_callback(Arc::new(Autosave {
            hub: self.hub.clone(),
            meta: self.meta.clone(),
            root: self.workspace.root().to_path_buf(),
        }));
        if let Some(n) = self.config.pause_after {
            ctx.register_callback(Arc::new(PauseAfter {
                hub: self.hub.clone(),
                at: self.hub.manager_state().total_calls + n,
            }));
        }
        for observer in &self.config.observers {
            ctx.register_callback(observer.clone());
        }
        if self.config.quality_gate {
            let hub = self.hub.clone();
            let threshold = self.config.guardrails.accept_threshold;
            ctx.final_answer_gate = Some(Arc::new(move |spec, _answer| {
                if spec.is_supervisor() {
                    let score = hub.latest_score().map(|s| s.overall);
                    if score.is_none_or(|s| s < threshold) {
                        let shown = score.map(|s| format!("{s}/10")).unwrap_or_else(|| "none".into());
                        return Some(format!(
                            "final_answer refused: the latest review score is {shown}; at least {threshold}/10 is required before finishing."
                        ));
                    }
                }
                None
            }));
        }

        let result = run_with_memory(&manager, &mut self.manager_memory, &ctx, &registry);
        let outcome = match result {
            Ok(RunOutcome::FinalAnswer(answer)) => {
                self.finish(SessionStatus::Finished, Some(answer.clone()))?;
                SessionOutcome::Finished(answer)
            }
            Ok(RunOutcome::Halted(reason)) => {
                if let Some(report) = self.hub.terminated() {
                    self.finish(SessionStatus::BudgetExhausted, Some(report.clone()))?;
                    SessionOutcome::BudgetExhausted(report)
                } else {
                    self.save(SessionStatus::Paused)?;
                    SessionOutcome::Paused(reason)
                }
            }
            Ok(RunOutcome::BudgetExhausted { steps, .. }) => {
                let report = format!("Manager step budget exhausted after {steps} steps without a final answer.");
                self.finish(SessionStatus::BudgetExhausted, Some(report.clone()))?;
                SessionOutcome::BudgetExhausted(report)
            }
            Err(e) => {
                self.save(SessionStatus::Failed)?;
                SessionOutcome::Failed(e.to_string())
            }
        };
        Ok(outcome)
    }
}

fn snapshot(meta: &SessionState, hub: &Hub, manager_memory: &AgentMemory) -> SessionState {
    let mut state = meta.clone();
    state.agents = hub.memories();
    state.agents.insert(manager_memory.agent_name.clone(), manager_memory.clone());
    state.manager_state = hub.manager_state();
    state.delegations = hub.records();
    state.latest_score = hub.latest_score();
    state
}

/// Saves the session after every manager step that delegated.
struct Autosave {
    hub: Arc<Hub>,
    meta: Arc<Mutex<SessionState>>,
    root: PathBuf,
}

impl StepCallback for Autosave {
    fn name(&self) -> &str {
        "autosave"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let members = self.hub.roster().members();
        if !ctx.completed.tool_calls.iter().any(|c| members.iter().any(|m| m.name == c.tool)) {
            return Ok(());
        }
        let state = snapshot(&self.meta.lock().expect("meta lock"), &self.hub, ctx.memory);
        save_session(&state, &self.root).map_err(|e| e.to_string())
    }
}

struct PauseAfter {
    hub: Arc<Hub>,
    at: u32,
}

impl StepCallback for PauseAfter {
    fn name(&self) -> &str {
        "pause"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if self.hub.manager_state().total_calls >= self.at {
            ctx.request_halt(PAUSE_REASON);
        }
        Ok(())
    }
}
