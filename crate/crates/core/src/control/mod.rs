//! Operator surfaces: the `labcrew` command line and the HTTP control API.
//!
//! Both build sessions from the same [`RunSettings`], so a TOML config file
//! for the CLI and the `config` object of `POST /runs` share one schema.

pub mod cli;
pub mod server;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::clock::SystemClock;
use crate::compaction::CompactionPolicy;
use crate::gateway::{Backend, HttpBackend, HttpConfig, ScriptedBackend};
use crate::intervention::{Guidance, GuidanceSource, GuidanceTarget, InterventionChannel, InterventionSignal, QueueGuidance, StatusSink};
use crate::orchestration::{
    reference_roster, Guardrails, InterventionSetup, Roster, RosterFile, Session, SessionConfig, SessionError,
    SessionOutcome,
};
use crate::persistence::{load_session, SessionStatus};
use crate::runtime::agent::{StepCallback, StepContext};
use crate::runtime::memory::ActionStep;

/// Guidance left by `labcrew interrupt --guidance` for the next suspension.
pub const GUIDANCE_FILE: &str = ".guidance";

/// Directory holding the bundled stub fixtures.
pub fn default_fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Everything needed to build a [`SessionConfig`] except the task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub task: Option<String>,
    /// Replay responses from this script instead of calling a live provider.
    pub script: Option<PathBuf>,
    pub roster: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub max_total_calls: Option<u32>,
    pub max_per_agent: Option<u32>,
    pub accept_threshold: Option<u8>,
    pub reset_after_accept: Option<bool>,
    pub max_steps: Option<usize>,
    /// `false` disables compaction.
    pub compaction: Option<bool>,
    pub compaction_threshold: Option<f64>,
    pub quality_gate: Option<bool>,
    pub guidance_target: Option<GuidanceTarget>,
}

impl RunSettings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Fields set in `other` win.
    pub fn overlay(mut self, other: &RunSettings) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            task,
            script,
            roster,
            fixtures,
            max_total_calls,
            max_per_agent,
            accept_threshold,
            reset_after_accept,
            max_steps,
            compaction,
            compaction_threshold,
            quality_gate,
            guidance_target
        );
        self
    }

    pub fn fixtures_dir(&self) -> PathBuf {
        self.fixtures.clone().unwrap_or_else(default_fixtures_dir)
    }

    pub fn guardrails(&self) -> Guardrails {
        let mut g = Guardrails::default();
        if let Some(v) = self.max_total_calls {
            g.total_limit = v;
        }
        if let Some(v) = self.max_per_agent {
            g.per_agent_limit = v;
        }
        if let Some(v) = self.accept_threshold {
            g.accept_threshold = v;
        }
        if let Some(v) = self.reset_after_accept {
            g.reset_after_accept = v;
        }
        g
    }

    pub fn build_roster(&self) -> Result<Roster, String> {
        let fixtures = self.fixtures_dir();
        match &self.roster {
            Some(path) => {
                let file = RosterFile::load(path).map_err(|e| e.to_string())?;
                Roster::from_file(&file, &fixtures).map_err(|e| e.to_string())
            }
            None => reference_roster(&fixtures).map_err(|e| e.to_string()),
        }
    }

    /// Scripted backend when `script` is set, otherwise the live provider
    /// configured from the environment.
    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, String> {
        match &self.script {
            Some(path) => Ok(Arc::new(ScriptedBackend::from_file(path).map_err(|e| e.to_string())?)),
            None => Ok(Arc::new(HttpBackend::new(HttpConfig::from_env()?)?)),
        }
    }

    /// Validates everything before any model call.
    pub fn build(&self) -> Result<SessionConfig, String> {
        let roster = self.build_roster()?;
        let backend = self.build_backend()?;
        let mut config = SessionConfig::new(roster, backend);
        config.guardrails = self.guardrails();
        config.guardrails.validate()?;
        if self.compaction == Some(false) {
            config.compaction = None;
        } else if let Some(t) = self.compaction_threshold {
            let policy = CompactionPolicy {
                threshold_fraction: t,
                ..CompactionPolicy::default()
            };
            policy.validate()?;
            config.compaction = Some(policy);
        }
        if let Some(n) = self.max_steps {
            config.max_steps = n;
        }
        config.quality_gate = self.quality_gate.unwrap_or(false);
        config.clock = Arc::new(SystemClock);
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    SuspendedForGuidance,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeView {
    /// finished, budget_exhausted, paused, failed or error.
    pub kind: String,
    pub message: String,
}

impl OutcomeView {
    pub fn from_outcome(outcome: &SessionOutcome) -> Self {
        let (kind, message) = match outcome {
            SessionOutcome::Finished(m) => ("finished", m),
            SessionOutcome::BudgetExhausted(m) => ("budget_exhausted", m),
            SessionOutcome::Paused(m) => ("paused", m),
            SessionOutcome::Failed(m) => ("failed", m),
        };
        Self {
            kind: kind.into(),
            message: message.clone(),
        }
    }

    pub fn status(&self) -> RunStatus {
        match self.kind.as_str() {
            "finished" | "budget_exhausted" => RunStatus::Finished,
            _ => RunStatus::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDescriptor {
    /// Wire schema; tracks the persisted session schema.
    pub schema_version: u32,
    pub run_id: String,
    pub workspace_root: PathBuf,
    pub status: RunStatus,
    pub current_agent: Option<String>,
    /// Completed steps across all agents.
    pub step_counter: u64,
    pub outcome: Option<OutcomeView>,
}

/// One completed action step of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// Strictly increasing within a run, starting at 1.
    pub id: u64,
    pub agent: String,
    pub step: ActionStep,
}

struct RunState {
    status: RunStatus,
    current_agent: Option<String>,
    outcome: Option<OutcomeView>,
    worker_active: bool,
}

/// Shared state of one hosted run. The worker thread writes; API handlers read.
pub struct RunEntry {
    id: String,
    root: PathBuf,
    settings: RunSettings,
    manager: String,
    state: Mutex<RunState>,
    base_steps: u64,
    events: Mutex<Vec<StepEvent>>,
    next_id: AtomicU64,
    notify: tokio::sync::watch::Sender<u64>,
    channel: Arc<InterventionChannel>,
    guidance: Arc<QueueGuidance>,
}

impl RunEntry {
    fn new(id: String, root: PathBuf, settings: RunSettings, manager: String, base_steps: u64) -> Self {
        let (notify, _) = tokio::sync::watch::channel(0);
        Self {
            id,
            root,
            settings,
            manager,
            state: Mutex::new(RunState {
                status: RunStatus::Running,
                current_agent: None,
                outcome: None,
                worker_active: false,
            }),
            base_steps,
            events: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
            notify,
            channel: Arc::new(InterventionChannel::new()),
            guidance: Arc::new(QueueGuidance::new()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn descriptor(&self) -> RunDescriptor {
        let state = self.state.lock().expect("run state");
        RunDescriptor {
            schema_version: crate::persistence::SCHEMA_VERSION,
            run_id: self.id.clone(),
            workspace_root: self.root.clone(),
            status: state.status,
            current_agent: state.current_agent.clone(),
            step_counter: self.base_steps + self.events.lock().expect("events").len() as u64,
            outcome: state.outcome.clone(),
        }
    }

    pub fn status(&self) -> RunStatus {
        self.state.lock().expect("run state").status
    }

    pub fn is_active(&self) -> bool {
        self.state.lock().expect("run state").worker_active
    }

    pub fn events_after(&self, last_id: u64) -> Vec<StepEvent> {
        self.events
            .lock()
            .expect("events")
            .iter()
            .filter(|e| e.id > last_id)
            .cloned()
            .collect()
    }

    pub fn subscribe(&self) -> tokio::sync::watch::Receiver<u64> {
        self.notify.subscribe()
    }

    pub fn channel(&self) -> &Arc<InterventionChannel> {
        &self.channel
    }

    pub fn guidance(&self) -> &Arc<QueueGuidance> {
        &self.guidance
    }

    fn set_status(&self, status: RunStatus) {
        self.state.lock().expect("run state").status = status;
        self.notify.send_modify(|v| *v += 1);
    }

    fn set_agent(&self, agent: Option<&str>) {
        let name = agent.unwrap_or(&self.manager).to_string();
        self.state.lock().expect("run state").current_agent = Some(name);
    }

    fn push_event(&self, agent: &str, step: ActionStep) {
        let mut events = self.events.lock().expect("events");
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        events.push(StepEvent {
            id,
            agent: agent.to_string(),
            step,
        });
        drop(events);
        self.notify.send_replace(id);
    }

    fn finish(&self, outcome: OutcomeView) {
        let mut state = self.state.lock().expect("run state");
        state.status = outcome.status();
        state.outcome = Some(outcome);
        state.worker_active = false;
        drop(state);
        self.notify.send_modify(|v| *v += 1);
    }

    /// Whether the stream has nothing more to deliver beyond the events present.
    pub fn is_settled(&self) -> bool {
        let state = self.state.lock().expect("run state");
        !state.worker_active && matches!(state.status, RunStatus::Finished | RunStatus::Failed)
    }
}

struct EventRecorder(Arc<RunEntry>);

impl StepCallback for EventRecorder {
    fn name(&self) -> &str {
        "event-recorder"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        self.0.push_event(&ctx.spec.name, ctx.completed.clone());
        Ok(())
    }
}

struct EntryStatus(Arc<RunEntry>);

impl StatusSink for EntryStatus {
    fn suspended(&self, agent: &str) {
        self.0.set_agent(Some(agent));
        self.0.set_status(RunStatus::SuspendedForGuidance);
    }

    fn resumed(&self, agent: &str) {
        self.0.set_agent(Some(agent));
        self.0.set_status(RunStatus::Running);
    }
}

/// Runs hosted by one control service, keyed by run id.
pub struct RunRegistry {
    runs_dir: PathBuf,
    defaults: RunSettings,
    runs: Mutex<BTreeMap<String, Arc<RunEntry>>>,
}

impl RunRegistry {
    /// Registers every saved session found at `runs_dir` or one level below it.
    pub fn open(runs_dir: impl Into<PathBuf>, defaults: RunSettings) -> std::io::Result<Self> {
        let runs_dir = runs_dir.into();
        fs::create_dir_all(&runs_dir)?;
        let registry = Self {
            runs_dir: runs_dir.clone(),
            defaults,
            runs: Mutex::new(BTreeMap::new()),
        };
        let mut candidates = vec![runs_dir.clone()];
        for entry in fs::read_dir(&runs_dir)? {
            let path = entry?.path();
            if path.is_dir() {
                candidates.push(path);
            }
        }
        for dir in candidates {
            registry.register_saved(&dir);
        }
        Ok(registry)
    }

    fn register_saved(&self, dir: &Path) {
        let Ok(state) = load_session(dir) else { return };
        let id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| state.session_id.clone());
        let steps: u64 = state.agents.values().map(|m| m.actions().count() as u64).sum();
        let entry = RunEntry::new(id.clone(), dir.to_path_buf(), self.defaults.clone(), state.manager.clone(), steps);
        {
            let mut s = entry.state.lock().expect("run state");
            let (status, kind) = match state.status {
                SessionStatus::Finished => (RunStatus::Finished, "finished"),
                SessionStatus::BudgetExhausted => (RunStatus::Finished, "budget_exhausted"),
                SessionStatus::Paused => (RunStatus::Failed, "paused"),
                SessionStatus::Running => (RunStatus::Failed, "interrupted"),
                SessionStatus::Failed => (RunStatus::Failed, "failed"),
            };
            s.status = status;
            s.current_agent = Some(state.manager.clone());
            s.outcome = Some(OutcomeView {
                kind: kind.into(),
                message: state.final_answer.clone().unwrap_or_default(),
            });
        }
        self.runs.lock().expect("runs").insert(id, Arc::new(entry));
    }

    pub fn runs_dir(&self) -> &Path {
        &self.runs_dir
    }

    pub fn list(&self) -> Vec<RunDescriptor> {
        self.runs.lock().expect("runs").values().map(|r| r.descriptor()).collect()
    }

    pub fn get(&self, id: &str) -> Option<Arc<RunEntry>> {
        self.runs.lock().expect("runs").get(id).cloned()
    }

    /// Creates a workspace under the runs directory and starts the manager on a worker thread.
    pub fn start(&self, task: &str, overrides: &RunSettings) -> Result<Arc<RunEntry>, String> {
        let settings = self.defaults.clone().overlay(overrides);
        let config = settings.build()?;
        self.launch(task, settings, config)
    }

    /// Like [`RunRegistry::start`] with a caller-built configuration, for
    /// embedding custom backends or tools. A later resume rebuilds the
    /// configuration from the registry defaults.
    pub fn start_with_config(&self, task: &str, config: SessionConfig) -> Result<Arc<RunEntry>, String> {
        self.launch(task, self.defaults.clone(), config)
    }

    fn launch(&self, task: &str, settings: RunSettings, config: SessionConfig) -> Result<Arc<RunEntry>, String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let root = self.runs_dir.join(&id);
        let manager = config.roster.manager().name.clone();
        let entry = Arc::new(RunEntry::new(id.clone(), root.clone(), settings, manager, 0));
        let config = wire(config, &entry);
        let session = Session::start(config, &root, task).map_err(|e| e.to_string())?;
        self.runs.lock().expect("runs").insert(id, entry.clone());
        spawn_worker(entry.clone(), session);
        Ok(entry)
    }

    /// Continues a stopped run. Errors with [`ResumeError::Running`] while its worker is active.
    pub fn resume(&self, id: &str) -> Result<Arc<RunEntry>, ResumeError> {
        let entry = self.get(id).ok_or(ResumeError::Unknown)?;
        {
            let mut state = entry.state.lock().expect("run state");
            if state.worker_active {
                return Err(ResumeError::Running);
            }
            state.worker_active = true;
        }
        let session = entry
            .settings
            .build()
            .map_err(SessionError::Config)
            .and_then(|config| Session::resume(wire(config, &entry), &entry.root));
        match session {
            Ok(session) => {
                spawn_worker(entry.clone(), session);
                Ok(entry)
            }
            Err(e) => {
                entry.state.lock().expect("run state").worker_active = false;
                Err(ResumeError::Session(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResumeError {
    Unknown,
    Running,
    Session(String),
}

fn wire(mut config: SessionConfig, entry: &Arc<RunEntry>) -> SessionConfig {
    let mut setup = InterventionSetup::new(entry.channel.clone(), entry.guidance.clone());
    setup.target = entry.settings.guidance_target.unwrap_or_default();
    setup.status = Some(Arc::new(EntryStatus(entry.clone())));
    config.intervention = Some(setup);
    config.observers.push(Arc::new(EventRecorder(entry.clone())));
    let hook_entry = entry.clone();
    config.on_agent_change = Some(Arc::new(move |agent: Option<&str>| hook_entry.set_agent(agent)));
    config
}

fn spawn_worker(entry: Arc<RunEntry>, mut session: Session) {
    {
        let mut state = entry.state.lock().expect("run state");
        state.worker_active = true;
        state.status = RunStatus::Running;
        state.outcome = None;
        state.current_agent = Some(entry.manager.clone());
    }
    std::thread::Builder::new()
        .name(format!("run-{}", entry.id))
        .spawn(move || {
            let view = match session.run() {
                Ok(outcome) => OutcomeView::from_outcome(&outcome),
                Err(e) => OutcomeView {
                    kind: "error".into(),
                    message: e.to_string(),
                },
            };
            tracing::info!(run = %entry.id, outcome = %view.kind, "run stopped");
            entry.finish(view);
        })
        .expect("spawn run worker");
}

/// CLI guidance: a pending `.guidance` file wins, otherwise the console is asked.
pub struct CliGuidance {
    file: PathBuf,
    console: Option<Arc<dyn GuidanceSource>>,
}

impl CliGuidance {
    pub fn new(workspace_root: &Path, console: Option<Arc<dyn GuidanceSource>>) -> Self {
        Self {
            file: workspace_root.join(GUIDANCE_FILE),
            console,
        }
    }
}

impl GuidanceSource for CliGuidance {
    fn obtain(&self, signal: &InterventionSignal) -> Option<Guidance> {
        if let Ok(text) = fs::read_to_string(&self.file) {
            let _ = fs::remove_file(&self.file);
            return Some(Guidance::parse_line(text.trim()));
        }
        self.console.as_ref().and_then(|c| c.obtain(signal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::{GuidanceKind, SignalSource};

    #[test]
    fn overlay_prefers_set_fields() {
        let base = RunSettings {
            max_total_calls: Some(12),
            max_steps: Some(5),
            ..Default::default()
        };
        let top = RunSettings {
            max_total_calls: Some(1),
            ..Default::default()
        };
        let merged = base.overlay(&top);
        assert_eq!(merged.max_total_calls, Some(1));
        assert_eq!(merged.max_steps, Some(5));
        assert_eq!(merged.guardrails().total_limit, 1);
    }

    #[test]
    fn settings_parse_from_toml_and_json() {
        let t: RunSettings = toml::from_str("max_total_calls = 4\nguidance_target = \"manager\"\n").unwrap();
        assert_eq!(t.max_total_calls, Some(4));
        assert_eq!(t.guidance_target, Some(GuidanceTarget::Manager));
        let j: RunSettings = serde_json::from_str(r#"{"compaction": false}"#).unwrap();
        assert_eq!(j.compaction, Some(false));
        assert!(serde_json::from_str::<RunSettings>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn live_mode_without_environment_fails_before_any_call() {
        if HttpConfig::from_env().is_ok() {
            return;
        }
        let err = RunSettings::default().build().err().unwrap();
        assert!(err.contains("environment"), "{err}");
    }

    #[test]
    fn cli_guidance_consumes_file_once() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(GUIDANCE_FILE), "correct: use a lower learning rate\n").unwrap();
        let source = CliGuidance::new(dir.path(), None);
        let signal = InterventionSignal {
            raised_at: chrono::Utc::now(),
            source: SignalSource::Cli,
        };
        let g = source.obtain(&signal).unwrap();
        assert_eq!(g.kind, GuidanceKind::CorrectiveFeedback);
        assert_eq!(g.text, "use a lower learning rate");
        assert!(source.obtain(&signal).is_none());
    }
}
