//! Human steering between steps.
//!
//! An operator raises a signal on an [`InterventionChannel`] (directly, via
//! the HTTP API, or by touching the workspace `.interrupt` file). The
//! [`InterventionMonitor`] step callback notices it at the next boundary,
//! asks a [`GuidanceSource`] for text and appends it to the agent's memory as
//! an intervention-priority task.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::runtime::agent::{StepCallback, StepContext};
use crate::runtime::memory::{AgentMemory, TaskStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    Cli,
    Api,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSignal {
    pub raised_at: DateTime<Utc>,
    pub source: SignalSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    TaskRefinement,
    #[default]
    CorrectiveFeedback,
    NewDirection,
}

impl GuidanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GuidanceKind::TaskRefinement => "task_refinement",
            GuidanceKind::CorrectiveFeedback => "corrective_feedback",
            GuidanceKind::NewDirection => "new_direction",
        }
    }
}

impl fmt::Display for GuidanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "task_refinement" | "refine" => Ok(Self::TaskRefinement),
            "corrective_feedback" | "correct" => Ok(Self::CorrectiveFeedback),
            "new_direction" | "new" => Ok(Self::NewDirection),
            other => Err(format!(
                "unknown guidance kind '{other}'; expected task_refinement, corrective_feedback or new_direction"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub text: String,
    #[serde(default)]
    pub kind: GuidanceKind,
}

impl Guidance {
    pub fn new(text: impl Into<String>, kind: GuidanceKind) -> Self {
        Self {
            text: text.into(),
            kind,
        }
    }

    /// Parses console input; an optional `kind:` prefix selects the kind.
    pub fn parse_line(line: &str) -> Self {
        let line = line.trim();
        if let Some((head, rest)) = line.split_once(':') {
            if let Ok(kind) = head.parse() {
                return Self::new(rest.trim(), kind);
            }
        }
        Self::new(line, GuidanceKind::default())
    }

    pub fn to_task(&self) -> TaskStep {
        let mut args = BTreeMap::new();
        args.insert("guidance_kind".to_string(), self.kind.as_str().to_string());
        TaskStep::intervention(self.text.clone()).with_args(args)
    }
}

/// Single pending-signal slot; later raises coalesce into the first.
#[derive(Debug, Default)]
pub struct InterventionChannel {
    pending: AtomicBool,
    signal: Mutex<Option<InterventionSignal>>,
}

impl InterventionChannel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when a signal was already pending.
    pub fn raise(&self, source: SignalSource, at: DateTime<Utc>) -> bool {
        let mut slot = self.signal.lock().expect("signal lock");
        if slot.is_some() {
            return false;
        }
        *slot = Some(InterventionSignal { raised_at: at, source });
        self.pending.store(true, Ordering::Release);
        true
    }

    pub fn is_pending(&self) -> bool {
        self.pending.load(Ordering::Acquire)
    }

    pub fn take(&self) -> Option<InterventionSignal> {
        if !self.is_pending() {
            return None;
        }
        let mut slot = self.signal.lock().expect("signal lock");
        self.pending.store(false, Ordering::Release);
        slot.take()
    }
}

pub trait GuidanceSource: Send + Sync {
    /// Blocks until the operator answers. `None` means no guidance.
    fn obtain(&self, signal: &InterventionSignal) -> Option<Guidance>;
}

/// Service-mode source fed by the control API.
#[derive(Debug, Default)]
pub struct QueueGuidance {
    queue: Mutex<VecDeque<Guidance>>,
    ready: Condvar,
    timeout: Option<Duration>,
}

impl QueueGuidance {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gives up after `timeout`, yielding no guidance.
    pub fn with_timeout(timeout: Duration) -> Self {
        Self {
            timeout: Some(timeout),
            ..Self::default()
        }
    }

    pub fn submit(&self, guidance: Guidance) {
        self.queue.lock().expect("guidance lock").push_back(guidance);
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("guidance lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl GuidanceSource for QueueGuidance {
    fn obtain(&self, _signal: &InterventionSignal) -> Option<Guidance> {
        let mut queue = self.queue.lock().expect("guidance lock");
        loop {
            if let Some(g) = queue.pop_front() {
                return Some(g);
            }
            queue = match self.timeout {
                None => self.ready.wait(queue).expect("guidance lock"),
                Some(t) => {
                    let (q, result) = self.ready.wait_timeout(queue, t).expect("guidance lock");
                    if result.timed_out() && q.is_empty() {
                        return None;
                    }
                    q
                }
            };
        }
    }
}

/// Interactive source for CLI runs. A background thread owns stdin: while
/// nobody is waiting for guidance, pressing Enter raises a signal; while
/// suspended, the next line is the guidance.
pub struct ConsoleGuidance {
    awaiting: Arc<AtomicBool>,
    lines: Mutex<mpsc::Receiver<String>>,
}

impl ConsoleGuidance {
    pub fn spawn(channel: Arc<InterventionChannel>, clock: Arc<dyn crate::clock::Clock>) -> Arc<Self> {
        let (tx, rx) = mpsc::channel();
        let awaiting = Arc::new(AtomicBool::new(false));
        let flag = awaiting.clone();
        std::thread::Builder::new()
            .name("console-guidance".into())
            .spawn(move || {
                let stdin = std::io::stdin();
                for line in stdin.lock().lines() {
                    let Ok(line) = line else { break };
                    if flag.load(Ordering::Acquire) {
                        if tx.send(line).is_err() {
                            break;
                        }
                    } else if channel.raise(SignalSource::Cli, clock.now()) {
                        eprintln!("[intervention] signal raised; waiting for the next step boundary");
                    }
                }
            })
            .expect("spawn console reader");
        Arc::new(Self {
            awaiting,
            lines: Mutex::new(rx),
        })
    }
}

impl GuidanceSource for ConsoleGuidance {
    fn obtain(&self, _signal: &InterventionSignal) -> Option<Guidance> {
        self.awaiting.store(true, Ordering::Release);
        eprint!("[intervention] agent suspended. Enter guidance (optional prefix refine:/correct:/new:): ");
        let _ = std::io::stderr().flush();
        let line = self.lines.lock().expect("console lock").recv().ok();
        self.awaiting.store(false, Ordering::Release);
        line.map(|l| Guidance::parse_line(&l))
    }
}

/// Applies at most one pending signal to `memory`. Returns the guidance
/// appended, if any. Does nothing (and never blocks) when no signal is pending.
pub fn check_and_apply(
    memory: &mut AgentMemory,
    channel: &InterventionChannel,
    source: &dyn GuidanceSource,
) -> Option<Guidance> {
    let signal = channel.take()?;
    match source.obtain(&signal) {
        Some(g) if !g.text.trim().is_empty() => {
            memory.push_task(g.to_task());
            Some(g)
        }
        _ => {
            tracing::info!(agent = %memory.agent_name, "intervention signal cleared without guidance (no-op)");
            None
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceTarget {
    /// Whichever agent reaches a step boundary first.
    #[default]
    Current,
    Manager,
}

pub trait StatusSink: Send + Sync {
    fn suspended(&self, agent: &str);
    fn resumed(&self, agent: &str);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedGuidance {
    pub agent_name: String,
    pub after_step: usize,
    pub guidance: Guidance,
}

pub struct InterventionMonitor {
    channel: Arc<InterventionChannel>,
    source: Arc<dyn GuidanceSource>,
    target: GuidanceTarget,
    manager_name: Option<String>,
    flag_file: Option<PathBuf>,
    status: Option<Arc<dyn StatusSink>>,
    clock: Option<Arc<dyn crate::clock::Clock>>,
    applied: Mutex<Vec<AppliedGuidance>>,
}

impl InterventionMonitor {
    pub fn new(channel: Arc<InterventionChannel>, source: Arc<dyn GuidanceSource>) -> Self {
        Self {
            channel,
            source,
            target: GuidanceTarget::Current,
            manager_name: None,
            flag_file: None,
            status: None,
            clock: None,
            applied: Mutex::new(Vec::new()),
        }
    }

    pub fn target_manager(mut self, manager_name: &str) -> Self {
        self.target = GuidanceTarget::Manager;
        self.manager_name = Some(manager_name.to_string());
        self
    }

    /// Also treats the existence of `path` as a CLI signal (the file is removed).
    pub fn with_flag_file(mut self, path: impl AsRef<Path>, clock: Arc<dyn crate::clock::Clock>) -> Self {
        self.flag_file = Some(path.as_ref().to_path_buf());
        self.clock = Some(clock);
        self
    }

    pub fn with_status(mut self, sink: Arc<dyn StatusSink>) -> Self {
        self.status = Some(sink);
        self
    }

    pub fn channel(&self) -> &Arc<InterventionChannel> {
        &self.channel
    }

    pub fn applied(&self) -> Vec<AppliedGuidance> {
        self.applied.lock().expect("applied lock").clone()
    }

    fn poll_flag_file(&self) {
        if let (Some(path), Some(clock)) = (&self.flag_file, &self.clock) {
            if path.exists() {
                let _ = std::fs::remove_file(path);
                self.channel.raise(SignalSource::Cli, clock.now());
            }
        }
    }
}

impl StepCallback for InterventionMonitor {
    fn name(&self) -> &str {
        "intervention"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        self.poll_flag_file();
        if !self.channel.is_pending() {
            return Ok(());
        }
        if self.target == GuidanceTarget::Manager && self.manager_name.as_deref() != Some(ctx.spec.name.as_str()) {
            return Ok(());
        }
        let agent = ctx.spec.name.clone();
        if let Some(sink) = &self.status {
            sink.suspended(&agent);
        }
        let applied = check_and_apply(ctx.memory, &self.channel, self.source.as_ref());
        if let Some(sink) = &self.status {
            sink.resumed(&agent);
        }
        if let Some(guidance) = applied {
            self.applied.lock().expect("applied lock").push(AppliedGuidance {
                agent_name: agent,
                after_step: ctx.completed.index,
                guidance,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::memory::{MemoryStep, Priority};

    struct Fixed(Option<Guidance>);

    impl GuidanceSource for Fixed {
        fn obtain(&self, _: &InterventionSignal) -> Option<Guidance> {
            self.0.clone()
        }
    }

    #[test]
    fn raises_coalesce() {
        let ch = InterventionChannel::new();
        let t = Utc::now();
        assert!(ch.raise(SignalSource::Cli, t));
        assert!(!ch.raise(SignalSource::Api, t));
        assert_eq!(ch.take().unwrap().source, SignalSource::Cli);
        assert!(ch.take().is_none());
    }

    #[test]
    fn apply_appends_priority_task_and_clears() {
        let ch = InterventionChannel::new();
        let mut m = AgentMemory::with_task("a", TaskStep::new("t"));
        let src = Fixed(Some(Guidance::new("focus", GuidanceKind::NewDirection)));
        assert!(check_and_apply(&mut m, &ch, &src).is_none());
        assert_eq!(m.steps.len(), 1);
        ch.raise(SignalSource::Api, Utc::now());
        assert!(check_and_apply(&mut m, &ch, &src).is_some());
        match &m.steps[1] {
            MemoryStep::Task(t) => {
                assert_eq!(t.priority, Priority::Intervention);
                assert_eq!(t.additional_args["guidance_kind"], "new_direction");
            }
            other => panic!("{other:?}"),
        }
        assert!(!ch.is_pending());
    }

    #[test]
    fn empty_guidance_is_a_noop() {
        let ch = InterventionChannel::new();
        ch.raise(SignalSource::Cli, Utc::now());
        let mut m = AgentMemory::with_task("a", TaskStep::new("t"));
        let before = m.clone();
        assert!(check_and_apply(&mut m, &ch, &Fixed(Some(Guidance::new("  ", GuidanceKind::default())))).is_none());
        assert_eq!(m, before);
        assert!(!ch.is_pending());
    }

    #[test]
    fn queue_waits_for_submission() {
        let q = Arc::new(QueueGuidance::new());
        let producer = q.clone();
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            producer.submit(Guidance::new("go", GuidanceKind::TaskRefinement));
        });
        let sig = InterventionSignal {
            raised_at: Utc::now(),
            source: SignalSource::Api,
        };
        assert_eq!(q.obtain(&sig).unwrap().text, "go");
        h.join().unwrap();
        assert!(QueueGuidance::with_timeout(Duration::from_millis(5)).obtain(&sig).is_none());
    }

    #[test]
    fn console_lines_parse_kind_prefix() {
        assert_eq!(Guidance::parse_line("new: try HMMs").kind, GuidanceKind::NewDirection);
        assert_eq!(Guidance::parse_line("new: try HMMs").text, "try HMMs");
        let plain = Guidance::parse_line("note: keep going");
        assert_eq!(plain.kind, GuidanceKind::CorrectiveFeedback);
        assert_eq!(plain.text, "note: keep going");
    }
}
