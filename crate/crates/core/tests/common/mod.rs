#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use labcrew::clock::TickingClock;
use labcrew::gateway::ScriptedBackend;
use labcrew::orchestration::{reference_roster, Session, SessionConfig, SessionOutcome};

pub const TRACE_TASK: &str = "Investigate whether hidden Markov models can detect phase transitions during neural network training, and deliver a paper.";

pub const TRACE_SEQUENCE: [&str; 11] = [
    "ideation_agent",
    "experimentation_agent",
    "resource_preparation_agent",
    "writeup_agent",
    "resource_preparation_agent",
    "writeup_agent",
    "reviewer_agent",
    "experimentation_agent",
    "resource_preparation_agent",
    "writeup_agent",
    "reviewer_agent",
];

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn trace_script() -> PathBuf {
    fixtures().join("trace/script.toml")
}

pub fn clock_at(offset_secs: i64) -> Arc<TickingClock> {
    Arc::new(TickingClock::new(
        Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap() + Duration::seconds(offset_secs),
        Duration::seconds(1),
    ))
}

pub fn trace_config(script: &Path, clock_offset: i64) -> SessionConfig {
    let roster = reference_roster(&fixtures()).unwrap();
    let backend = Arc::new(ScriptedBackend::from_file(script).unwrap());
    let mut config = SessionConfig::new(roster, backend);
    config.clock = clock_at(clock_offset);
    config
}

pub fn run_trace(dir: &Path) -> (Session, SessionOutcome) {
    let mut session = Session::start(trace_config(&trace_script(), 0), dir, TRACE_TASK).unwrap();
    let outcome = session.run().unwrap();
    (session, outcome)
}

/// A scripted model reply issuing one tool call.
pub fn act(tool: &str, args: serde_json::Value) -> String {
    format!(
        "Thought: next step.\n```action\n{}\n```",
        serde_json::json!({ "tool": tool, "args": args })
    )
}

pub fn delegate(target: &str, task: &str) -> String {
    act(target, serde_json::json!({ "task": task }))
}

/// Manager script that tries to overrun both delegation limits: four calls
/// to the ideation agent, then enough others to make a thirteenth accepted call.
pub fn hostile_script() -> Vec<labcrew::gateway::ScriptEntry> {
    use labcrew::gateway::ScriptEntry;
    let plan = [
        ("ideation_agent", 4),
        ("experimentation_agent", 3),
        ("resource_preparation_agent", 3),
        ("writeup_agent", 2),
        ("reviewer_agent", 2),
    ];
    let mut entries = Vec::new();
    let mut step = 0;
    for (agent, times) in plan {
        for i in 0..times {
            entries.push(ScriptEntry::at_step("manager_agent", step, delegate(agent, &format!("attempt {}", i + 1))));
            step += 1;
        }
        for i in 0..times.min(3) {
            entries.push(ScriptEntry::at_step(
                agent,
                i,
                act("final_answer", serde_json::json!({ "answer": format!("{agent} finished pass {}", i + 1) })),
            ));
        }
    }
    entries.push(ScriptEntry::sequential(
        "manager_agent",
        act("final_answer", serde_json::json!({ "answer": "should never be reached" })),
    ));
    entries
}

/// Passes requests through to `inner` and keeps a copy of each.
pub struct Recording<B> {
    pub inner: B,
    pub requests: std::sync::Mutex<Vec<labcrew::gateway::LmRequest>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            requests: Default::default(),
        }
    }

    pub fn requests(&self) -> Vec<labcrew::gateway::LmRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl<B: labcrew::gateway::Backend> labcrew::gateway::Backend for Recording<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(
        &self,
        request: &labcrew::gateway::LmRequest,
    ) -> Result<labcrew::gateway::LmResponse, labcrew::gateway::BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.complete(request)
    }
}

/// A lone agent with the workspace tools, for loop-level tests.
pub fn solo_spec(extra_tools: Vec<labcrew::runtime::tool::ToolSpec>) -> labcrew::roster::AgentSpec {
    let mut tools = labcrew::workspace::tools::workspace_tools().specs();
    tools.extend(extra_tools);
    labcrew::roster::AgentSpec {
        name: "solo_agent".into(),
        description: "Works alone on small tasks.".into(),
        instructions: "Complete the task step by step.".into(),
        tools,
        managed: vec![],
        model: Default::default(),
        workspace_policy: labcrew::workspace::WorkspacePolicy::member("solo_agent"),
    }
}

/// Replaces wall-clock latencies so two logs can be compared.
pub fn normalized_log(path: &Path) -> Vec<labcrew::gateway::CallLogEntry> {
    labcrew::gateway::read_log(path)
        .unwrap()
        .into_iter()
        .map(|mut e| {
            e.latency_ms = 0;
            e
        })
        .collect()
}
