//! Manager-led coordination of specialist agents.
//!
//! The manager sees each managed agent as a tool taking `task` and
//! `additional_args`. Calling it runs that agent to completion on its own
//! memory and returns the agent's final answer, annotated with the parsed
//! verdict, review score and budget counters. Limits are enforced here, not
//! left to the model.

mod delegation;
mod presets;
mod review;
mod session;
mod stubs;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use delegation::{AgentChangeHook, DelegationTool, GuardrailMonitor, Hub};
pub use presets::{
    load_reference_presets, reference_roster, AgentConfig, Binding, Roster, RosterError, RosterFile,
    MANAGER, REFERENCE_AGENTS,
};
pub use review::{
    announced_artifacts, enforce_termination_policy, parse_review_score, DelegationReport, ReportMarkers,
    ReviewScore, TerminationDecision, Verdict,
};
pub use session::{InterventionSetup, Session, SessionConfig, SessionError, SessionOutcome};
pub use stubs::{stub_tool_registry, ExternalCommandTool, StubFixtures, STUB_TOOL_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guardrails {
    pub per_agent_limit: u32,
    pub total_limit: u32,
    pub accept_threshold: u8,
    /// Reset per-agent iteration counters after a review at or above the threshold.
    #[serde(default)]
    pub reset_after_accept: bool,
}

impl Default for Guardrails {
    fn default() -> Self {
        Self {
            per_agent_limit: 3,
            total_limit: 12,
            accept_threshold: 6,
            reset_after_accept: false,
        }
    }
}

impl Guardrails {
    pub fn validate(&self) -> Result<(), String> {
        if self.per_agent_limit == 0 || self.total_limit == 0 {
            return Err("guardrail limits must be positive".into());
        }
        if !(1..=10).contains(&self.accept_threshold) {
            return Err(format!("accept_threshold {} is outside 1..=10", self.accept_threshold));
        }
        Ok(())
    }
}

/// One accepted delegation, as logged by the manager.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationRecord {
    /// 1-based position among all accepted delegations.
    pub seq: u32,
    pub target: String,
    pub task: String,
    #[serde(default)]
    pub additional_args: BTreeMap<String, String>,
    pub verdict: Verdict,
    pub score: Option<ReviewScore>,
    pub artifacts: Vec<String>,
    pub report: String,
}
