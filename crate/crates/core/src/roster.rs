//! Static agent definitions.

use serde::{Deserialize, Serialize};

use crate::runtime::tool::{final_answer_spec, ToolSpec};
use crate::workspace::WorkspacePolicy;

pub const DEFAULT_CONTEXT_LIMIT: u64 = 128_000;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub context_limit_tokens: u64,
    /// Provider key: "scripted" or "http".
    #[serde(default = "default_provider")]
    pub provider: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
}

fn default_provider() -> String {
    "scripted".into()
}

fn default_max_output() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            context_limit_tokens: DEFAULT_CONTEXT_LIMIT,
            provider: default_provider(),
            model: None,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub description: String,
    pub instructions: String,
    /// Schemas shown in the tool listing. `final_answer` is implicit.
    pub tools: Vec<ToolSpec>,
    #[serde(default)]
    pub managed: Vec<AgentSpec>,
    #[serde(default)]
    pub model: ModelConfig,
    pub workspace_policy: WorkspacePolicy,
}

impl AgentSpec {
    /// Tool schemas followed by the reserved `final_answer`.
    pub fn listed_tools(&self) -> Vec<ToolSpec> {
        let mut tools = self.tools.clone();
        tools.push(final_answer_spec());
        tools
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn is_supervisor(&self) -> bool {
        !self.managed.is_empty()
    }
}
