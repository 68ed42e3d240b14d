//! System prompt composition.
//!
//! A prompt is the preamble followed by four sections, each wrapped in
//! marker lines (`<LIST_OF_TOOLS>` ... `</LIST_OF_TOOLS>` and so on) so the
//! spans can be cut back out with [`section_span`]. The managed-agents
//! section is emitted only for supervisors.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::roster::AgentSpec;
use crate::runtime::tool::{ParamSpec, ToolSpec};

pub const PREAMBLE: &str = include_str!("../assets/prompts/preamble.md");
pub const RULES: &str = include_str!("../assets/prompts/rules.md");
pub const WORKSPACE_GUIDELINES: &str = include_str!("../assets/prompts/workspace_guidelines.md");
pub const MANAGED_AGENTS_INTRO: &str = include_str!("../assets/prompts/managed_agents.md");

pub const INSTRUCTIONS_BEGIN: &str = "--- SYSTEM INSTRUCTIONS ---";
pub const INSTRUCTIONS_END: &str = "--- END SYSTEM INSTRUCTIONS ---";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Section {
    ToolListing,
    WorkspaceGuidelines,
    AgentInstructions,
    ManagedAgents,
}

impl Section {
    pub const ORDER: [Section; 4] = [
        Section::ToolListing,
        Section::WorkspaceGuidelines,
        Section::AgentInstructions,
        Section::ManagedAgents,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Section::ToolListing => "LIST_OF_TOOLS",
            Section::WorkspaceGuidelines => "WORKSPACE_GUIDELINES",
            Section::AgentInstructions => "AGENT_INSTRUCTIONS",
            Section::ManagedAgents => "MANAGED_AGENTS",
        }
    }

    pub fn begin_marker(self) -> String {
        format!("<{}>", self.tag())
    }

    pub fn end_marker(self) -> String {
        format!("</{}>", self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("configuration error for agent '{agent}': {message}")]
    Config { agent: String, message: String },
    #[error("configuration error: {0}")]
    Tools(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub preamble: String,
    pub rules: Vec<String>,
    section_order: [Section; 4],
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            preamble: PREAMBLE.trim_end().to_string(),
            rules: RULES
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            section_order: Section::ORDER,
        }
    }
}

impl PromptTemplate {
    pub fn section_order(&self) -> &[Section; 4] {
        &self.section_order
    }

    pub fn render(&self, spec: &AgentSpec) -> Result<String, PromptError> {
        if spec.instructions.trim().is_empty() {
            return Err(PromptError::Config {
                agent: spec.name.clone(),
                message: "instructions are empty".into(),
            });
        }
        if spec.tools.is_empty() {
            return Err(PromptError::Config {
                agent: spec.name.clone(),
                message: "agent has no tools".into(),
            });
        }
        let listing = render_tool_listing(&spec.listed_tools()).map_err(|e| PromptError::Config {
            agent: spec.name.clone(),
            message: e.to_string(),
        })?;

        let mut out = String::new();
        out.push_str(&self.preamble);
        out.push_str("\n\n");
        for section in self.section_order {
            let body = match section {
                Section::ToolListing => listing.clone(),
                Section::WorkspaceGuidelines => WORKSPACE_GUIDELINES.trim_end().to_string(),
                Section::AgentInstructions => spec.instructions.trim_end().to_string(),
                Section::ManagedAgents => {
                    if spec.managed.is_empty() {
                        continue;
                    }
                    render_managed_agents(&spec.managed)?
                }
            };
            match section {
                Section::WorkspaceGuidelines => out.push_str("## Workspace Management\n"),
                Section::AgentInstructions => out.push_str("## Agent Instructions\n"),
                _ => {}
            }
            out.push_str(&wrap(section, &body));
            out.push_str("\n\n");
            if section == Section::ToolListing {
                out.push_str("Rules:\n");
                for (i, rule) in self.rules.iter().enumerate() {
                    out.push_str(&format!("{}. {rule}\n", i + 1));
                }
                out.push('\n');
            }
        }
        out.push_str("Begin.\n");
        Ok(out)
    }
}

fn wrap(section: Section, body: &str) -> String {
    format!("{}\n{body}\n{}", section.begin_marker(), section.end_marker())
}

/// Renders `spec` with the default template.
pub fn render_system_prompt(spec: &AgentSpec) -> Result<String, PromptError> {
    PromptTemplate::default().render(spec)
}

/// One entry per tool, in the given order.
pub fn render_tool_listing(tools: &[ToolSpec]) -> Result<String, PromptError> {
    if tools.is_empty() {
        return Err(PromptError::Tools("tool listing requires at least one tool".into()));
    }
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(tools.len());
    for tool in tools {
        if !seen.insert(tool.name.as_str()) {
            return Err(PromptError::Tools(format!("duplicate tool name '{}'", tool.name)));
        }
        let inputs: Vec<String> = tool
            .params
            .iter()
            .map(|p| format!("{}: {}", py_str(&p.name), param_repr(p)))
            .collect();
        entries.push(format!(
            "- {}: {}\n    Takes inputs: {{{}}}\n    Returns an output of type: {}",
            tool.name,
            tool.description,
            inputs.join(", "),
            tool.returns
        ));
    }
    Ok(entries.join("\n\n"))
}

fn param_repr(p: &ParamSpec) -> String {
    let mut out = format!(
        "{{'type': {}, 'description': {}",
        py_str(p.kind.as_str()),
        py_str(&p.description)
    );
    if p.nullable {
        out.push_str(", 'nullable': True");
    }
    out.push('}');
    out
}

/// Python `repr` of a string.
fn py_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

pub fn render_managed_agents(managed: &[AgentSpec]) -> Result<String, PromptError> {
    if managed.is_empty() {
        return Err(PromptError::Tools("managed-agents section requires at least one agent".into()));
    }
    let mut out = MANAGED_AGENTS_INTRO.trim_end().to_string();
    for agent in managed {
        if agent.description.trim().is_empty() {
            return Err(PromptError::Config {
                agent: agent.name.clone(),
                message: "managed agent needs a description".into(),
            });
        }
        if agent.instructions.trim().is_empty() {
            return Err(PromptError::Config {
                agent: agent.name.clone(),
                message: "instructions are empty".into(),
            });
        }
        out.push_str(&format!(
            "\n\n- {}: {}\n\n{INSTRUCTIONS_BEGIN}\n{}\n{INSTRUCTIONS_END}",
            agent.name,
            agent.description.trim(),
            agent.instructions.trim_end()
        ));
    }
    Ok(out)
}

/// Text between a section's marker lines, if the section is present.
pub fn section_span(prompt: &str, section: Section) -> Option<&str> {
    let begin = format!("{}\n", section.begin_marker());
    let end = format!("\n{}", section.end_marker());
    let start = prompt.find(&begin)? + begin.len();
    let len = prompt[start..].find(&end)?;
    Some(&prompt[start..start + len])
}

/// Byte offset of a section's opening marker.
pub fn section_offset(prompt: &str, section: Section) -> Option<usize> {
    prompt.find(&format!("{}\n", section.begin_marker()))
}
