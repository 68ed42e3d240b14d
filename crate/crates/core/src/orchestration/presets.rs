//! Reference agents and roster files.
//!
//! A roster file selects presets, overrides their text and rebinds tools:
//!
//! ```toml
//! [[agents]]
//! preset = "manager"
//!
//! [[agents]]
//! preset = "experimentation"
//! instructions_file = "prompts/my_experimenter.md"
//!
//! [bindings.run_experiment]
//! command = ["python3", "tools/run_domain_experiment.py"]
//! ```
//!
//! Without an `[[agents]]` list the six reference agents are used.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use super::stubs::{stub_tool_registry, stub_tool_specs, ExternalCommandTool};
use crate::roster::{AgentSpec, ModelConfig};
use crate::runtime::tool::{is_identifier, ParamSpec, ToolError, ToolRegistry, ToolSpec};
use crate::workspace::tools::{workspace_tools, WORKSPACE_TOOL_NAMES};
use crate::workspace::WorkspacePolicy;

pub const MANAGER: &str = "manager_agent";

pub const REFERENCE_AGENTS: [&str; 6] = [
    MANAGER,
    "ideation_agent",
    "experimentation_agent",
    "resource_preparation_agent",
    "writeup_agent",
    "reviewer_agent",
];

struct Preset {
    key: &'static str,
    name: &'static str,
    description: &'static str,
    instructions: &'static str,
    extra_tools: &'static [&'static str],
}

const PRESETS: [Preset; 6] = [
    Preset {
        key: "manager",
        name: MANAGER,
        description: "Coordinates the research team, owns the standard workspace files and decides when the project is done.",
        instructions: include_str!("../../assets/prompts/instructions/manager_agent.md"),
        extra_tools: &[],
    },
    Preset {
        key: "ideation",
        name: "ideation_agent",
        description: "Generates and refines research ideas from literature search; writes the refined idea into its own directory.",
        instructions: include_str!("../../assets/prompts/instructions/ideation_agent.md"),
        extra_tools: &[
            "web_search",
            "fetch_arxiv_papers",
            "generate_idea",
            "refine_idea",
            "vlm_document_analysis",
        ],
    },
    Preset {
        key: "experimentation",
        name: "experimentation_agent",
        description: "Standardizes the working idea and runs the staged experiment pipeline; reports where the results are.",
        instructions: include_str!("../../assets/prompts/instructions/experimentation_agent.md"),
        extra_tools: &["idea_standardization", "run_experiment"],
    },
    Preset {
        key: "resource_preparation",
        name: "resource_preparation_agent",
        description: "Prepares paper_workspace/: links experiment data, copies templates, writes structure_analysis.txt and references.bib.",
        instructions: include_str!("../../assets/prompts/instructions/resource_preparation_agent.md"),
        extra_tools: &[
            "experiment_linker",
            "citation_search",
            "copy_latex_templates",
            "vlm_document_analysis",
        ],
    },
    Preset {
        key: "writeup",
        name: "writeup_agent",
        description: "Writes, compiles and verifies the paper from the resources in paper_workspace/.",
        instructions: include_str!("../../assets/prompts/instructions/writeup_agent.md"),
        extra_tools: &[
            "latex_generator",
            "latex_reflection",
            "latex_syntax_checker",
            "latex_compiler",
            "latex_content_verification",
            "vlm_document_analysis",
            "citation_search",
        ],
    },
    Preset {
        key: "reviewer",
        name: "reviewer_agent",
        description: "Reviews the compiled paper against conference criteria and reports an overall Score N/10.",
        instructions: include_str!("../../assets/prompts/instructions/reviewer_agent.md"),
        extra_tools: &["vlm_document_analysis"],
    },
];

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid roster file: {0}")]
    Parse(String),
    #[error("invalid roster: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tools(#[from] ToolError),
}

/// One `[[agents]]` entry. Fields left out inherit from the preset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub description: Option<String>,
    pub instructions: Option<String>,
    /// Read relative to the roster file.
    pub instructions_file: Option<PathBuf>,
    /// Replaces the preset's tool list.
    pub tools: Option<Vec<String>>,
    /// Members this agent supervises.
    pub managed: Option<Vec<String>>,
    pub model: Option<ModelConfig>,
}

/// Routes a tool name to an external command instead of the built-in stub.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binding {
    pub command: Vec<String>,
    pub description: Option<String>,
    /// Required for names without a built-in schema.
    pub params: Option<Vec<ParamSpec>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterFile {
    #[serde(default)]
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub bindings: BTreeMap<String, Binding>,
    /// Directory `instructions_file` paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RosterFile {
    pub fn parse(text: &str) -> Result<Self, RosterError> {
        toml::from_str(text).map_err(|e| RosterError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RosterError> {
        let text = fs::read_to_string(path).map_err(|source| RosterError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut file = Self::parse(&text)?;
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }
}

/// Agent specs plus the tool implementations they are bound to.
#[derive(Clone)]
pub struct Roster {
    agents: Vec<AgentSpec>,
    supervisor: usize,
    tools: ToolRegistry,
}

impl std::fmt::Debug for Roster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Roster")
            .field("agents", &self.names())
            .field("tools", &self.tools)
            .finish()
    }
}

impl Roster {
    /// Checks the star shape and tool bindings. `agents[..]` members without
    /// managed lists are workers; exactly one agent supervises all others.
    pub fn new(agents: Vec<AgentSpec>, tools: ToolRegistry) -> Result<Self, RosterError> {
        let mut names = BTreeSet::new();
        for agent in &agents {
            if !is_identifier(&agent.name) {
                return Err(RosterError::Invalid(format!("agent name '{}' is not an identifier", agent.name)));
            }
            if !names.insert(agent.name.as_str()) {
                return Err(RosterError::Invalid(format!("duplicate agent '{}'", agent.name)));
            }
            for tool in agent.tool_names() {
                if !tools.contains(tool) {
                    return Err(RosterError::Invalid(format!(
                        "agent '{}' lists tool '{tool}' but no implementation is bound",
                        agent.name
                    )));
                }
            }
        }
        let supervisors: Vec<usize> = (0..agents.len()).filter(|i| agents[*i].is_supervisor()).collect();
        let [supervisor] = supervisors[..] else {
            return Err(RosterError::Invalid(format!(
                "a roster needs exactly one supervising agent, found {}",
                supervisors.len()
            )));
        };
        for member in &agents[supervisor].managed {
            if member.is_supervisor() {
                return Err(RosterError::Invalid(format!("managed agent '{}' may not manage others", member.name)));
            }
            if !names.contains(member.name.as_str()) {
                return Err(RosterError::Invalid(format!("managed agent '{}' is not in the roster", member.name)));
            }
            if tools.contains(&member.name) {
                return Err(RosterError::Invalid(format!("agent '{}' collides with a tool name", member.name)));
            }
        }
        Ok(Self {
            agents,
            supervisor,
            tools,
        })
    }

    /// Builds a roster from a parsed file, binding stub tools from `fixtures_dir`.
    pub fn from_file(file: &RosterFile, fixtures_dir: &Path) -> Result<Self, RosterError> {
        let mut tools = workspace_tools();
        tools.extend(&stub_tool_registry(fixtures_dir)?);
        for (name, binding) in &file.bindings {
            let spec = match (tools.get(name), &binding.params) {
                (_, Some(params)) => ToolSpec::new(name, binding.description.as_deref().unwrap_or(""), params.clone()),
                (Some(existing), None) => {
                    let mut spec = existing.spec().clone();
                    if let Some(d) = &binding.description {
                        spec.description = d.clone();
                    }
                    spec
                }
                (None, None) => {
                    return Err(RosterError::Invalid(format!(
                        "binding '{name}' has no built-in schema; declare its params"
                    )))
                }
            };
            spec.validate().map_err(RosterError::Invalid)?;
            if spec.description.trim().is_empty() {
                return Err(RosterError::Invalid(format!("binding '{name}' needs a description")));
            }
            let tool = ExternalCommandTool::new(spec, binding.command.clone()).map_err(RosterError::Invalid)?;
            tools.register(Arc::new(tool));
        }

        let configs: Vec<AgentConfig> = if file.agents.is_empty() {
            PRESETS
                .iter()
                .map(|p| AgentConfig {
                    preset: Some(p.key.into()),
                    ..AgentConfig::default()
                })
                .collect()
        } else {
            file.agents.clone()
        };
        let mut flat = Vec::new();
        let mut managed_lists = Vec::new();
        for config in &configs {
            let (spec, managed) = resolve(config, &file.base_dir, &tools)?;
            flat.push(spec);
            managed_lists.push(managed);
        }
        let by_name: BTreeMap<String, AgentSpec> = flat.iter().map(|a| (a.name.clone(), a.clone())).collect();
        for (spec, managed) in flat.iter_mut().zip(&managed_lists) {
            if managed.is_empty() {
                continue;
            }
            spec.workspace_policy = WorkspacePolicy::manager(&spec.name);
            spec.managed = managed
                .iter()
                .map(|n| {
                    by_name
                        .get(n)
                        .cloned()
                        .ok_or_else(|| RosterError::Invalid(format!("managed agent '{n}' is not in the roster")))
                })
                .collect::<Result<_, _>>()?;
        }
        Self::new(flat, tools)
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn names(&self) -> Vec<&str> {
        self.agents.iter().map(|a| a.name.as_str()).collect()
    }

    pub fn manager(&self) -> &AgentSpec {
        &self.agents[self.supervisor]
    }

    pub fn members(&self) -> &[AgentSpec] {
        &self.manager().managed
    }

    pub fn get(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn tools(&self) -> &ToolRegistry {
        &self.tools
    }

    /// Implementations of exactly the tools `agent` lists.
    pub fn registry_for(&self, agent: &AgentSpec) -> ToolRegistry {
        self.tools
            .select(agent.tool_names())
            .expect("roster construction checked every binding")
    }
}

fn resolve(config: &AgentConfig, base_dir: &Path, tools: &ToolRegistry) -> Result<(AgentSpec, Vec<String>), RosterError> {
    let preset = match &config.preset {
        Some(key) => Some(PRESETS.iter().find(|p| p.key == key).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.key).collect();
            RosterError::Invalid(format!("unknown preset '{key}'; known presets: {}", known.join(", ")))
        })?),
        None => None,
    };
    let name = config
        .name
        .clone()
        .or(preset.map(|p| p.name.to_string()))
        .ok_or_else(|| RosterError::Invalid("an agent without a preset needs a name".into()))?;
    let instructions = match (&config.instructions, &config.instructions_file) {
        (Some(_), Some(_)) => {
            return Err(RosterError::Invalid(format!(
                "agent '{name}' sets both instructions and instructions_file"
            )))
        }
        (Some(text), None) => text.clone(),
        (None, Some(file)) => {
            let path = base_dir.join(file);
            fs::read_to_string(&path).map_err(|source| RosterError::Io { path, source })?
        }
        (None, None) => preset
            .map(|p| p.instructions.to_string())
            .ok_or_else(|| RosterError::Invalid(format!("agent '{name}' needs instructions")))?,
    };
    let description = config
        .description
        .clone()
        .or(preset.map(|p| p.description.to_string()))
        .ok_or_else(|| RosterError::Invalid(format!("agent '{name}' needs a description")))?;
    let tool_names: Vec<String> = match &config.tools {
        Some(list) => list.clone(),
        None => WORKSPACE_TOOL_NAMES
            .iter()
            .chain(preset.map(|p| p.extra_tools).unwrap_or(&[]))
            .map(|s| s.to_string())
            .collect(),
    };
    let mut specs = Vec::with_capacity(tool_names.len());
    for tool in &tool_names {
        let bound = tools.get(tool).ok_or_else(|| {
            RosterError::Invalid(format!("agent '{name}' lists tool '{tool}' but no implementation is bound"))
        })?;
        specs.push(bound.spec().clone());
    }
    let managed = match (&config.managed, preset) {
        (Some(list), _) => list.clone(),
        (None, Some(p)) if p.key == "manager" => REFERENCE_AGENTS[1..].iter().map(|s| s.to_string()).collect(),
        _ => Vec::new(),
    };
    let spec = AgentSpec {
        workspace_policy: WorkspacePolicy::member(&name),
        name,
        description,
        instructions,
        tools: specs,
        managed: Vec::new(),
        model: config.model.clone().unwrap_or_default(),
    };
    Ok((spec, managed))
}

/// The six reference agents, manager first. Research tools use the stub schemas.
pub fn load_reference_presets() -> Vec<AgentSpec> {
    let mut schemas = workspace_tools().specs();
    schemas.extend(stub_tool_specs());
    let spec_of = |n: &str| schemas.iter().find(|s| s.name == n).cloned().expect("preset tool has a schema");
    let mut members: Vec<AgentSpec> = PRESETS[1..]
        .iter()
        .map(|p| AgentSpec {
            name: p.name.into(),
            description: p.description.into(),
            instructions: p.instructions.into(),
            tools: WORKSPACE_TOOL_NAMES.iter().chain(p.extra_tools).map(|n| spec_of(n)).collect(),
            managed: Vec::new(),
            model: ModelConfig::default(),
            workspace_policy: WorkspacePolicy::member(p.name),
        })
        .collect();
    let m = &PRESETS[0];
    let manager = AgentSpec {
        name: m.name.into(),
        description: m.description.into(),
        instructions: m.instructions.into(),
        tools: WORKSPACE_TOOL_NAMES.iter().map(|n| spec_of(n)).collect(),
        managed: members.clone(),
        model: ModelConfig::default(),
        workspace_policy: WorkspacePolicy::manager(m.name),
    };
    members.insert(0, manager);
    members
}

/// Reference agents bound to the workspace tools and the stub registry.
pub fn reference_roster(fixtures_dir: &Path) -> Result<Roster, RosterError> {
    Roster::from_file(&RosterFile::default(), fixtures_dir)
}
