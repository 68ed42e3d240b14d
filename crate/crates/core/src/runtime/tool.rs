//! Declarative tool schemas and the dispatch table agents act through.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::clock::Clock;
use crate::workspace::{WorkspaceError, WorkspaceHandle, WorkspacePolicy};

/// Name of the built-in terminating tool.
pub const FINAL_ANSWER: &str = "final_answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Boolean,
    /// String-keyed map; used by delegation for `additional_args`.
    Object,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Boolean => "boolean",
            ParamType::Object => "object",
        }
    }

    fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Object => value.is_object(),
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub description: String,
    #[serde(default)]
    pub nullable: bool,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamType, description: &str) -> Self {
        Self {
            name: name.to_string(),
            kind,
            description: description.to_string(),
            nullable: false,
        }
    }

    pub fn nullable(name: &str, kind: ParamType, description: &str) -> Self {
        Self {
            nullable: true,
            ..Self::required(name, kind, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub returns: ParamType,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, params: Vec<ParamSpec>) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            params,
            returns: ParamType::String,
        }
    }

    /// Checks identifier syntax and parameter-name uniqueness.
    pub fn validate(&self) -> Result<(), String> {
        if !is_identifier(&self.name) {
            return Err(format!("tool name {:?} is not a valid identifier", self.name));
        }
        let mut seen = std::collections::BTreeSet::new();
        for param in &self.params {
            if !is_identifier(&param.name) {
                return Err(format!(
                    "parameter {:?} of tool {} is not a valid identifier",
                    param.name, self.name
                ));
            }
            if !seen.insert(param.name.as_str()) {
                return Err(format!(
                    "parameter {:?} appears twice in tool {}",
                    param.name, self.name
                ));
            }
        }
        Ok(())
    }

    /// Type and nullability check of a call's arguments against this schema.
    pub fn check_args(&self, args: &Map<String, Value>) -> Result<(), String> {
        for key in args.keys() {
            if !self.params.iter().any(|p| &p.name == key) {
                let expected: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
                return Err(format!(
                    "unexpected argument '{key}'; expected arguments: {}",
                    expected.join(", ")
                ));
            }
        }
        for param in &self.params {
            match args.get(&param.name) {
                None | Some(Value::Null) => {
                    if !param.nullable {
                        return Err(format!("missing required argument '{}'", param.name));
                    }
                }
                Some(value) => {
                    if !param.kind.accepts(value) {
                        return Err(format!(
                            "argument '{}' must be of type {}, got {}",
                            param.name,
                            param.kind,
                            json_kind(value)
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn json_kind(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl ToolCall {
    pub fn new(tool: &str, args: Value) -> Self {
        let args = match args {
            Value::Object(map) => map,
            Value::Null => Map::new(),
            other => {
                let mut map = Map::new();
                map.insert("value".into(), other);
                map
            }
        };
        Self {
            tool: tool.to_string(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub output: String,
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error("{0}")]
    Failed(String),
    #[error("fixture missing: {0}")]
    FixtureMissing(String),
    /// Unrecoverable failure that must abort the whole run (e.g. a sub-agent's provider died).
    #[error("fatal: {0}")]
    Fatal(String),
}

/// Everything a tool implementation may touch while executing.
pub struct ToolContext<'a> {
    pub agent_name: &'a str,
    pub workspace: &'a WorkspaceHandle,
    pub policy: &'a WorkspacePolicy,
    pub clock: &'a dyn Clock,
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;
    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError>;
}

/// Typed accessors over a validated argument map.
pub struct Args<'a>(pub &'a Map<String, Value>);

impl<'a> Args<'a> {
    pub fn str(&self, name: &str) -> Result<&'a str, ToolError> {
        self.opt_str(name)
            .ok_or_else(|| ToolError::Failed(format!("missing required argument '{name}'")))
    }

    pub fn opt_str(&self, name: &str) -> Option<&'a str> {
        self.0.get(name).and_then(Value::as_str)
    }

    pub fn int(&self, name: &str) -> Result<i64, ToolError> {
        self.opt_int(name)
            .ok_or_else(|| ToolError::Failed(format!("missing required argument '{name}'")))
    }

    pub fn opt_int(&self, name: &str) -> Option<i64> {
        self.0.get(name).and_then(Value::as_i64)
    }

    pub fn opt_bool(&self, name: &str) -> Option<bool> {
        self.0.get(name).and_then(Value::as_bool)
    }

    pub fn opt_object(&self, name: &str) -> Option<&'a Map<String, Value>> {
        self.0.get(name).and_then(Value::as_object)
    }
}

/// Name-indexed dispatch table. Iteration order is insertion order, which is
/// also the order tools are listed in the rendered prompt.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    order: Vec<String>,
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tool binding.
    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        let name = tool.spec().name.clone();
        if self.tools.insert(name.clone(), tool).is_none() {
            self.order.push(name);
        }
    }

    pub fn with(mut self, tool: Arc<dyn Tool>) -> Self {
        self.register(tool);
        self
    }

    pub fn extend(&mut self, other: &ToolRegistry) {
        for tool in other.iter() {
            self.register(tool.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.order.iter().map(String::as_str).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn Tool>> {
        self.order.iter().filter_map(|n| self.tools.get(n))
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.iter().map(|t| t.spec().clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sub-registry holding exactly the named tools, in the given order.
    pub fn select<'n>(
        &self,
        names: impl IntoIterator<Item = &'n str>,
    ) -> Result<ToolRegistry, String> {
        let mut out = ToolRegistry::new();
        for name in names {
            let tool = self
                .get(name)
                .ok_or_else(|| format!("no implementation bound for tool '{name}'"))?;
            out.register(tool.clone());
        }
        Ok(out)
    }
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.order.iter()).finish()
    }
}

/// Schema of the reserved terminating tool injected into every agent.
pub fn final_answer_spec() -> ToolSpec {
    ToolSpec::new(
        FINAL_ANSWER,
        "Provides a final answer to the given problem. Call it once the task is complete; the answer is reported back to whoever assigned the task.",
        vec![ParamSpec::required(
            "answer",
            ParamType::String,
            "The final answer to the problem",
        )],
    )
}
