//! One agent, a scripted model and a custom tool: watch the reason / act /
//! observe loop step by step.
//!
//! ```bash
//! cargo run -p labcrew --example react_loop
//! ```

use std::sync::Arc;

use labcrew::clock::TickingClock;
use labcrew::gateway::{LmGateway, ScriptEntry, ScriptedBackend};
use labcrew::roster::AgentSpec;
use labcrew::runtime::agent::{run_agent, RuntimeContext, StepCallback, StepContext};
use labcrew::runtime::memory::TaskStep;
use labcrew::runtime::tool::{Args, ParamSpec, ParamType, Tool, ToolContext, ToolError, ToolSpec};
use labcrew::workspace::tools::workspace_tools;
use labcrew::workspace::{WorkspaceHandle, WorkspacePolicy};
use serde_json::{json, Map, Value};

struct WordCount {
    spec: ToolSpec,
}

impl Tool for WordCount {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let text = ctx.workspace.see_file(ctx.policy, Args(args).str("filename")?)?;
        Ok(format!("{} words", text.split_whitespace().count()))
    }
}

struct Printer;

impl StepCallback for Printer {
    fn name(&self) -> &str {
        "printer"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if let Some(step) = ctx.memory.last_action() {
            let tools: Vec<&str> = step.tool_calls.iter().map(|c| c.tool.as_str()).collect();
            println!("step {} {:?}\n  -> {}", step.index, tools, step.observation.lines().next().unwrap_or(""));
        }
        Ok(())
    }
}

fn act(tool: &str, args: Value) -> String {
    format!("Thought: next.\n```action\n{}\n```", json!({ "tool": tool, "args": args }))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let word_count = Arc::new(WordCount {
        spec: ToolSpec::new(
            "word_count",
            "Counts whitespace-separated words in a workspace file.",
            vec![ParamSpec::required("filename", ParamType::String, "File to count.")],
        ),
    });
    let tools = workspace_tools().with(word_count.clone());

    let script = vec![
        ScriptEntry::at_step("counter_agent", 0, act("create_file_with_content", json!({ "filename": "a.txt", "content": "one two three\n" }))),
        ScriptEntry::at_step("counter_agent", 1, act("word_count", json!({ "filename": "missing.txt" }))),
        ScriptEntry::at_step("counter_agent", 2, act("word_count", json!({ "filename": "a.txt" }))),
        ScriptEntry::at_step("counter_agent", 3, act("final_answer", json!({ "answer": "a.txt has 3 words" }))),
    ];

    let dir = tempfile::tempdir()?;
    let ws = WorkspaceHandle::create(dir.path(), &["counter_agent"])?;
    let gateway = Arc::new(LmGateway::new(Arc::new(ScriptedBackend::new(script)?)));
    let ctx = RuntimeContext::new(ws, gateway, Arc::new(TickingClock::fixed())).with_callback(Arc::new(Printer));

    let spec = AgentSpec {
        name: "counter_agent".into(),
        description: "Counts words.".into(),
        instructions: "Answer with the word count of the file you create.".into(),
        tools: tools.specs(),
        managed: vec![],
        model: Default::default(),
        workspace_policy: WorkspacePolicy::member("counter_agent"),
    };
    let (outcome, memory) = run_agent(&spec, TaskStep::new("Count the words of a new file."), &ctx, &tools)?;
    println!("\noutcome: {outcome:?}");
    println!("errors recorded: {}", memory.actions().filter(|a| a.error.is_some()).count());
    Ok(())
}
