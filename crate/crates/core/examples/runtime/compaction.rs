//! Fill an agent's memory with bulky observations and let the compaction
//! monitor fold old steps into a summary backed up on disk.
//!
//! ```bash
//! cargo run -p labcrew --example compaction
//! ```

use std::sync::Arc;

use labcrew::clock::TickingClock;
use labcrew::compaction::{estimate_tokens, read_backup, CompactionMonitor, CompactionPolicy};
use labcrew::gateway::{LmGateway, ScriptEntry, ScriptedBackend};
use labcrew::roster::{AgentSpec, ModelConfig};
use labcrew::runtime::agent::{run_agent, RuntimeContext};
use labcrew::runtime::memory::{MemoryStep, TaskStep};
use labcrew::runtime::tool::{Args, ParamSpec, ParamType, Tool, ToolContext, ToolError, ToolRegistry, ToolSpec};
use labcrew::workspace::{WorkspaceHandle, WorkspacePolicy};
use serde_json::{json, Map, Value};

struct Fetch {
    spec: ToolSpec,
}

impl Tool for Fetch {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call(&self, args: &Map<String, Value>, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let page = Args(args).int("page")?;
        Ok(format!("page {page}: {}", "lorem ipsum ".repeat(150)))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fetch = Arc::new(Fetch {
        spec: ToolSpec::new(
            "fetch_page",
            "Returns one page of a long document.",
            vec![ParamSpec::required("page", ParamType::Integer, "Page number.")],
        ),
    });
    let tools = ToolRegistry::new().with(fetch);

    let pages = 12;
    let mut script: Vec<ScriptEntry> = (0..pages)
        .map(|i| {
            let reply = format!("Thought: read page {i}.\n```action\n{}\n```", json!({ "tool": "fetch_page", "args": { "page": i } }));
            ScriptEntry::at_step("reader_agent", i, reply)
        })
        .collect();
    let done = json!({ "tool": "final_answer", "args": { "answer": "read every page" } });
    script.push(ScriptEntry::at_step("reader_agent", pages, format!("Thought: done.\n```action\n{done}\n```")));

    let dir = tempfile::tempdir()?;
    let ws = WorkspaceHandle::create(dir.path(), &["reader_agent"])?;
    let policy = CompactionPolicy::default();
    let monitor = Arc::new(CompactionMonitor::new(policy.clone()));
    let gateway = Arc::new(LmGateway::new(Arc::new(ScriptedBackend::new(script)?)));
    let ctx = RuntimeContext::new(ws.clone(), gateway, Arc::new(TickingClock::fixed())).with_callback(monitor.clone());

    let spec = AgentSpec {
        name: "reader_agent".into(),
        description: "Reads long documents.".into(),
        instructions: "Read every page, then answer.".into(),
        tools: tools.specs(),
        managed: vec![],
        model: ModelConfig {
            context_limit_tokens: 3_000,
            ..Default::default()
        },
        workspace_policy: WorkspacePolicy::member("reader_agent"),
    };
    let (outcome, memory) = run_agent(&spec, TaskStep::new("Read the document."), &ctx, &tools)?;
    println!("outcome: {outcome:?}\n");

    for record in monitor.records() {
        let saved = read_backup(&record.backup_file)?;
        println!(
            "compacted {} -> {} tokens, {} steps saved to {}",
            record.tokens_before,
            record.tokens_after,
            saved.len(),
            ws.relative(&record.backup_file)
        );
    }

    println!("\nfinal memory ({} tokens):", estimate_tokens(&memory, &tools.specs(), &policy));
    for step in &memory.steps {
        match step {
            MemoryStep::Task(t) => println!("  task: {}", t.text),
            MemoryStep::Action(a) if a.compacted => {
                let s = a.summary.as_ref().expect("summary");
                println!("  summary of steps {}..={}", s.covered_step_range.0, s.covered_step_range.1);
            }
            MemoryStep::Action(a) => println!("  step {}", a.index),
        }
    }
    Ok(())
}
