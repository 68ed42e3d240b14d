//! Drive the file tools directly against a scratch workspace, including a
//! path that tries to leave the sandbox.
//!
//! ```bash
//! cargo run -p labcrew --example workspace_tools
//! ```

use labcrew::clock::SystemClock;
use labcrew::runtime::tool::ToolContext;
use labcrew::workspace::tools::workspace_tools;
use labcrew::workspace::{WorkspaceHandle, WorkspacePolicy};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let ws = WorkspaceHandle::create(dir.path(), &["notes_agent"])?;
    let policy = WorkspacePolicy::member("notes_agent");
    let clock = SystemClock;
    let ctx = ToolContext {
        agent_name: "notes_agent",
        workspace: &ws,
        policy: &policy,
        clock: &clock,
    };
    let tools = workspace_tools();

    let calls: Vec<(&str, Value)> = vec![
        ("create_file_with_content", json!({ "filename": "notes/plan.md", "content": "# Plan\n- read\n- write\n" })),
        ("modify_file", json!({ "filename": "notes/plan.md", "start_line": 3, "end_line": 3, "new_content": "- draft\n- revise\n" })),
        ("see_file", json!({ "filename": "notes/plan.md" })),
        ("search_keyword", json!({ "keyword": "draft", "path": "." })),
        ("list_dir", json!({ "directory": "notes" })),
        ("see_file", json!({ "filename": "../../etc/passwd" })),
        ("delete_file_or_folder", json!({ "filename": "notes" })),
        ("list_dir", json!({ "directory": "." })),
    ];
    for (name, args) in calls {
        let tool = tools.get(name).expect("workspace tool");
        println!("> {name} {args}");
        match tool.call(args.as_object().expect("object args"), &ctx) {
            Ok(text) => println!("{text}\n"),
            Err(e) => println!("error: {e}\n"),
        }
    }
    Ok(())
}
