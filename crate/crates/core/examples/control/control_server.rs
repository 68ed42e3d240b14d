//! Serve the control API on a local port, start a scripted run over HTTP
//! and follow its event stream.
//!
//! ```bash
//! cargo run -p labcrew --example control_server
//! ```

use std::sync::Arc;

use labcrew::control::server::router;
use labcrew::control::{default_fixtures_dir, RunRegistry, RunSettings};
use serde_json::{json, Value};

const TASK: &str = "Investigate whether hidden Markov models can detect phase transitions during neural network training, and deliver a paper.";

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runs = tempfile::tempdir()?;
    let defaults = RunSettings {
        script: Some(default_fixtures_dir().join("trace/script.toml")),
        ..Default::default()
    };
    let registry = Arc::new(RunRegistry::open(runs.path(), defaults)?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(registry)).await });
    println!("control API on {base}");

    let (base_c, run) = tokio::task::spawn_blocking(move || -> Result<(String, Value), reqwest::Error> {
        let client = reqwest::blocking::Client::new();
        let run: Value = client.post(format!("{base}/runs")).json(&json!({ "task": TASK })).send()?.json()?;
        Ok((base, run))
    })
    .await??;
    let id = run["run_id"].as_str().unwrap_or_default().to_string();
    println!("started run {id}");

    let tail = tokio::task::spawn_blocking(move || -> Result<(String, Value), reqwest::Error> {
        let client = reqwest::blocking::Client::new();
        let events = client.get(format!("{base_c}/runs/{id}/events")).send()?.text()?;
        let run: Value = client.get(format!("{base_c}/runs/{id}")).send()?.json()?;
        Ok((events, run))
    })
    .await??;

    let (events, run) = tail;
    for line in events.lines().filter(|l| l.starts_with("data: ")) {
        let event: Value = serde_json::from_str(&line[6..])?;
        if let Some(agent) = event["agent"].as_str() {
            println!("event {:>3}  {agent} step {}", event["id"], event["step"]["index"]);
        }
    }
    println!("final status: {} ({})", run["status"], run["outcome"]["kind"]);
    Ok(())
}
