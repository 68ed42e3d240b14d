//! Replay the bundled research trace: a manager and five specialists,
//! driven by a scripted model, end to end.
//!
//! ```bash
//! cargo run -p labcrew --example trace_replay
//! cargo run -p labcrew --example trace_replay -- /tmp/trace-run
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use labcrew::control::default_fixtures_dir;
use labcrew::gateway::{read_log, ScriptedBackend};
use labcrew::orchestration::{reference_roster, Session, SessionConfig};
use labcrew::workspace::CALL_LOG_FILE;

const TASK: &str = "Investigate whether hidden Markov models can detect phase transitions during neural network training, and deliver a paper.";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = default_fixtures_dir();
    let scratch = tempfile::tempdir()?;
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| scratch.path().join("run"));

    let backend = Arc::new(ScriptedBackend::from_file(&fixtures.join("trace/script.toml"))?);
    let config = SessionConfig::new(reference_roster(&fixtures)?, backend);
    let mut session = Session::start(config, &root, TASK)?;
    let outcome = session.run()?;

    println!("{:>3}  {:<28} {:<8} score", "#", "agent", "verdict");
    for record in session.hub().records() {
        let score = record.score.map(|s| format!("{}/10", s.overall)).unwrap_or_default();
        println!("{:>3}  {:<28} {:<8} {score}", record.seq, record.target, format!("{:?}", record.verdict).to_lowercase());
    }
    println!("\noutcome: {outcome:?}");
    println!("model calls: {}", read_log(&root.join(CALL_LOG_FILE))?.len());
    println!("workspace: {}", root.display());
    Ok(())
}
