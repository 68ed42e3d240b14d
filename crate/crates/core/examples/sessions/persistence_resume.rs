//! Stop a session every two delegations and pick it up again from disk
//! until it finishes.
//!
//! ```bash
//! cargo run -p labcrew --example persistence_resume
//! ```

use std::sync::Arc;

use labcrew::control::default_fixtures_dir;
use labcrew::gateway::ScriptedBackend;
use labcrew::orchestration::{reference_roster, Session, SessionConfig, SessionOutcome};
use labcrew::persistence::load_session;

const TASK: &str = "Investigate whether hidden Markov models can detect phase transitions during neural network training, and deliver a paper.";

fn config() -> Result<SessionConfig, Box<dyn std::error::Error>> {
    let fixtures = default_fixtures_dir();
    let backend = Arc::new(ScriptedBackend::from_file(&fixtures.join("trace/script.toml"))?);
    let mut config = SessionConfig::new(reference_roster(&fixtures)?, backend);
    config.pause_after = Some(2);
    Ok(config)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("run");

    let mut session = Session::start(config()?, &root, TASK)?;
    let mut legs = 1;
    loop {
        let outcome = session.run()?;
        let saved = load_session(&root)?;
        println!(
            "leg {legs}: {:?}, {} delegations on disk, status {:?}",
            outcome_kind(&outcome),
            saved.manager_state.total_calls,
            saved.status
        );
        if !matches!(outcome, SessionOutcome::Paused(_)) {
            break;
        }
        drop(session);
        session = Session::resume(config()?, &root)?;
        legs += 1;
    }
    Ok(())
}

fn outcome_kind(outcome: &SessionOutcome) -> &'static str {
    match outcome {
        SessionOutcome::Finished(_) => "finished",
        SessionOutcome::BudgetExhausted(_) => "budget exhausted",
        SessionOutcome::Paused(_) => "paused",
        SessionOutcome::Failed(_) => "failed",
    }
}
