//! Interrupt a running session from another thread and hand the active
//! agent new guidance between two of its steps.
//!
//! ```bash
//! cargo run -p labcrew --example intervention
//! ```

use std::sync::Arc;

use labcrew::control::default_fixtures_dir;
use labcrew::gateway::ScriptedBackend;
use labcrew::intervention::{Guidance, GuidanceKind, InterventionChannel, QueueGuidance, SignalSource};
use labcrew::orchestration::{reference_roster, InterventionSetup, Session, SessionConfig};
use labcrew::runtime::agent::{StepCallback, StepContext};

const TASK: &str = "Investigate whether hidden Markov models can detect phase transitions during neural network training, and deliver a paper.";

/// Plays the operator: raises an interrupt once the experimentation agent
/// has taken its first step.
struct Operator {
    channel: Arc<InterventionChannel>,
    queue: Arc<QueueGuidance>,
}

impl StepCallback for Operator {
    fn name(&self) -> &str {
        "operator"
    }

    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        let first_step = ctx.memory.last_action().is_some_and(|a| a.index == 0);
        if ctx.spec.name == "experimentation_agent" && first_step {
            let queue = self.queue.clone();
            let channel = self.channel.clone();
            std::thread::spawn(move || {
                channel.raise(SignalSource::Api, chrono::Utc::now());
                queue.submit(Guidance::new("Report per-seed variance as well.", GuidanceKind::TaskRefinement));
            })
            .join()
            .map_err(|_| "operator thread panicked".to_string())?;
        }
        Ok(())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = default_fixtures_dir();
    let backend = Arc::new(ScriptedBackend::from_file(&fixtures.join("trace/script.toml"))?);
    let channel = Arc::new(InterventionChannel::new());
    let queue = Arc::new(QueueGuidance::new());

    let mut config = SessionConfig::new(reference_roster(&fixtures)?, backend);
    config.intervention = Some(InterventionSetup::new(channel.clone(), queue.clone()));
    config.observers.push(Arc::new(Operator { channel, queue }));

    let dir = tempfile::tempdir()?;
    let mut session = Session::start(config, &dir.path().join("run"), TASK)?;
    let outcome = session.run()?;

    for applied in session.applied_guidance() {
        println!(
            "{} received {} guidance after step {}: {}",
            applied.agent_name, applied.guidance.kind, applied.after_step, applied.guidance.text
        );
    }
    println!("outcome: {outcome:?}");
    Ok(())
}
