//! Render the system prompt of every agent in the reference roster.
//!
//! ```bash
//! cargo run -p labcrew --example render_prompts
//! cargo run -p labcrew --example render_prompts -- writeup_agent
//! ```

use labcrew::control::default_fixtures_dir;
use labcrew::orchestration::reference_roster;
use labcrew::prompt::{render_system_prompt, section_span, Section};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let roster = reference_roster(&default_fixtures_dir())?;
    let only = std::env::args().nth(1);

    for spec in roster.agents() {
        if only.as_deref().is_some_and(|name| name != spec.name) {
            continue;
        }
        let prompt = render_system_prompt(spec)?;
        println!("=== {} ({} chars) ===", spec.name, prompt.len());
        for section in Section::ORDER {
            match section_span(&prompt, section) {
                Some(body) => println!("  [{}] {} lines", section.tag(), body.lines().count()),
                None => println!("  [{}] absent", section.tag()),
            }
        }
        if only.is_some() {
            println!("\n{prompt}");
        }
    }
    Ok(())
}
