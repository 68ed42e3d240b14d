//! `labcrew` subcommands.

use std::fs;
use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use super::{CliGuidance, RunRegistry, RunSettings, GUIDANCE_FILE};
use crate::clock::SystemClock;
use crate::gateway::read_log;
use crate::intervention::{ConsoleGuidance, GuidanceKind, GuidanceSource, GuidanceTarget, InterventionChannel};
use crate::orchestration::{announced_artifacts, InterventionSetup, Session, SessionOutcome};
use crate::persistence::{is_session, load_session, SessionStatus};
use crate::workspace::{CALL_LOG_FILE, INTERRUPT_FLAG};

pub const EXIT_FINISHED: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_PAUSED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "labcrew", version, about = "Run and steer a manager-led team of research agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a new session in an empty workspace.
    Run {
        #[arg(long)]
        workspace: PathBuf,
        /// Research task for the manager; may also come from --config.
        #[arg(long)]
        task: Option<String>,
        #[command(flatten)]
        flags: SessionFlags,
    },
    /// Continue a saved session.
    Resume {
        #[arg(long)]
        workspace: PathBuf,
        #[command(flatten)]
        flags: SessionFlags,
    },
    /// Host the HTTP control API for the sessions under a directory.
    Serve {
        #[arg(long)]
        runs_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: SocketAddr,
        #[command(flatten)]
        flags: SessionFlags,
    },
    /// Ask a running session to suspend at its next step boundary.
    Interrupt {
        #[arg(long)]
        workspace: PathBuf,
        /// Guidance to apply when it suspends, instead of prompting on its console.
        #[arg(long)]
        guidance: Option<String>,
        /// task_refinement, corrective_feedback or new_direction.
        #[arg(long, requires = "guidance")]
        kind: Option<String>,
    },
    /// Print the model call log.
    Log {
        #[arg(long)]
        workspace: PathBuf,
        #[arg(long)]
        agent: Option<String>,
        /// Raw JSON lines instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct SessionFlags {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replay a response script instead of calling a live provider.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub roster: Option<PathBuf>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub max_total_calls: Option<u32>,
    #[arg(long)]
    pub max_per_agent: Option<u32>,
    #[arg(long)]
    pub accept_threshold: Option<u8>,
    #[arg(long)]
    pub reset_after_accept: bool,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub no_compaction: bool,
    /// Refuse the manager's final answer until a review passes.
    #[arg(long)]
    pub quality_gate: bool,
    /// Apply operator guidance to the manager rather than the agent that notices it.
    #[arg(long)]
    pub guide_manager: bool,
    /// Stop (resumably) after this many delegations.
    #[arg(long)]
    pub pause_after: Option<u32>,
}

impl SessionFlags {
    pub fn settings(&self) -> Result<RunSettings, String> {
        let base = match &self.config {
            Some(path) => RunSettings::load(path)?,
            None => RunSettings::default(),
        };
        let flags = RunSettings {
            script: self.script.clone(),
            roster: self.roster.clone(),
            fixtures: self.fixtures.clone(),
            max_total_calls: self.max_total_calls,
            max_per_agent: self.max_per_agent,
            accept_threshold: self.accept_threshold,
            reset_after_accept: self.reset_after_accept.then_some(true),
            max_steps: self.max_steps,
            compaction: self.no_compaction.then_some(false),
            quality_gate: self.quality_gate.then_some(true),
            guidance_target: self.guide_manager.then_some(GuidanceTarget::Manager),
            ..RunSettings::default()
        };
        Ok(base.overlay(&flags))
    }
}

/// Parses `std::env::args` and runs the command.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    execute(cli, &mut stdout.lock(), &mut stderr.lock())
}

pub fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Run { workspace, task, flags } => cmd_run(&workspace, task, &flags, out, err),
        Command::Resume { workspace, flags } => cmd_resume(&workspace, &flags, out, err),
        Command::Serve { runs_dir, bind, flags } => cmd_serve(&runs_dir, bind, &flags, err),
        Command::Interrupt { workspace, guidance, kind } => cmd_interrupt(&workspace, guidance, kind, out, err),
        Command::Log { workspace, agent, json } => cmd_log(&workspace, agent.as_deref(), json, out, err),
    }
}

fn config_error(err: &mut dyn Write, message: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {message}");
    EXIT_CONFIG
}

fn prepare(
    workspace: &Path,
    flags: &SessionFlags,
    err: &mut dyn Write,
) -> Result<(crate::orchestration::SessionConfig, RunSettings), i32> {
    let settings = flags.settings().map_err(|e| config_error(err, e))?;
    let mut config = settings.build().map_err(|e| config_error(err, e))?;
    let channel = Arc::new(InterventionChannel::new());
    let console: Option<Arc<dyn GuidanceSource>> = if std::io::stdin().is_terminal() {
        Some(ConsoleGuidance::spawn(channel.clone(), Arc::new(SystemClock)))
    } else {
        None
    };
    let mut setup = InterventionSetup::new(channel, Arc::new(CliGuidance::new(workspace, console)));
    setup.target = settings.guidance_target.unwrap_or_default();
    config.intervention = Some(setup);
    config.pause_after = flags.pause_after;
    Ok((config, settings))
}

fn cmd_run(workspace: &Path, task: Option<String>, flags: &SessionFlags, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (config, settings) = match prepare(workspace, flags, err) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let Some(task) = task.or(settings.task.clone()) else {
        return config_error(err, "a task is required (--task or `task` in --config)");
    };
    if workspace.exists() && fs::read_dir(workspace).map(|mut d| d.next().is_some()).unwrap_or(true) {
        return config_error(err, format!("workspace {} exists and is not empty", workspace.display()));
    }
    match Session::start(config, workspace, &task) {
        Ok(session) => drive(session, out, err),
        Err(e) => config_error(err, e),
    }
}

fn cmd_resume(workspace: &Path, flags: &SessionFlags, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if !is_session(workspace) {
        return config_error(err, format!("{} is not a session workspace", workspace.display()));
    }
    let state = match load_session(workspace) {
        Ok(s) => s,
        Err(e) => return config_error(err, e),
    };
    match state.status {
        SessionStatus::Finished => {
            let _ = writeln!(out, "status: finished");
            report_final(workspace, state.final_answer.as_deref().unwrap_or_default(), out);
            return EXIT_FINISHED;
        }
        SessionStatus::BudgetExhausted => {
            let _ = writeln!(out, "status: budget exhausted");
            let _ = writeln!(out, "{}", state.final_answer.unwrap_or_default());
            return EXIT_BUDGET;
        }
        _ => {}
    }
    let (config, _) = match prepare(workspace, flags, err) {
        Ok(v) => v,
        Err(code) => return code,
    };
    match Session::resume(config, workspace) {
        Ok(session) => drive(session, out, err),
        Err(e) => config_error(err, e),
    }
}

fn drive(mut session: Session, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let root = session.workspace().root().to_path_buf();
    match session.run() {
        Ok(SessionOutcome::Finished(answer)) => {
            let _ = writeln!(out, "status: finished");
            report_final(&root, &answer, out);
            EXIT_FINISHED
        }
        Ok(SessionOutcome::BudgetExhausted(report)) => {
            let _ = writeln!(out, "status: budget exhausted");
            let _ = writeln!(out, "{report}");
            EXIT_BUDGET
        }
        Ok(SessionOutcome::Paused(reason)) => {
            let _ = writeln!(out, "status: paused ({reason}); continue with `labcrew resume --workspace {}`", root.display());
            EXIT_PAUSED
        }
        Ok(SessionOutcome::Failed(message)) => {
            let _ = writeln!(err, "run failed: {message}");
            EXIT_FAILURE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn report_final(root: &Path, answer: &str, out: &mut dyn Write) {
    let _ = writeln!(out, "{answer}");
    let mentioned = answer
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| matches!(c, '`' | '\'' | '"' | ',' | ';' | ':' | '(' | ')')).trim_end_matches('.'))
        .filter(|w| (w.contains('/') || w.contains('.')) && !w.contains("..") && !w.starts_with('/'))
        .map(str::to_string);
    let mut seen = std::collections::BTreeSet::new();
    for artifact in announced_artifacts(answer).into_iter().chain(mentioned) {
        let path = root.join(&artifact);
        if path.is_file() && seen.insert(artifact) {
            let _ = writeln!(out, "deliverable: {}", path.display());
        }
    }
}

fn cmd_serve(runs_dir: &Path, bind: SocketAddr, flags: &SessionFlags, err: &mut dyn Write) -> i32 {
    let settings = match flags.settings() {
        Ok(s) => s,
        Err(e) => return config_error(err, e),
    };
    let registry = match RunRegistry::open(runs_dir, settings) {
        Ok(r) => Arc::new(r),
        Err(e) => return config_error(err, format!("cannot open {}: {e}", runs_dir.display())),
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => return config_error(err, e),
    };
    match runtime.block_on(super::server::serve(registry, bind)) {
        Ok(()) => EXIT_FINISHED,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn cmd_interrupt(
    workspace: &Path,
    guidance: Option<String>,
    kind: Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    if !is_session(workspace) {
        return config_error(err, format!("{} is not a session workspace", workspace.display()));
    }
    if let Some(text) = guidance {
        let line = match kind {
            Some(k) => match k.parse::<GuidanceKind>() {
                Ok(k) => format!("{k}: {text}"),
                Err(e) => return config_error(err, e),
            },
            None => text,
        };
        if let Err(e) = fs::write(workspace.join(GUIDANCE_FILE), line) {
            return config_error(err, e);
        }
    }
    if let Err(e) = fs::write(workspace.join(INTERRUPT_FLAG), b"") {
        return config_error(err, e);
    }
    let _ = writeln!(out, "interrupt requested; the session suspends at its next step boundary");
    EXIT_FINISHED
}

fn cmd_log(workspace: &Path, agent: Option<&str>, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let entries = match read_log(&workspace.join(CALL_LOG_FILE)) {
        Ok(e) => e,
        Err(e) => return config_error(err, format!("cannot read call log in {}: {e}", workspace.display())),
    };
    for entry in entries.iter().filter(|e| agent.is_none_or(|a| e.agent_name == a)) {
        if json {
            let _ = writeln!(out, "{}", serde_json::to_string(entry).unwrap_or_default());
        } else {
            let tokens = entry
                .token_usage
                .map(|t| format!("{}/{}", t.input, t.output))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:>5}  {}  {:<28} step {:>3}  attempt {}  tokens {:<11} {:>6} ms{}",
                entry.sequence,
                entry.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                entry.agent_name,
                entry.step_index,
                entry.attempt,
                tokens,
                entry.latency_ms,
                entry.error.as_deref().map(|e| format!("  error: {e}")).unwrap_or_default(),
            );
        }
    }
    EXIT_FINISHED
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse_into_settings() {
        let cli = Cli::try_parse_from([
            "labcrew",
            "run",
            "--workspace",
            "/tmp/x",
            "--task",
            "t",
            "--max-total-calls",
            "1",
            "--no-compaction",
            "--guide-manager",
        ])
        .unwrap();
        let Command::Run { flags, .. } = cli.command else { panic!() };
        let s = flags.settings().unwrap();
        assert_eq!(s.max_total_calls, Some(1));
        assert_eq!(s.compaction, Some(false));
        assert_eq!(s.guidance_target, Some(GuidanceTarget::Manager));
        assert_eq!(s.quality_gate, None);
    }

    #[test]
    fn kind_requires_guidance() {
        assert!(Cli::try_parse_from(["labcrew", "interrupt", "--workspace", "w", "--kind", "refine"]).is_err());
    }

    #[test]
    fn interrupt_rejects_non_session() {
        let dir = tempfile::tempdir().unwrap();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = cmd_interrupt(dir.path(), None, None, &mut out, &mut err);
        assert_eq!(code, EXIT_CONFIG);
        assert!(!dir.path().join(INTERRUPT_FLAG).exists());
    }
}
