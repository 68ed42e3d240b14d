mod common;

use std::fs;
use std::path::Path;

use clap::Parser;

use common::*;
use labcrew::control::cli::{execute, Cli, EXIT_BUDGET, EXIT_CONFIG, EXIT_FINISHED, EXIT_PAUSED};
use labcrew::gateway::{read_log, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
use labcrew::orchestration::Session;
use labcrew::persistence::load_session;

struct Outcome {
    code: i32,
    out: String,
    err: String,
}

fn labcrew(args: &[&str]) -> Outcome {
    let mut argv = vec!["labcrew"];
    argv.extend_from_slice(args);
    let cli = Cli::try_parse_from(argv).unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = execute(cli, &mut out, &mut err);
    Outcome {
        code,
        out: String::from_utf8(out).unwrap(),
        err: String::from_utf8(err).unwrap(),
    }
}

fn script_flags() -> Vec<String> {
    vec![
        "--script".into(),
        trace_script().display().to_string(),
        "--fixtures".into(),
        fixtures().display().to_string(),
    ]
}

fn run_args<'a>(ws: &'a str, flags: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["run", "--workspace", ws, "--task", TRACE_TASK];
    args.extend(flags.iter().map(String::as_str));
    args.extend_from_slice(extra);
    args
}

fn delegations(ws: &Path) -> usize {
    load_session(ws).unwrap().manager_state.total_calls as usize
}

fn targets(ws: &Path) -> Vec<String> {
    let session = Session::resume(trace_config(&trace_script(), 0), ws).unwrap();
    session.hub().records().iter().map(|r| r.target.clone()).collect()
}

#[test]
fn scripted_run_finishes_and_names_the_pdf() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws").display().to_string();
    let flags = script_flags();
    let r = labcrew(&run_args(&ws, &flags, &[]));
    assert_eq!(r.code, EXIT_FINISHED, "{}", r.err);
    assert!(r.out.starts_with("status: finished"));
    assert!(r.out.contains("deliverable: ") && r.out.contains("final_paper.pdf"), "{}", r.out);
}

#[test]
fn total_budget_of_one_stops_after_the_first_delegation() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let flags = script_flags();
    let r = labcrew(&run_args(ws.to_str().unwrap(), &flags, &["--max-total-calls", "1"]));
    assert_eq!(r.code, EXIT_BUDGET, "{}{}", r.out, r.err);
    assert!(r.out.contains("budget exhausted"));
    assert_eq!(delegations(&ws), 1);
}

#[test]
fn live_mode_without_credentials_is_a_config_error() {
    if [ENV_BASE_URL, ENV_API_KEY, ENV_MODEL].iter().any(|k| std::env::var(k).is_ok()) {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let r = labcrew(&["run", "--workspace", ws.to_str().unwrap(), "--task", "x"]);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.err.contains(ENV_BASE_URL), "{}", r.err);
    assert!(!ws.exists());
}

#[test]
fn paused_runs_resume_where_they_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let ws_s = ws.display().to_string();
    let flags = script_flags();
    let r = labcrew(&run_args(&ws_s, &flags, &["--pause-after", "5"]));
    assert_eq!(r.code, EXIT_PAUSED, "{}", r.err);
    assert_eq!(delegations(&ws), 5);

    let mut resume = vec!["resume", "--workspace", ws_s.as_str()];
    resume.extend(flags.iter().map(String::as_str));
    let r = labcrew(&resume);
    assert_eq!(r.code, EXIT_FINISHED, "{}", r.err);
    assert_eq!(targets(&ws), TRACE_SEQUENCE);

    let calls = read_log(&ws.join("llm_calls.jsonl")).unwrap().len();
    let r = labcrew(&resume);
    assert_eq!(r.code, EXIT_FINISHED);
    assert!(r.out.contains("final_paper.pdf"));
    assert_eq!(read_log(&ws.join("llm_calls.jsonl")).unwrap().len(), calls);
}

#[test]
fn run_refuses_a_non_empty_workspace() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), "keep").unwrap();
    let flags = script_flags();
    let r = labcrew(&run_args(dir.path().to_str().unwrap(), &flags, &[]));
    assert_eq!(r.code, EXIT_CONFIG);
    assert_eq!(fs::read_to_string(dir.path().join("notes.txt")).unwrap(), "keep");
}

#[test]
fn resume_rejects_foreign_and_newer_workspaces() {
    let dir = tempfile::tempdir().unwrap();
    let flags = script_flags();
    let mut args = vec!["resume", "--workspace", dir.path().to_str().unwrap()];
    args.extend(flags.iter().map(String::as_str));
    assert_eq!(labcrew(&args).code, EXIT_CONFIG);

    let ws = dir.path().join("ws");
    run_trace(&ws);
    let manifest = ws.join("session.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    json["schema_version"] = 99.into();
    fs::write(&manifest, json.to_string()).unwrap();
    let mut args = vec!["resume", "--workspace", ws.to_str().unwrap()];
    args.extend(flags.iter().map(String::as_str));
    let r = labcrew(&args);
    assert_eq!(r.code, EXIT_CONFIG);
    assert!(r.err.contains("99"), "{}", r.err);
}

#[test]
fn interrupt_leaves_flag_and_guidance_files() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    run_trace(&ws);
    let r = labcrew(&[
        "interrupt",
        "--workspace",
        ws.to_str().unwrap(),
        "--guidance",
        "Use a larger corpus.",
        "--kind",
        "new",
    ]);
    assert_eq!(r.code, EXIT_FINISHED, "{}", r.err);
    assert!(ws.join(".interrupt").exists());
    let text = fs::read_to_string(ws.join(".guidance")).unwrap();
    assert!(text.ends_with(": Use a larger corpus."), "{text}");
}

#[test]
fn log_filters_by_agent() {
    let dir = tempfile::tempdir().unwrap();
    run_trace(dir.path());
    let ws = dir.path().to_str().unwrap();
    let all = labcrew(&["log", "--workspace", ws, "--json"]);
    assert_eq!(all.code, EXIT_FINISHED);
    let total = all.out.lines().count();
    assert_eq!(total, read_log(&dir.path().join("llm_calls.jsonl")).unwrap().len());

    let reviewer = labcrew(&["log", "--workspace", ws, "--agent", "reviewer_agent"]);
    assert!(reviewer.out.lines().count() > 0);
    assert!(reviewer.out.lines().all(|l| l.contains("reviewer_agent")));
    assert!(reviewer.out.lines().count() < total);
}
