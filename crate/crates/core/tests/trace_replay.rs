mod common;

use std::fs;

use common::*;
use labcrew::orchestration::{reference_roster, Roster, Session, SessionError, SessionOutcome};
use labcrew::persistence::{PersistenceError, SessionStatus};

#[test]
fn replay_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (_, out_a) = run_trace(a.path());
    let (_, out_b) = run_trace(b.path());
    assert_eq!(out_a, out_b);
    assert_eq!(
        normalized_log(&a.path().join("llm_calls.jsonl")),
        normalized_log(&b.path().join("llm_calls.jsonl"))
    );
    let tex = "paper_workspace/final_paper.tex";
    assert_eq!(fs::read(a.path().join(tex)).unwrap(), fs::read(b.path().join(tex)).unwrap());
}

#[test]
fn only_the_scripted_failure_surfaces_as_a_step_error() {
    let dir = tempfile::tempdir().unwrap();
    let (session, _) = run_trace(dir.path());
    let errors: Vec<(String, usize, String)> = session
        .snapshot()
        .agents
        .iter()
        .flat_map(|(name, mem)| {
            mem.actions()
                .filter_map(|a| a.error.as_ref().map(|e| (name.clone(), a.index, e.message.clone())))
                .collect::<Vec<_>>()
        })
        .collect();
    assert_eq!(errors.len(), 1, "{errors:?}");
    assert_eq!(errors[0].0, "writeup_agent");
    assert!(errors[0].2.contains("experiment_data"), "{}", errors[0].2);
}

#[test]
fn paper_artifacts_are_assembled() {
    let dir = tempfile::tempdir().unwrap();
    run_trace(dir.path());
    let paper = dir.path().join("paper_workspace");
    let tex = fs::read_to_string(paper.join("final_paper.tex")).unwrap();
    assert!(tex.matches("\\input{").count() >= 3, "{tex}");
    let bib = fs::read_to_string(paper.join("references.bib")).unwrap();
    assert!(bib.contains("@misc{hidden_markov_models"), "{bib}");
    let pdf = fs::read(paper.join("final_paper.pdf")).unwrap();
    assert!(pdf.starts_with(b"%PDF-1.4"));
    assert!(dir.path().join("paper_workspace/experiment_data").exists());
}

#[test]
fn manager_sees_budget_and_score_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let (session, _) = run_trace(dir.path());
    let memory = session.manager_memory().serialize();
    assert!(memory.contains("[delegation 3/12 | resource_preparation_agent 1/3 | verdict: warning]"));
    assert!(memory.contains("[review score 5/10 | may_terminate: false | mandatory_redirect: false]"));
    assert!(memory.contains("[review score 7/10 | may_terminate: true"));
}

#[test]
fn quality_gate_still_accepts_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = trace_config(&trace_script(), 0);
    config.quality_gate = true;
    let mut session = Session::start(config, dir.path(), TRACE_TASK).unwrap();
    assert!(matches!(session.run().unwrap(), SessionOutcome::Finished(_)));
    assert_eq!(session.hub().records().len(), TRACE_SEQUENCE.len());
}

#[test]
fn finished_session_resumes_without_model_calls() {
    let dir = tempfile::tempdir().unwrap();
    let (_, first) = run_trace(dir.path());
    let log = dir.path().join("llm_calls.jsonl");
    let calls = normalized_log(&log).len();
    let mut again = Session::resume(trace_config(&trace_script(), 50_000), dir.path()).unwrap();
    assert_eq!(again.status(), SessionStatus::Finished);
    assert_eq!(again.run().unwrap(), first);
    assert_eq!(normalized_log(&log).len(), calls);
}

#[test]
fn start_refuses_an_existing_session() {
    let dir = tempfile::tempdir().unwrap();
    run_trace(dir.path());
    let err = Session::start(trace_config(&trace_script(), 0), dir.path(), TRACE_TASK).unwrap_err();
    assert!(matches!(err, SessionError::AlreadyExists(_)));
}

#[test]
fn resume_rejects_a_newer_schema() {
    let dir = tempfile::tempdir().unwrap();
    run_trace(dir.path());
    let manifest = dir.path().join("session.json");
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    json["schema_version"] = 99.into();
    fs::write(&manifest, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    let err = Session::resume(trace_config(&trace_script(), 0), dir.path()).unwrap_err();
    assert!(
        matches!(err, SessionError::Persistence(PersistenceError::SchemaMismatch { found: 99, .. })),
        "{err}"
    );
}

#[test]
fn resume_rejects_a_different_roster() {
    let dir = tempfile::tempdir().unwrap();
    run_trace(dir.path());
    let full = reference_roster(&fixtures()).unwrap();
    let mut smaller = full.manager().clone();
    smaller.managed.retain(|m| m.name == "ideation_agent");
    let ideation = full.get("ideation_agent").unwrap().clone();
    let roster = Roster::new(vec![smaller, ideation], full.tools().clone()).unwrap();
    let mut config = trace_config(&trace_script(), 0);
    config.roster = roster;
    let err = Session::resume(config, dir.path()).unwrap_err();
    assert!(matches!(err, SessionError::RosterMismatch { .. }), "{err}");
}
