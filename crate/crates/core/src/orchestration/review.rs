//! Reading sub-agent reports: verdicts, announced files and review scores.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Guardrails;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ok,
    Warning,
    Failed,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Ok => "ok",
            Verdict::Warning => "warning",
            Verdict::Failed => "failed",
        }
    }
}

/// Case-sensitive substrings that classify a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMarkers {
    pub failed: Vec<String>,
    pub warning: Vec<String>,
}

impl Default for ReportMarkers {
    fn default() -> Self {
        Self {
            failed: vec!["TASK FAILED".into(), "CRITICAL".into()],
            warning: vec!["Warning".into(), "missing".into()],
        }
    }
}

impl ReportMarkers {
    pub fn classify(&self, report: &str) -> Verdict {
        if self.failed.iter().any(|m| report.contains(m.as_str())) {
            Verdict::Failed
        } else if self.warning.iter().any(|m| report.contains(m.as_str())) {
            Verdict::Warning
        } else {
            Verdict::Ok
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewScore {
    pub overall: u8,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegationReport {
    pub target: String,
    pub final_answer: String,
    pub verdict: Verdict,
    pub artifacts_announced: Vec<String>,
    pub score: Option<ReviewScore>,
}

impl DelegationReport {
    pub fn parse(target: &str, final_answer: &str, markers: &ReportMarkers) -> Self {
        Self {
            target: target.to_string(),
            final_answer: final_answer.to_string(),
            verdict: markers.classify(final_answer),
            artifacts_announced: announced_artifacts(final_answer),
            score: parse_review_score(final_answer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationDecision {
    pub may_terminate: bool,
    pub mandatory_redirect: bool,
}

fn score_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Score\s+(\d{1,3})\s*/\s*10\b(?:\s+-\s+([^,.\n]+))?").expect("score regex"))
}

fn artifact_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Created\s+`?([^\s`]+?)`?\s+containing\b").expect("artifact regex"))
}

/// First in-range `Score N/10`, with the label that follows ` - ` if any.
pub fn parse_review_score(report: &str) -> Option<ReviewScore> {
    score_regex().captures_iter(report).find_map(|caps| {
        let overall: u8 = caps[1].parse().ok()?;
        if !(1..=10).contains(&overall) {
            return None;
        }
        let label = caps.get(2).map(|m| m.as_str().trim().to_string()).unwrap_or_default();
        Some(ReviewScore { overall, label })
    })
}

/// File names announced with the `Created <file> containing <summary>` convention.
pub fn announced_artifacts(report: &str) -> Vec<String> {
    artifact_regex()
        .captures_iter(report)
        .map(|c| c[1].trim_end_matches([',', ';', ':']).to_string())
        .collect()
}

pub fn enforce_termination_policy(score: &ReviewScore, guardrails: &Guardrails) -> TerminationDecision {
    TerminationDecision {
        may_terminate: score.overall >= guardrails.accept_threshold,
        mandatory_redirect: score.overall <= 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_from_trace_reports() {
        let s = parse_review_score("Score 5/10 - Borderline Accept, Major Revisions needed. Expand datasets").unwrap();
        assert_eq!((s.overall, s.label.as_str()), (5, "Borderline Accept"));
        let s = parse_review_score("Score 7/10 - Accept with Minor Revisions. Excellent").unwrap();
        assert_eq!((s.overall, s.label.as_str()), (7, "Accept with Minor Revisions"));
        assert_eq!(parse_review_score("Score 7/10 - Accept").unwrap().label, "Accept");
        assert!(parse_review_score("no verdict here").is_none());
        assert_eq!(parse_review_score("Score 0/10 then Score 3/10").unwrap().overall, 3);
        assert_eq!(parse_review_score("Score 9/10").unwrap().label, "");
    }

    #[test]
    fn termination_policy_thresholds() {
        let g = Guardrails::default();
        let at = |n| enforce_termination_policy(&ReviewScore { overall: n, label: String::new() }, &g);
        assert!(at(6).may_terminate);
        assert!(!at(5).may_terminate && !at(5).mandatory_redirect);
        assert!(at(2).mandatory_redirect && !at(2).may_terminate);
        assert!(at(1).mandatory_redirect);
    }

    #[test]
    fn verdict_markers() {
        let m = ReportMarkers::default();
        assert_eq!(m.classify("TASK FAILED - Missing paper_workspace/ resources"), Verdict::Failed);
        assert_eq!(m.classify("Workspace ready but missing link to experiment_data/"), Verdict::Warning);
        assert_eq!(m.classify("Paper completed successfully"), Verdict::Ok);
        assert_eq!(m.classify("task failed"), Verdict::Ok);
    }

    #[test]
    fn artifacts_follow_announcement_convention() {
        let report = "Created ideation_agent/refined_idea.json containing the refined idea. Created `notes.md` containing notes";
        assert_eq!(announced_artifacts(report), vec!["ideation_agent/refined_idea.json", "notes.md"]);
    }
}
