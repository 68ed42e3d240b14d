//! Session save and load.
//!
//! Layout under the workspace root:
//!
//! ```text
//! session.json            manifest: identity, task, status, delegation log, generation
//! memory/<agent>.jsonl    header line, then one line per memory entry
//! memory/<agent>.jsonl.prev   the previous committed generation
//! ```
//!
//! A save writes every memory file as `<agent>.jsonl.tmp`, rotates the
//! committed file to `.prev`, renames the new file into place and finally
//! replaces the manifest. The manifest's generation is the commit point:
//! loading picks, per agent, whichever of the current and `.prev` files
//! carries the committed generation. Delegation counters are recomputed from
//! the memory files on load.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestration::{DelegationRecord, ReviewScore};
use crate::runtime::memory::{AgentMemory, MemoryStep, Priority};
use crate::workspace::{MEMORY_DIR, SESSION_MANIFEST};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    /// Stopped at a delegation boundary on request; resumable.
    Paused,
    Finished,
    BudgetExhausted,
    Failed,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionStatus::Finished | SessionStatus::BudgetExhausted)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagerState {
    /// Delegations received per agent, recomputed from memory files.
    pub delegation_count: BTreeMap<String, u32>,
    pub total_calls: u32,
    /// Count at the last counter reset; the per-agent limit applies to the difference.
    #[serde(default)]
    pub iteration_baseline: BTreeMap<String, u32>,
}

impl ManagerState {
    pub fn iterations(&self, agent: &str) -> u32 {
        let count = self.delegation_count.get(agent).copied().unwrap_or(0);
        count.saturating_sub(self.iteration_baseline.get(agent).copied().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub workspace_root: PathBuf,
    pub task: String,
    pub manager: String,
    /// Every agent of the roster, manager first.
    pub roster: Vec<String>,
    pub status: SessionStatus,
    pub final_answer: Option<String>,
    pub agents: BTreeMap<String, AgentMemory>,
    pub manager_state: ManagerState,
    pub delegations: Vec<DelegationRecord>,
    pub latest_score: Option<ReviewScore>,
}

impl SessionState {
    /// Number of delegations `agent` has received according to its memory.
    pub fn delegations_in(memory: &AgentMemory) -> u32 {
        memory
            .tasks()
            .filter(|t| t.priority == Priority::Normal)
            .count() as u32
    }

    /// Recomputes counters from the sub-agent memories (the manager's own task is not a delegation).
    pub fn derive_counters(&mut self) {
        let mut counts = BTreeMap::new();
        for (name, memory) in &self.agents {
            if name != &self.manager {
                counts.insert(name.clone(), Self::delegations_in(memory));
            }
        }
        self.manager_state.total_calls = counts.values().sum();
        self.manager_state.delegation_count = counts;
    }
}

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("'{}' is not a session: no {SESSION_MANIFEST} found", path.display())]
    NotASession { path: PathBuf },
    #[error("session schema version {found} is not supported (this build reads version {supported}); migrate the session first")]
    SchemaMismatch { found: u32, supported: u32 },
    #[error("memory file for agent '{agent}' does not match the committed generation {generation}: {detail}")]
    Torn {
        agent: String,
        generation: u64,
        detail: String,
    },
    #[error("corrupt session file {}: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("session storage error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("save aborted at {0:?}")]
    Aborted(SavePhase),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistenceError + '_ {
    move |source| PersistenceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Points during a save where a hook may interrupt, for crash testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SavePhase {
    TempWritten(String),
    PreviousRotated(String),
    MemoryCommitted(String),
    ManifestTempWritten,
}

pub type SaveHook<'a> = &'a mut dyn FnMut(&SavePhase) -> Result<(), ()>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    generation: u64,
    session_id: String,
    created_at: DateTime<Utc>,
    workspace_root: PathBuf,
    task: String,
    manager: String,
    roster: Vec<String>,
    status: SessionStatus,
    final_answer: Option<String>,
    /// Informational copy; the memory files are authoritative.
    manager_state: ManagerState,
    delegations: Vec<DelegationRecord>,
    latest_score: Option<ReviewScore>,
    saved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemoryHeader {
    schema_version: u32,
    agent_name: String,
    generation: u64,
    last_compaction_step: Option<usize>,
}

pub fn manifest_path(root: &Path) -> PathBuf {
    root.join(SESSION_MANIFEST)
}

pub fn memory_path(root: &Path, agent: &str) -> PathBuf {
    root.join(MEMORY_DIR).join(format!("{agent}.jsonl"))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn is_session(root: &Path) -> bool {
    manifest_path(root).is_file()
}

fn read_manifest(root: &Path) -> Result<Option<Manifest>, PersistenceError> {
    let path = manifest_path(root);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&path)(e)),
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| PersistenceError::Corrupt {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let found = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(PersistenceError::SchemaMismatch {
            found,
            supported: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map(Some).map_err(|e| PersistenceError::Corrupt {
        path,
        message: e.to_string(),
    })
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), PersistenceError> {
    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(bytes).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

fn encode_memory(memory: &AgentMemory, generation: u64) -> Result<String, PersistenceError> {
    let header = MemoryHeader {
        schema_version: SCHEMA_VERSION,
        agent_name: memory.agent_name.clone(),
        generation,
        last_compaction_step: memory.last_compaction_step,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for step in &memory.steps {
        out.push_str(&serde_json::to_string(step).map_err(|e| PersistenceError::Corrupt {
            path: PathBuf::from(&memory.agent_name),
            message: e.to_string(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

fn read_header(path: &Path) -> Option<MemoryHeader> {
    let file = File::open(path).ok()?;
    let mut line = String::new();
    BufReader::new(file).read_line(&mut line).ok()?;
    serde_json::from_str(&line).ok()
}

fn decode_memory(path: &Path) -> Result<(MemoryHeader, AgentMemory), PersistenceError> {
    let corrupt = |message: String| PersistenceError::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| corrupt("empty memory file".into()))?
        .map_err(io_err(path))?;
    let header: MemoryHeader = serde_json::from_str(&header_line).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(PersistenceError::SchemaMismatch {
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let mut memory = AgentMemory::new(header.agent_name.clone());
    memory.last_compaction_step = header.last_compaction_step;
    for (n, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let step: MemoryStep = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 2)))?;
        memory.steps.push(step);
    }
    Ok((header, memory))
}

/// Saves `state`. Fails without touching the committed state if any write fails.
pub fn save_session(state: &SessionState, root: &Path) -> Result<(), PersistenceError> {
    save_session_with(state, root, &mut |_| Ok(()))
}

pub fn save_session_with(state: &SessionState, root: &Path, hook: SaveHook<'_>) -> Result<(), PersistenceError> {
    let committed = match read_manifest(root) {
        Ok(m) => m.map(|m| m.generation),
        Err(PersistenceError::Corrupt { .. }) => None,
        Err(e) => return Err(e),
    };
    let generation = committed.unwrap_or(0) + 1;
    let dir = root.join(MEMORY_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    for name in &state.roster {
        let empty = AgentMemory::new(name.clone());
        let memory = state.agents.get(name).unwrap_or(&empty);
        let current = memory_path(root, name);
        let tmp = with_suffix(&current, ".tmp");
        write_synced(&tmp, encode_memory(memory, generation)?.as_bytes())?;
        hook(&SavePhase::TempWritten(name.clone())).map_err(|_| PersistenceError::Aborted(SavePhase::TempWritten(name.clone())))?;
        // Only a file holding the committed generation may become `.prev`;
        // anything else is debris from an earlier interrupted save.
        if committed.is_some() && read_header(&current).map(|h| h.generation) == committed {
            fs::rename(&current, with_suffix(&current, ".prev")).map_err(io_err(&current))?;
            hook(&SavePhase::PreviousRotated(name.clone()))
                .map_err(|_| PersistenceError::Aborted(SavePhase::PreviousRotated(name.clone())))?;
        }
        fs::rename(&tmp, &current).map_err(io_err(&current))?;
        hook(&SavePhase::MemoryCommitted(name.clone()))
            .map_err(|_| PersistenceError::Aborted(SavePhase::MemoryCommitted(name.clone())))?;
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        generation,
        session_id: state.session_id.clone(),
        created_at: state.created_at,
        workspace_root: state.workspace_root.clone(),
        task: state.task.clone(),
        manager: state.manager.clone(),
        roster: state.roster.clone(),
        status: state.status,
        final_answer: state.final_answer.clone(),
        manager_state: state.manager_state.clone(),
        delegations: state.delegations.clone(),
        latest_score: state.latest_score.clone(),
        saved_at: Utc::now(),
    };
    let path = manifest_path(root);
    let tmp = with_suffix(&path, ".tmp");
    write_synced(&tmp, serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    hook(&SavePhase::ManifestTempWritten).map_err(|_| PersistenceError::Aborted(SavePhase::ManifestTempWritten))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(())
}

/// Loads the last committed session under `root`.
pub fn load_session(root: &Path) -> Result<SessionState, PersistenceError> {
    let manifest = read_manifest(root)?.ok_or_else(|| PersistenceError::NotASession {
        path: root.to_path_buf(),
    })?;
    let mut agents = BTreeMap::new();
    for name in &manifest.roster {
        let current = memory_path(root, name);
        let prev = with_suffix(&current, ".prev");
        let mut detail = String::new();
        let mut found = None;
        for candidate in [&current, &prev] {
            match read_header(candidate) {
                Some(h) if h.generation == manifest.generation => {
                    found = Some(decode_memory(candidate)?.1);
                    break;
                }
                Some(h) => detail.push_str(&format!("{} has generation {}; ", candidate.display(), h.generation)),
                None => detail.push_str(&format!("{} unreadable; ", candidate.display())),
            }
        }
        let memory = found.ok_or_else(|| PersistenceError::Torn {
            agent: name.clone(),
            generation: manifest.generation,
            detail: detail.trim_end_matches("; ").to_string(),
        })?;
        agents.insert(name.clone(), memory);
    }
    let mut state = SessionState {
        schema_version: manifest.schema_version,
        session_id: manifest.session_id,
        created_at: manifest.created_at,
        workspace_root: manifest.workspace_root,
        task: manifest.task,
        manager: manifest.manager,
        roster: manifest.roster,
        status: manifest.status,
        final_answer: manifest.final_answer,
        agents,
        manager_state: ManagerState {
            iteration_baseline: manifest.manager_state.iteration_baseline,
            ..ManagerState::default()
        },
        delegations: manifest.delegations,
        latest_score: manifest.latest_score,
    };
    state.derive_counters();
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::memory::TaskStep;
    use chrono::TimeZone;

    fn state(root: &Path) -> SessionState {
        let mut agents = BTreeMap::new();
        agents.insert("manager_agent".to_string(), AgentMemory::with_task("manager_agent", TaskStep::new("research")));
        let mut w = AgentMemory::with_task("writeup_agent", TaskStep::new("write"));
        w.push_task(TaskStep::intervention("shorter"));
        w.push_task(TaskStep::new("again"));
        agents.insert("writeup_agent".to_string(), w);
        agents.insert("reviewer_agent".to_string(), AgentMemory::new("reviewer_agent"));
        let mut s = SessionState {
            schema_version: SCHEMA_VERSION,
            session_id: "s1".into(),
            created_at: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
            workspace_root: root.to_path_buf(),
            task: "research".into(),
            manager: "manager_agent".into(),
            roster: vec!["manager_agent".into(), "writeup_agent".into(), "reviewer_agent".into()],
            status: SessionStatus::Running,
            final_answer: None,
            agents,
            manager_state: ManagerState::default(),
            delegations: vec![],
            latest_score: None,
        };
        s.derive_counters();
        s
    }

    #[test]
    fn round_trip_and_counters() {
        let dir = tempfile::TempDir::new().unwrap();
        let s = state(dir.path());
        assert_eq!(s.manager_state.delegation_count["writeup_agent"], 2);
        assert_eq!(s.manager_state.total_calls, 2);
        save_session(&s, dir.path()).unwrap();
        assert_eq!(load_session(dir.path()).unwrap(), s);
        save_session(&s, dir.path()).unwrap();
        assert_eq!(load_session(dir.path()).unwrap(), s);
    }

    #[test]
    fn missing_session_and_schema_mismatch() {
        let dir = tempfile::TempDir::new().unwrap();
        assert!(matches!(load_session(dir.path()), Err(PersistenceError::NotASession { .. })));
        save_session(&state(dir.path()), dir.path()).unwrap();
        let path = manifest_path(dir.path());
        let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&path, text).unwrap();
        let err = load_session(dir.path()).unwrap_err();
        assert!(matches!(err, PersistenceError::SchemaMismatch { found: 7, supported: 1 }));
        assert!(err.to_string().contains("7") && err.to_string().contains("version 1"));
    }

    #[test]
    fn every_crash_point_leaves_a_loadable_state() {
        let dir = tempfile::TempDir::new().unwrap();
        let old = state(dir.path());
        save_session(&old, dir.path()).unwrap();
        let mut new = old.clone();
        new.status = SessionStatus::Finished;
        new.agents.get_mut("reviewer_agent").unwrap().push_task(TaskStep::new("review"));
        new.derive_counters();

        let probe = tempfile::TempDir::new().unwrap();
        save_session(&old, probe.path()).unwrap();
        let mut phases = Vec::new();
        save_session_with(&new, probe.path(), &mut |p| {
            phases.push(p.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(phases.len(), 3 * 3 + 1);
        // repeated crashes in one directory leave debris that later saves ignore
        for crash_at in [4, 2, 7] {
            let mut seen = 0;
            let res = save_session_with(&new, dir.path(), &mut |_| {
                seen += 1;
                if seen > crash_at { Err(()) } else { Ok(()) }
            });
            assert!(res.is_err());
            assert_eq!(load_session(dir.path()).unwrap(), old, "crash after phase {crash_at}");
        }
        save_session(&new, dir.path()).unwrap();
        assert_eq!(load_session(dir.path()).unwrap(), new);

        for crash_at in 0..phases.len() {
            let fresh = tempfile::TempDir::new().unwrap();
            let mut old = old.clone();
            old.workspace_root = fresh.path().to_path_buf();
            let mut new = new.clone();
            new.workspace_root = fresh.path().to_path_buf();
            save_session(&old, fresh.path()).unwrap();
            let mut seen = 0;
            let res = save_session_with(&new, fresh.path(), &mut |_| {
                seen += 1;
                if seen > crash_at { Err(()) } else { Ok(()) }
            });
            assert!(res.is_err(), "phase {crash_at} was not reached");
            assert_eq!(load_session(fresh.path()).unwrap(), old, "crash after phase {crash_at}");
            save_session(&new, fresh.path()).unwrap();
            assert_eq!(load_session(fresh.path()).unwrap(), new);
        }
        assert_eq!(load_session(dir.path()).unwrap(), new);
    }
}
