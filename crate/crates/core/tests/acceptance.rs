//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report reads top to bottom.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use common::*;
use labcrew::clock::TickingClock;
use labcrew::compaction::{estimate_tokens, read_backup, BackupLine, CompactionMonitor, CompactionPolicy};
use labcrew::gateway::{read_log, LmGateway, ScriptEntry, ScriptedBackend};
use labcrew::intervention::{Guidance, GuidanceKind, InterventionChannel, InterventionMonitor, QueueGuidance, SignalSource};
use labcrew::orchestration::{
    reference_roster, DelegationRecord, Session, SessionConfig, SessionOutcome, Verdict, MANAGER,
};
use labcrew::prompt::{render_system_prompt, render_tool_listing, section_span, Section};
use labcrew::runtime::memory::{ActionStep, AgentMemory, MemoryStep, Priority, TaskStep};
use labcrew::runtime::tool::{ParamSpec, ParamType, Tool, ToolCall, ToolContext, ToolError, ToolSpec};
use labcrew::runtime::{run_with_memory, RunOutcome, RuntimeContext, StepCallback, StepContext};
use labcrew::workspace::tools::workspace_tools;
use labcrew::workspace::{WorkspaceHandle, WorkspacePolicy};

const TRACE_TIME_LIMIT: Duration = Duration::from_secs(10);
const CONTEXT_LIMIT: u64 = 128_000;
const TOKEN_CASES: usize = 1_000;
const SANDBOX_CASES: usize = 12_000;
const SPLICE_CASES: usize = 1_000;
const PAPER_PDF: &str = "paper_workspace/final_paper.pdf";

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 10] = [
        ("trace replay", trace_replay),
        ("compaction suite", compaction_suite),
        ("token-estimate formula", token_formula),
        ("sandbox fuzz", sandbox_fuzz),
        ("splice property", splice_property),
        ("persistence equivalence", persistence_equivalence),
        ("intervention timing", intervention_timing),
        ("guardrails", guardrails),
        ("call-log ordering", call_log_ordering),
        ("prompt goldens", prompt_goldens),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn targets(records: &[DelegationRecord]) -> Vec<&str> {
    records.iter().map(|r| r.target.as_str()).collect()
}

fn score_of(record: &DelegationRecord) -> Option<u8> {
    record.score.as_ref().map(|s| s.overall)
}

fn trace_replay() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let (session, outcome) = run_trace(dir.path());
    let elapsed = started.elapsed();
    let records = session.hub().records();

    ensure!(targets(&records) == TRACE_SEQUENCE, "sequence {:?}", targets(&records));
    ensure!(records[2].verdict == Verdict::Warning, "delegation 3 verdict {:?}", records[2].verdict);
    ensure!(records[3].verdict == Verdict::Failed, "delegation 4 verdict {:?}", records[3].verdict);
    ensure!(records[3].report.contains("TASK FAILED"), "delegation 4 report lacks TASK FAILED");
    ensure!(records[4].verdict == Verdict::Ok, "corrective re-run verdict {:?}", records[4].verdict);
    ensure!(score_of(&records[6]) == Some(5), "first review score {:?}", score_of(&records[6]));
    ensure!(score_of(&records[10]) == Some(7), "second review score {:?}", score_of(&records[10]));
    let first_pass = records.iter().position(|r| score_of(r).is_some_and(|s| s >= 6));
    ensure!(first_pass == Some(10), "first passing review at {first_pass:?}");
    let SessionOutcome::Finished(answer) = outcome else {
        return Err(format!("outcome {outcome:?}"));
    };
    ensure!(answer.contains(PAPER_PDF), "final message: {answer}");
    ensure!(dir.path().join(PAPER_PDF).is_file(), "{PAPER_PDF} was not produced");
    ensure!(elapsed < TRACE_TIME_LIMIT, "took {elapsed:?}");
    Ok(format!("11 delegations match, scores 5 then 7, finished in {} ms", elapsed.as_millis()))
}

/// Returns `size` characters of filler text.
struct Emit(ToolSpec);

impl Emit {
    fn new() -> Self {
        Self(ToolSpec::new(
            "emit",
            "Produce filler text of the requested size.",
            vec![ParamSpec::required("size", ParamType::Integer, "Characters to produce.")],
        ))
    }
}

impl Tool for Emit {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let size = args["size"].as_u64().unwrap_or(0) as usize;
        let unit = "lorem ipsum dolor sit amet ";
        Ok(unit.chars().cycle().take(size).collect())
    }
}

/// Snapshots what every step looked like as it completed, plus memory afterwards.
#[derive(Default)]
struct Tape {
    completed: Mutex<Vec<ActionStep>>,
    after: Mutex<Vec<(usize, usize, AgentMemory)>>,
    monitor: Mutex<Option<Arc<CompactionMonitor>>>,
}

impl StepCallback for Tape {
    fn on_step(&self, ctx: &mut StepContext<'_>) -> Result<(), String> {
        self.completed.lock().unwrap().push(ctx.completed.clone());
        let fired = self.monitor.lock().unwrap().as_ref().map_or(0, |m| m.records().len());
        self.after.lock().unwrap().push((ctx.completed.index, fired, ctx.memory.clone()));
        Ok(())
    }
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

fn compaction_suite() -> Result<String, String> {
    let sizes = [1_000, 1_000, 1_000, 1_000, 1_000, 1_000, 400_000, 1_000, 1_000, 1_000];
    let mut entries: Vec<ScriptEntry> = sizes
        .iter()
        .enumerate()
        .map(|(i, size)| ScriptEntry::at_step("solo_agent", i, act("emit", json!({ "size": size }))))
        .collect();
    entries.push(ScriptEntry::at_step("solo_agent", sizes.len(), act("final_answer", json!({ "answer": "done" }))));

    let dir = tempfile::tempdir().unwrap();
    let ws = WorkspaceHandle::create(dir.path(), &["solo_agent"]).unwrap();
    let gateway = Arc::new(LmGateway::new(Arc::new(ScriptedBackend::new(entries).unwrap())));
    let policy = CompactionPolicy::default();
    let monitor = Arc::new(CompactionMonitor::new(policy.clone()));
    let tape = Arc::new(Tape::default());
    *tape.monitor.lock().unwrap() = Some(monitor.clone());
    let mut ctx = RuntimeContext::new(ws.clone(), gateway, Arc::new(TickingClock::fixed()))
        .with_callback(monitor.clone())
        .with_callback(tape.clone());
    ctx.observation_cap = 1 << 20;

    let spec = solo_spec(vec![Emit::new().0.clone()]);
    assert_eq!(spec.model.context_limit_tokens, CONTEXT_LIMIT);
    let tools = workspace_tools().with(Arc::new(Emit::new()));
    let mut memory = AgentMemory::with_task("solo_agent", TaskStep::new("Fill the context window."));
    let outcome = run_with_memory(&spec, &mut memory, &ctx, &tools).map_err(|e| e.to_string())?;
    ensure!(outcome == RunOutcome::FinalAnswer("done".into()), "outcome {outcome:?}");

    let records = monitor.records();
    let after = tape.after.lock().unwrap().clone();
    let mut fired_at = Vec::new();
    let mut seen = 0;
    for (index, count, _) in &after {
        if *count > seen {
            fired_at.push(*index);
            seen = *count;
        }
    }
    ensure!(fired_at == vec![6, 9], "compaction fired after steps {fired_at:?}");

    let threshold = (policy.threshold_fraction * CONTEXT_LIMIT as f64) as u64;
    let listed = spec.listed_tools();
    let before_6 = estimate_tokens(&after[5].2, &listed, &policy);
    ensure!(before_6 < threshold, "estimate before the large step already {before_6}");
    ensure!(records[0].tokens_before >= threshold, "trigger estimate {} < {threshold}", records[0].tokens_before);

    // Right after the first compaction: one summary plus the last 3 meaningful steps.
    let first = &after[6].2;
    let actions: Vec<&ActionStep> = first.actions().collect();
    ensure!(actions.len() == 4 && actions[0].compacted, "rebuilt memory has {} actions", actions.len());
    let kept: Vec<usize> = actions[1..].iter().map(|a| a.index).collect();
    ensure!(kept == vec![4, 5, 6], "kept steps {kept:?}");

    // Pressure stays above the threshold, yet steps 7 and 8 must not compact again.
    for (index, _, mem) in &after[7..9] {
        let est = estimate_tokens(mem, &listed, &policy);
        ensure!(est >= threshold, "step {index} estimate {est} fell below threshold; interval check is vacuous");
    }

    let completed = tape.completed.lock().unwrap().clone();
    for (record, removed) in records.iter().zip([4usize, 3]) {
        let lines = line_count(&record.backup_file);
        ensure!(lines == removed, "backup {} has {lines} lines, expected {removed}", record.backup_file.display());
    }
    for (at, rec_count) in [(6usize, 1usize), (9, 2)] {
        let mem = &after[at].2;
        let mut union: Vec<BackupLine> = records[..rec_count]
            .iter()
            .flat_map(|r| read_backup(&r.backup_file).unwrap())
            .map(|s| BackupLine::from(&s))
            .collect();
        union.extend(mem.actions().filter(|a| !a.compacted).map(BackupLine::from));
        union.sort_by_key(|l| l.index);
        let original: Vec<BackupLine> = completed[..=at].iter().map(BackupLine::from).collect();
        ensure!(union == original, "backups plus live steps differ from the original steps after step {at}");
    }
    let backup_dir = dir.path().join("memory_backup");
    let files = fs::read_dir(&backup_dir).unwrap().count();
    ensure!(files == 2, "{files} backup files");
    Ok(format!(
        "fired after steps 6 and 9 at {} tokens (threshold {threshold}); backups 4 and 3 lines; union exact",
        records[0].tokens_before
    ))
}

fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
    const POOL: &[char] = &[
        'a', 'b', 'z', 'Q', '0', '9', ' ', ' ', '\n', '\t', '"', '\\', '{', '}', ':', ',', 'é', 'ß', '中', '文', '😀', '∑',
        '\u{200b}', '\r',
    ];
    let len = rng.random_range(0..=max);
    (0..len).map(|_| POOL[rng.random_range(0..POOL.len())]).collect()
}

fn random_memory(rng: &mut ChaCha8Rng) -> AgentMemory {
    let mut memory = AgentMemory::with_task("random_agent", TaskStep::new(random_text(rng, 200)));
    let t0 = chrono::DateTime::from_timestamp(1_700_000_000, 0).unwrap();
    for index in 0..rng.random_range(0..12) {
        if rng.random_bool(0.15) {
            memory.push_task(TaskStep::intervention(random_text(rng, 80)));
        }
        let calls = (0..rng.random_range(0..3))
            .map(|_| ToolCall::new("see_file", json!({ "filename": random_text(rng, 20), "n": rng.random_range(0..100) })))
            .collect();
        memory.push_action(ActionStep {
            index,
            reasoning: random_text(rng, 300),
            tool_calls: calls,
            observation: random_text(rng, 600),
            error: None,
            started_at: t0 + chrono::Duration::seconds(index as i64),
            ended_at: t0 + chrono::Duration::seconds(index as i64 + 1),
            token_usage: None,
            compacted: false,
            summary: None,
        });
    }
    memory
}

fn tokens_oracle(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

fn token_formula() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70c3);
    let pool: Vec<ToolSpec> = reference_roster(&fixtures()).unwrap().tools().specs();
    let policy = CompactionPolicy::default();
    let mut nonascii = 0;
    for case in 0..TOKEN_CASES {
        let memory = random_memory(&mut rng);
        let tools: Vec<ToolSpec> = pool.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
        let serialized = memory.serialize();
        if serialized.len() != serialized.chars().count() {
            nonascii += 1;
        }
        let listing = if tools.is_empty() {
            0
        } else {
            tokens_oracle(render_tool_listing(&tools).unwrap().chars().count())
        };
        let expected = tokens_oracle(serialized.chars().count()) + listing;
        let got = estimate_tokens(&memory, &tools, &policy);
        ensure!(got == expected, "case {case}: estimate {got}, oracle {expected}");
    }
    Ok(format!("{TOKEN_CASES} memories exact ({nonascii} with multi-byte text)"))
}

struct SandboxFixture {
    base: PathBuf,
    root: PathBuf,
    outside: PathBuf,
    secret: String,
}

impl SandboxFixture {
    fn new(base: &Path) -> Self {
        let base = fs::canonicalize(base).unwrap();
        let root = base.join("root");
        let outside = base.join("outside");
        fs::create_dir_all(outside.join("od")).unwrap();
        let secret = format!("SECRET-{}", uuid::Uuid::new_v4());
        fs::write(outside.join("secret.txt"), &secret).unwrap();
        fs::write(outside.join("od/deep.txt"), &secret).unwrap();
        let fixture = Self {
            base,
            root,
            outside,
            secret,
        };
        fixture.restore();
        fixture
    }

    /// Re-creates the in-root decoys that a fuzzed delete may remove.
    #[cfg(unix)]
    fn restore(&self) {
        use std::os::unix::fs::symlink;
        fs::create_dir_all(self.root.join("inner")).unwrap();
        let ok = self.root.join("inner/ok.txt");
        if !ok.exists() {
            fs::write(ok, "inside\n").unwrap();
        }
        let links: [(&str, PathBuf); 5] = [
            ("link_dir", PathBuf::from("../outside")),
            ("link_file", PathBuf::from("../outside/secret.txt")),
            ("abs_link", self.outside.clone()),
            ("chain", PathBuf::from("link_dir")),
            ("inner/up", PathBuf::from("../../outside/od")),
        ];
        for (name, target) in links {
            let path = self.root.join(name);
            if fs::symlink_metadata(&path).is_err() {
                symlink(target, path).unwrap();
            }
        }
    }

    #[cfg(not(unix))]
    fn restore(&self) {
        fs::create_dir_all(self.root.join("inner")).unwrap();
        let _ = fs::write(self.root.join("inner/ok.txt"), "inside\n");
    }

    /// Every path and file body outside the root.
    fn outside_snapshot(&self) -> BTreeMap<PathBuf, Option<Vec<u8>>> {
        walkdir::WalkDir::new(&self.base)
            .follow_links(false)
            .into_iter()
            .filter_map(Result::ok)
            .filter(|e| !e.path().starts_with(&self.root))
            .map(|e| {
                let body = e.file_type().is_file().then(|| fs::read(e.path()).unwrap());
                (e.path().to_path_buf(), body)
            })
            .collect()
    }
}

fn adversarial_path(rng: &mut ChaCha8Rng, fx: &SandboxFixture) -> String {
    let outside = fx.outside.to_string_lossy().into_owned();
    let root = fx.root.to_string_lossy().into_owned();
    let prefixes = [
        String::new(),
        String::new(),
        "/".into(),
        "./".into(),
        "../".into(),
        "../../".into(),
        format!("{outside}/"),
        format!("{root}/"),
        format!("{root}/../"),
        "//".into(),
        "~/".into(),
        "C:\\".into(),
        "\\\\?\\".into(),
        "/etc/".into(),
        "/proc/self/".into(),
    ];
    let segments = [
        "..", "..", ".", "", "link_dir", "link_file", "abs_link", "chain", "inner", "up", "ok.txt", "secret.txt",
        "deep.txt", "od", "new.txt", "passwd", "%2e%2e", "..\\..", "...", ". .", "..%2f", "\u{0}", "root", "outside",
        "fuzz.md",
    ];
    let seps = ["/", "/", "/", "//", "\\", "/./"];
    let mut path = prefixes[rng.random_range(0..prefixes.len())].clone();
    for i in 0..rng.random_range(1..=6) {
        if i > 0 {
            path.push_str(seps[rng.random_range(0..seps.len())]);
        }
        path.push_str(segments[rng.random_range(0..segments.len())]);
    }
    if rng.random_bool(0.1) {
        path.push('/');
    }
    path
}

fn sandbox_fuzz() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    let fx = SandboxFixture::new(tmp.path());
    let ws = WorkspaceHandle::create(&fx.root, &[]).unwrap();
    let canon_root = fs::canonicalize(&fx.root).unwrap();
    let policy = WorkspacePolicy::manager("fuzz_agent");
    let before = fx.outside_snapshot();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a9d);
    let mut distinct = BTreeSet::new();
    let (mut accepted, mut rejected) = (0usize, 0usize);

    for case in 0..SANDBOX_CASES {
        let p = adversarial_path(&mut rng, &fx);
        distinct.insert(p.clone());
        match ws.validate_path(&p) {
            Ok(resolved) => {
                accepted += 1;
                let real = fs::canonicalize(&resolved).unwrap_or(resolved.clone());
                ensure!(
                    resolved.starts_with(&canon_root) && real.starts_with(&canon_root),
                    "case {case}: '{p}' resolved to {}",
                    real.display()
                );
            }
            Err(_) => rejected += 1,
        }
        if let Ok(text) = ws.see_file(&policy, &p) {
            ensure!(!text.contains(&fx.secret), "case {case}: see_file('{p}') read outside data");
        }
        if ws.list_dir(&policy, &p).is_ok() {
            ensure!(ws.validate_path(&p).is_ok(), "case {case}: list_dir('{p}') listed an unvalidated directory");
        }
        if case % 25 == 0 {
            if let Ok(hits) = ws.search_keyword(&policy, &p, &fx.secret, 0) {
                ensure!(hits.is_empty(), "case {case}: search_keyword('{p}') matched outside data");
            }
        }
        let _ = ws.create_file_with_content(&policy, &p, "fuzz\n");
        let _ = ws.modify_file(&policy, &p, 1, 1, "patched");
        let _ = ws.delete_file_or_folder(&policy, &p, false);
        fx.restore();
        if case % 1000 == 999 {
            ensure!(fx.outside_snapshot() == before, "outside tree changed by case {case} ('{p}')");
        }
    }
    ensure!(fx.outside_snapshot() == before, "outside tree changed");
    ensure!(distinct.len() >= 10_000, "only {} distinct paths", distinct.len());
    Ok(format!(
        "{SANDBOX_CASES} paths ({} distinct), {accepted} resolved inside, {rejected} rejected, outside tree untouched",
        distinct.len()
    ))
}

/// Files as `\n`-separated lines plus a trailing-newline flag.
fn splice_oracle(content: &str, start: usize, end: usize, new_content: &str) -> String {
    let trailing = content.ends_with('\n');
    let body = content.strip_suffix('\n').unwrap_or(content);
    let lines: Vec<&str> = body.split('\n').collect();
    let replacement: Vec<&str> = if new_content.is_empty() {
        Vec::new()
    } else {
        new_content.strip_suffix('\n').unwrap_or(new_content).split('\n').collect()
    };
    let mut out: Vec<&str> = Vec::new();
    out.extend_from_slice(&lines[..start - 1]);
    out.extend(replacement);
    out.extend_from_slice(&lines[end..]);
    let mut text = out.join("\n");
    if trailing && !out.is_empty() {
        text.push('\n');
    }
    text
}

fn random_line(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[char] = &['a', 'x', ' ', '\t', '\r', '#', '}', 'é', '中', '😀', '-', '0'];
    let indent = " ".repeat(rng.random_range(0..5));
    let len = rng.random_range(0..12);
    indent + &(0..len).map(|_| POOL[rng.random_range(0..POOL.len())]).collect::<String>()
}

fn splice_property() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let ws = WorkspaceHandle::create(dir.path(), &[]).unwrap();
    let policy = WorkspacePolicy::member("editor_agent");
    let mut rng = ChaCha8Rng::seed_from_u64(0x511c);
    let mut deletions = 0;
    for case in 0..SPLICE_CASES {
        let n = rng.random_range(1..=10);
        let lines: Vec<String> = (0..n).map(|_| random_line(&mut rng)).collect();
        let mut content = lines.join("\n");
        if rng.random_bool(0.5) {
            content.push('\n');
        }
        if content.is_empty() {
            content.push('x');
        }
        let line_count = content.strip_suffix('\n').unwrap_or(&content).split('\n').count();
        let start = rng.random_range(1..=line_count);
        let end = rng.random_range(start..=line_count);
        let new_content = match rng.random_range(0..4) {
            0 => String::new(),
            1 => random_line(&mut rng),
            2 => format!("{}\n", random_line(&mut rng)),
            _ => (0..rng.random_range(1..4)).map(|_| random_line(&mut rng)).collect::<Vec<_>>().join("\n"),
        };
        if new_content.is_empty() {
            deletions += 1;
        }
        let name = format!("f{case}.txt");
        fs::write(dir.path().join(&name), &content).unwrap();
        ws.modify_file(&policy, &name, start as i64, end as i64, &new_content)
            .map_err(|e| format!("case {case}: {e}"))?;
        let got = fs::read(dir.path().join(&name)).unwrap();
        let want = splice_oracle(&content, start, end, &new_content);
        ensure!(
            got == want.as_bytes(),
            "case {case}: {content:?} [{start},{end}] <- {new_content:?}: got {:?}, oracle {want:?}",
            String::from_utf8_lossy(&got)
        );
    }
    Ok(format!("{SPLICE_CASES} triples byte-identical ({deletions} deletions)"))
}

fn persistence_equivalence() -> Result<String, String> {
    let straight = tempfile::tempdir().unwrap();
    let (reference, reference_outcome) = run_trace(straight.path());

    let split = tempfile::tempdir().unwrap();
    let mut config = trace_config(&trace_script(), 0);
    config.pause_after = Some(1);
    let mut session = Session::start(config, split.path(), TRACE_TASK).map_err(|e| e.to_string())?;
    let mut pauses = 0;
    let outcome = loop {
        let outcome = session.run().map_err(|e| e.to_string())?;
        let SessionOutcome::Paused(_) = outcome else { break outcome };
        pauses += 1;
        ensure!(pauses <= 20, "did not finish after {pauses} pauses");
        let n = session.hub().records().len();
        drop(session);
        let mut config = trace_config(&trace_script(), 100_000 * pauses);
        config.pause_after = Some(1);
        session = Session::resume(config, split.path()).map_err(|e| e.to_string())?;
        ensure!(session.hub().records().len() == n, "reload lost delegations");
    };
    ensure!(pauses as usize == TRACE_SEQUENCE.len(), "saved and reloaded {pauses} times");
    ensure!(outcome == reference_outcome, "final answers differ: {outcome:?} vs {reference_outcome:?}");
    ensure!(session.hub().records() == reference.hub().records(), "delegation logs differ");
    Ok(format!("{pauses} save/load cycles; delegation log and final answer identical"))
}

/// Raises the signal from inside step `k`.
struct Work {
    spec: ToolSpec,
    channel: Arc<InterventionChannel>,
    at: Option<usize>,
    calls: Mutex<usize>,
}

impl Tool for Work {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call(&self, _args: &Map<String, Value>, _ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let mut calls = self.calls.lock().unwrap();
        if Some(*calls) == self.at {
            self.channel.raise(SignalSource::Api, chrono::Utc::now());
        }
        *calls += 1;
        Ok(format!("unit {} done", *calls))
    }
}

const STEPS: usize = 10;
const GUIDANCE: &str = "Report intermediate numbers in a table.";

/// Runs a 10-step agent. `at`: step during which a signal is raised;
/// `monitor`: whether intervention is enabled at all.
fn ten_steps(at: Option<usize>, monitor: bool) -> (Vec<labcrew::gateway::LmRequest>, AgentMemory) {
    let spec_tool = ToolSpec::new("work", "Do one unit of work.", vec![]);
    let mut entries: Vec<ScriptEntry> = (0..STEPS - 1)
        .map(|i| ScriptEntry::at_step("solo_agent", i, act("work", json!({}))))
        .collect();
    entries.push(ScriptEntry::at_step("solo_agent", STEPS - 1, act("final_answer", json!({ "answer": "ten" }))));
    let backend = Arc::new(Recording::new(ScriptedBackend::new(entries).unwrap()));
    let dir = tempfile::tempdir().unwrap();
    let ws = WorkspaceHandle::create(dir.path(), &["solo_agent"]).unwrap();
    let channel = Arc::new(InterventionChannel::new());
    let queue = Arc::new(QueueGuidance::new());
    queue.submit(Guidance::new(GUIDANCE, GuidanceKind::TaskRefinement));
    let clock = Arc::new(TickingClock::fixed());
    let mut ctx = RuntimeContext::new(ws, Arc::new(LmGateway::new(backend.clone())), clock);
    if monitor {
        ctx.register_callback(Arc::new(InterventionMonitor::new(channel.clone(), queue)));
    }
    let tools = workspace_tools().with(Arc::new(Work {
        spec: spec_tool.clone(),
        channel,
        at,
        calls: Mutex::new(0),
    }));
    let spec = solo_spec(vec![spec_tool]);
    let mut memory = AgentMemory::with_task("solo_agent", TaskStep::new("Do ten units of work."));
    let outcome = run_with_memory(&spec, &mut memory, &ctx, &tools).unwrap();
    assert_eq!(outcome, RunOutcome::FinalAnswer("ten".into()));
    (backend.requests(), memory)
}

fn intervention_timing() -> Result<String, String> {
    for k in 0..STEPS - 1 {
        let (requests, memory) = ten_steps(Some(k), true);
        ensure!(requests.len() == STEPS, "k={k}: {} requests", requests.len());
        for (i, req) in requests.iter().enumerate() {
            let has = req.serialized_memory.contains(GUIDANCE);
            ensure!(has == (i > k), "k={k}: request {i} guidance present = {has}");
        }
        let position = memory
            .steps
            .iter()
            .position(|s| matches!(s, MemoryStep::Task(t) if t.priority == Priority::Intervention))
            .ok_or(format!("k={k}: no guidance task"))?;
        let MemoryStep::Action(prev) = &memory.steps[position - 1] else {
            return Err(format!("k={k}: guidance not preceded by an action"));
        };
        let MemoryStep::Action(next) = &memory.steps[position + 1] else {
            return Err(format!("k={k}: guidance not followed by an action"));
        };
        ensure!(prev.index == k && next.index == k + 1, "k={k}: guidance sits between {} and {}", prev.index, next.index);
    }
    let (req_on, mem_on) = ten_steps(None, true);
    let (req_off, mem_off) = ten_steps(None, false);
    let on = serde_json::to_vec(&mem_on).unwrap();
    let off = serde_json::to_vec(&mem_off).unwrap();
    ensure!(on == off, "memories differ with intervention enabled but idle");
    ensure!(req_on == req_off, "model requests differ with intervention enabled but idle");
    Ok(format!("k = 0..{} each injected before request k+1; idle run bit-identical ({} bytes)", STEPS - 2, on.len()))
}

fn guardrails() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(Recording::new(ScriptedBackend::new(hostile_script()).unwrap()));
    let mut config = SessionConfig::new(reference_roster(&fixtures()).unwrap(), backend.clone());
    config.clock = clock_at(0);
    let mut session = Session::start(config, dir.path(), "Exercise the delegation limits.").map_err(|e| e.to_string())?;
    let outcome = session.run().map_err(|e| e.to_string())?;
    let records = session.hub().records();
    let mut per_agent: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *per_agent.entry(r.target.as_str()).or_default() += 1;
    }
    ensure!(records.len() == 12, "{} accepted delegations", records.len());
    ensure!(per_agent["ideation_agent"] == 3, "ideation accepted {} times", per_agent["ideation_agent"]);
    ensure!(per_agent.values().all(|&n| n <= 3), "per-agent counts {per_agent:?}");
    ensure!(matches!(outcome, SessionOutcome::BudgetExhausted(_)), "outcome {outcome:?}");

    let observations: Vec<String> = session.manager_memory().actions().map(|a| a.observation.clone()).collect();
    ensure!(observations.len() == 14, "manager took {} steps", observations.len());
    ensure!(
        observations[3].contains("Maximum 3 iterations per agent reached for ideation_agent"),
        "fourth ideation call not refused: {}",
        observations[3]
    );
    ensure!(
        observations[13].contains("Maximum 12 total agent calls reached"),
        "thirteenth accepted call not refused: {}",
        observations[13]
    );
    let calls_by: BTreeMap<String, usize> = backend.requests().iter().fold(BTreeMap::new(), |mut m, r| {
        *m.entry(r.agent_name.clone()).or_default() += 1;
        m
    });
    ensure!(calls_by["ideation_agent"] == 3, "ideation agent ran {} times", calls_by["ideation_agent"]);
    ensure!(calls_by["reviewer_agent"] == 1, "reviewer ran {} times", calls_by["reviewer_agent"]);
    Ok(format!("cut off at 3 per agent and 12 total; counts {per_agent:?}"))
}

fn call_log_ordering() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let (session, _) = run_trace(dir.path());
    let log = read_log(&dir.path().join("llm_calls.jsonl")).map_err(|e| e.to_string())?;
    ensure!(!log.is_empty(), "empty call log");
    ensure!(log.windows(2).all(|w| w[1].sequence > w[0].sequence), "sequence numbers not strictly increasing");
    ensure!(log.windows(2).all(|w| w[1].timestamp >= w[0].timestamp), "timestamps go backwards");

    // Maximal runs of sub-agent calls between manager calls, one per delegation.
    let mut runs: Vec<(String, usize)> = Vec::new();
    let mut previous_manager = false;
    for entry in &log {
        if entry.agent_name == MANAGER {
            previous_manager = true;
            continue;
        }
        match runs.last_mut() {
            Some((agent, n)) if !previous_manager => {
                ensure!(*agent == entry.agent_name, "call {} by {} inside a {agent} delegation", entry.sequence, entry.agent_name);
                *n += 1;
            }
            _ => runs.push((entry.agent_name.clone(), 1)),
        }
        previous_manager = false;
    }
    let records = session.hub().records();
    let attributed: Vec<&str> = runs.iter().map(|(a, _)| a.as_str()).collect();
    ensure!(attributed == targets(&records), "log attribution {attributed:?}");
    let manager_calls = log.iter().filter(|e| e.agent_name == MANAGER).count();
    Ok(format!("{} calls strictly ordered; {manager_calls} manager calls and 11 delegation blocks attributed", log.len()))
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn prompt_goldens() -> Result<String, String> {
    let roster = reference_roster(&fixtures()).unwrap();
    let update = std::env::var_os("LABCREW_UPDATE_GOLDENS").is_some();
    let mut guidelines = BTreeSet::new();
    let mut managed_in = Vec::new();
    for spec in roster.agents() {
        let prompt = render_system_prompt(spec).map_err(|e| e.to_string())?;
        let path = golden_dir().join(format!("{}.txt", spec.name));
        if update {
            fs::create_dir_all(golden_dir()).unwrap();
            fs::write(&path, &prompt).unwrap();
        }
        let golden = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure!(golden == prompt, "{} differs from {}", spec.name, path.display());
        guidelines.insert(section_span(&prompt, Section::WorkspaceGuidelines).map(str::to_string));
        if section_span(&prompt, Section::ManagedAgents).is_some() {
            managed_in.push(spec.name.clone());
        }
    }
    ensure!(roster.agents().len() == 6, "{} presets", roster.agents().len());
    ensure!(guidelines.len() == 1 && !guidelines.contains(&None), "workspace guidelines differ between prompts");
    ensure!(managed_in == [MANAGER], "managed-agents section in {managed_in:?}");
    Ok("6 prompts match goldens; one guidelines span; managed section only for the manager".into())
}
