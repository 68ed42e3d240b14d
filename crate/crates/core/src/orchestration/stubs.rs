//! Fixture-backed stand-ins for the research tools.
//!
//! Text-returning tools read canned answers from `stubs.toml`; the tools the
//! workflow depends on for files (experiments, linking, LaTeX) write real
//! workspace content so later agents can inspect it. Fixture layout:
//!
//! ```text
//! fixtures/
//! ├── stubs.toml              [text], [vlm], [latex_sections]
//! ├── experiment/             copied into every experiment run
//! └── templates/writeup/      style files for copy_latex_templates
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;

use serde::Deserialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use uuid::Uuid;
use walkdir::WalkDir;

use crate::runtime::tool::{Args, ParamSpec, ParamType, Tool, ToolContext, ToolError, ToolRegistry, ToolSpec};
use crate::workspace::WorkspaceError;

pub const STUB_TOOL_NAMES: [&str; 15] = [
    "web_search",
    "fetch_arxiv_papers",
    "generate_idea",
    "refine_idea",
    "vlm_document_analysis",
    "idea_standardization",
    "run_experiment",
    "experiment_linker",
    "citation_search",
    "copy_latex_templates",
    "latex_generator",
    "latex_reflection",
    "latex_syntax_checker",
    "latex_compiler",
    "latex_content_verification",
];

const FIXTURE_FILE: &str = "stubs.toml";
const EXPERIMENT_FIXTURE: &str = "experiment";
const TEMPLATE_FIXTURE: &str = "templates/writeup";
const RUNS_DIR: &str = "experiment_runs";
const PAPER_DIR: &str = "paper_workspace";
const DATA_LINK: &str = "experiment_data";
const SUMMARY_DIR: &str = "logs/0-run";
/// Summary files and the first stage that produces each.
const STAGE_SUMMARIES: [(&str, i64); 3] = [
    ("baseline_summary.json", 1),
    ("research_summary.json", 3),
    ("ablation_summary.json", 4),
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureFile {
    #[serde(default)]
    text: BTreeMap<String, String>,
    #[serde(default)]
    vlm: BTreeMap<String, String>,
    #[serde(default)]
    latex_sections: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct StubFixtures {
    dir: PathBuf,
    text: BTreeMap<String, String>,
    vlm: BTreeMap<String, String>,
    latex_sections: BTreeMap<String, String>,
}

impl StubFixtures {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ToolError> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(FIXTURE_FILE);
        let raw = fs::read_to_string(&path)
            .map_err(|e| ToolError::FixtureMissing(format!("{}: {e}", path.display())))?;
        let file: FixtureFile = toml::from_str(&raw)
            .map_err(|e| ToolError::Failed(format!("invalid fixture file {}: {e}", path.display())))?;
        Ok(Self {
            dir,
            text: file.text,
            vlm: file.vlm,
            latex_sections: file.latex_sections,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn text(&self, tool: &str) -> Result<&str, ToolError> {
        self.text
            .get(tool)
            .map(String::as_str)
            .ok_or_else(|| ToolError::FixtureMissing(format!("{FIXTURE_FILE} has no [text].{tool} entry")))
    }

    fn vlm(&self, focus: Option<&str>) -> Result<&str, ToolError> {
        focus
            .and_then(|f| self.vlm.get(f))
            .or_else(|| self.vlm.get("default"))
            .map(String::as_str)
            .ok_or_else(|| ToolError::FixtureMissing(format!("{FIXTURE_FILE} has no [vlm].default entry")))
    }

    fn section(&self, name: &str) -> Result<&str, ToolError> {
        self.latex_sections
            .get(name)
            .or_else(|| self.latex_sections.get("default"))
            .map(String::as_str)
            .ok_or_else(|| ToolError::FixtureMissing(format!("{FIXTURE_FILE} has no [latex_sections].default entry")))
    }

    fn subdir(&self, relative: &str) -> Result<PathBuf, ToolError> {
        let path = self.dir.join(relative);
        if path.is_dir() {
            Ok(path)
        } else {
            Err(ToolError::FixtureMissing(format!("directory {}", path.display())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    WebSearch,
    FetchArxiv,
    GenerateIdea,
    RefineIdea,
    Vlm,
    IdeaStandardization,
    RunExperiment,
    ExperimentLinker,
    CitationSearch,
    CopyTemplates,
    LatexGenerator,
    LatexReflection,
    LatexSyntax,
    LatexCompiler,
    LatexVerification,
}

struct StubTool {
    spec: ToolSpec,
    kind: Kind,
    fixtures: Arc<StubFixtures>,
}

fn spec_for(kind: Kind) -> ToolSpec {
    use ParamType::{Integer, String as Str};
    let req = ParamSpec::required;
    let opt = ParamSpec::nullable;
    match kind {
        Kind::WebSearch => ToolSpec::new(
            "web_search",
            "Search the web for background material and return the top results as text.",
            vec![req("query", Str, "Search query.")],
        ),
        Kind::FetchArxiv => ToolSpec::new(
            "fetch_arxiv_papers",
            "Search arXiv and return titles, authors and abstracts of matching papers.",
            vec![
                req("search_query", Str, "arXiv search query."),
                opt("max_results", Integer, "Maximum number of papers to return."),
            ],
        ),
        Kind::GenerateIdea => ToolSpec::new(
            "generate_idea",
            "Generate a candidate research idea as JSON with Name, Title, Experiment and Risk Factors fields.",
            vec![
                opt("task_description", Str, "Research direction to generate an idea for."),
                opt("seed_ideas_json", Str, "Optional JSON list of seed ideas."),
            ],
        ),
        Kind::RefineIdea => ToolSpec::new(
            "refine_idea",
            "Refine a research idea JSON against feedback and return the improved JSON.",
            vec![
                req("idea_json", Str, "The idea to refine, as JSON."),
                opt("feedback", Str, "What to improve."),
            ],
        ),
        Kind::Vlm => ToolSpec::new(
            "vlm_document_analysis",
            "Analyze a PDF or image in the workspace (layout, figures, content) and return a text report.",
            vec![
                req("file_path", Str, "Workspace path of the PDF or image."),
                opt(
                    "analysis_focus",
                    Str,
                    "One of pdf_validation, image_analysis or pdf_reading.",
                ),
            ],
        ),
        Kind::IdeaStandardization => ToolSpec::new(
            "idea_standardization",
            "Convert a research idea into the standardized specification accepted by run_experiment.",
            vec![req("idea_json", Str, "The idea to standardize, as JSON.")],
        ),
        Kind::RunExperiment => ToolSpec::new(
            "run_experiment",
            "Run the staged experiment pipeline on a standardized idea. Results are written under experiment_runs/<run id>/experiments/<timestamp>_<name>/.",
            vec![
                req("idea", Str, "Standardized idea specification."),
                opt("end_stage", Integer, "Last pipeline stage to run, 1 to 4 (default 4)."),
            ],
        ),
        Kind::ExperimentLinker => ToolSpec::new(
            "experiment_linker",
            "Link experiment results into paper_workspace/experiment_data. Without an argument the most recent experiment is linked.",
            vec![opt("experiment_dir", Str, "Workspace path of the experiment directory to link.")],
        ),
        Kind::CitationSearch => ToolSpec::new(
            "citation_search",
            "Find citable references for a claim and return BibTeX entries.",
            vec![req("query", Str, "Claim or topic to find references for.")],
        ),
        Kind::CopyTemplates => ToolSpec::new(
            "copy_latex_templates",
            "Copy the LaTeX style and bibliography style files into a workspace directory.",
            vec![req("destination", Str, "Workspace directory that receives the files.")],
        ),
        Kind::LatexGenerator => ToolSpec::new(
            "latex_generator",
            "Draft one paper section from the linked experiment data and write it to paper_workspace/sections/<section_name>.tex.",
            vec![
                req("section_name", Str, "Section identifier, e.g. introduction or results."),
                opt("content_guidance", Str, "Points the section must cover."),
            ],
        ),
        Kind::LatexReflection => ToolSpec::new(
            "latex_reflection",
            "Critique a LaTeX file for clarity, structure and unsupported claims.",
            vec![req("file_path", Str, "Workspace path of the .tex file.")],
        ),
        Kind::LatexSyntax => ToolSpec::new(
            "latex_syntax_checker",
            "Check a LaTeX file for unbalanced braces and environments.",
            vec![req("file_path", Str, "Workspace path of the .tex file.")],
        ),
        Kind::LatexCompiler => ToolSpec::new(
            "latex_compiler",
            "Compile a LaTeX document to PDF. [cite: description] placeholders are resolved to \\cite keys and added to references.bib.",
            vec![req("tex_file", Str, "Workspace path of the main .tex file.")],
        ),
        Kind::LatexVerification => ToolSpec::new(
            "latex_content_verification",
            "Verify a paper directory: final_paper.tex, final_paper.pdf, references.bib and every \\input file must exist and no citation placeholders may remain.",
            vec![opt("paper_dir", Str, "Paper directory (default paper_workspace).")],
        ),
    }
}

const KINDS: [Kind; 15] = [
    Kind::WebSearch,
    Kind::FetchArxiv,
    Kind::GenerateIdea,
    Kind::RefineIdea,
    Kind::Vlm,
    Kind::IdeaStandardization,
    Kind::RunExperiment,
    Kind::ExperimentLinker,
    Kind::CitationSearch,
    Kind::CopyTemplates,
    Kind::LatexGenerator,
    Kind::LatexReflection,
    Kind::LatexSyntax,
    Kind::LatexCompiler,
    Kind::LatexVerification,
];

/// Schemas of the stub tools; no fixtures needed.
pub(crate) fn stub_tool_specs() -> Vec<ToolSpec> {
    KINDS.iter().map(|k| spec_for(*k)).collect()
}

/// Registry binding every name in [`STUB_TOOL_NAMES`] to its stub.
pub fn stub_tool_registry(fixtures_dir: impl AsRef<Path>) -> Result<ToolRegistry, ToolError> {
    let fixtures = Arc::new(StubFixtures::load(fixtures_dir)?);
    let mut registry = ToolRegistry::new();
    for kind in KINDS {
        registry.register(Arc::new(StubTool {
            spec: spec_for(kind),
            kind,
            fixtures: fixtures.clone(),
        }));
    }
    Ok(registry)
}

impl Tool for StubTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        let fx = &self.fixtures;
        match self.kind {
            Kind::WebSearch
            | Kind::FetchArxiv
            | Kind::GenerateIdea
            | Kind::RefineIdea
            | Kind::IdeaStandardization
            | Kind::CitationSearch => Ok(fx.text(&self.spec.name)?.to_string()),
            Kind::LatexReflection => {
                let path = existing_file(ctx, a.str("file_path")?)?;
                Ok(fx.text("latex_reflection")?.replace("{file}", &ctx.workspace.relative(&path)))
            }
            Kind::Vlm => {
                let path = existing_file(ctx, a.str("file_path")?)?;
                Ok(fx
                    .vlm(a.opt_str("analysis_focus"))?
                    .replace("{file}", &ctx.workspace.relative(&path)))
            }
            Kind::RunExperiment => run_experiment(fx, ctx, a.str("idea")?, a.opt_int("end_stage").unwrap_or(4)),
            Kind::ExperimentLinker => link_experiment(ctx, a.opt_str("experiment_dir")),
            Kind::CopyTemplates => copy_templates(fx, ctx, a.str("destination")?),
            Kind::LatexGenerator => generate_section(fx, ctx, a.str("section_name")?, a.opt_str("content_guidance")),
            Kind::LatexSyntax => {
                let path = existing_file(ctx, a.str("file_path")?)?;
                let shown = ctx.workspace.relative(&path);
                let issues = latex_issues(&read(&path)?);
                if issues.is_empty() {
                    Ok(format!("Syntax check passed for {shown}: braces and environments are balanced."))
                } else {
                    Ok(format!(
                        "Syntax check found {} issue(s) in {shown}:\n- {}",
                        issues.len(),
                        issues.join("\n- ")
                    ))
                }
            }
            Kind::LatexCompiler => compile(ctx, a.str("tex_file")?),
            Kind::LatexVerification => verify_paper(ctx, a.opt_str("paper_dir").unwrap_or(PAPER_DIR)),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ToolError {
    ToolError::Workspace(WorkspaceError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read(path: &Path) -> Result<String, ToolError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(path: &Path, content: &str) -> Result<(), ToolError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, content).map_err(|e| io_err(path, e))
}

fn existing_file(ctx: &ToolContext<'_>, candidate: &str) -> Result<PathBuf, ToolError> {
    let path = ctx.workspace.validate_path(candidate)?;
    if !path.is_file() {
        return Err(WorkspaceError::NotFound {
            path: candidate.to_string(),
            hint: "Use list_dir to see which files exist.".into(),
        }
        .into());
    }
    Ok(path)
}

fn copy_tree(from: &Path, to: &Path, skip: impl Fn(&Path) -> bool) -> Result<Vec<String>, ToolError> {
    let mut copied = Vec::new();
    for entry in WalkDir::new(from).sort_by_file_name() {
        let entry = entry.map_err(|e| ToolError::Failed(format!("cannot read fixtures: {e}")))?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        if rel.as_os_str().is_empty() || skip(rel) {
            continue;
        }
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).map_err(|e| io_err(&dest, e))?;
        } else {
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::copy(entry.path(), &dest).map_err(|e| io_err(&dest, e))?;
            copied.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(copied)
}

/// Short snake_case name for an idea: its JSON `Name` field, else its first words.
fn idea_name(idea: &str) -> String {
    let source = serde_json::from_str::<Value>(idea)
        .ok()
        .and_then(|v| v.get("Name").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| idea.to_string());
    let words: Vec<String> = source
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(4)
        .map(str::to_ascii_lowercase)
        .collect();
    if words.is_empty() {
        "experiment".into()
    } else {
        words.join("_")
    }
}

fn run_experiment(fx: &StubFixtures, ctx: &ToolContext<'_>, idea: &str, end_stage: i64) -> Result<String, ToolError> {
    if !(1..=4).contains(&end_stage) {
        return Err(ToolError::Failed(format!("end_stage must be between 1 and 4, got {end_stage}")));
    }
    if idea.trim().is_empty() {
        return Err(ToolError::Failed("idea must not be empty; run idea_standardization first".into()));
    }
    let template = fx.subdir(EXPERIMENT_FIXTURE)?;
    let runs = ctx.workspace.validate_path(RUNS_DIR)?;
    let previous = fs::read_dir(&runs).map(|d| d.count()).unwrap_or(0);
    let run_id = Uuid::new_v5(&Uuid::NAMESPACE_OID, format!("{idea}\n{previous}").as_bytes());
    let stamp = ctx.clock.now().format("%Y%m%d_%H%M%S");
    let exp_rel = format!("{RUNS_DIR}/{run_id}/experiments/{stamp}_{}", idea_name(idea));
    let exp = ctx.workspace.validate_path(&exp_rel)?;

    let summary_dir = Path::new(SUMMARY_DIR);
    copy_tree(&template, &exp, |rel| rel.starts_with(summary_dir))?;
    write(&exp.join("research_idea.md"), &format!("# Research idea\n\n{}\n", idea.trim()))?;
    let mut produced = Vec::new();
    for (file, stage) in STAGE_SUMMARIES {
        if end_stage < stage {
            continue;
        }
        let src = template.join(SUMMARY_DIR).join(file);
        let content = fs::read_to_string(&src)
            .map_err(|_| ToolError::FixtureMissing(format!("experiment summary {}", src.display())))?;
        write(&exp.join(SUMMARY_DIR).join(file), &content)?;
        produced.push(format!("{SUMMARY_DIR}/{file}"));
    }
    let mut figures: Vec<String> = fs::read_dir(exp.join("figures"))
        .map(|d| {
            d.filter_map(Result::ok)
                .map(|e| format!("figures/{}", e.file_name().to_string_lossy()))
                .collect()
        })
        .unwrap_or_default();
    figures.sort();
    Ok(format!(
        "Experiment pipeline finished stages 1-{end_stage}. Results directory: {exp_rel}/\nSummaries: {}\nFigures: {}",
        produced.join(", "),
        if figures.is_empty() { "none".to_string() } else { figures.join(", ") }
    ))
}

/// Newest `experiment_runs/*/experiments/*` directory by name (names start with a timestamp).
fn latest_experiment(ctx: &ToolContext<'_>) -> Result<PathBuf, ToolError> {
    let runs = ctx.workspace.validate_path(RUNS_DIR)?;
    let mut best: Option<(String, PathBuf)> = None;
    for run in fs::read_dir(&runs).into_iter().flatten().filter_map(Result::ok) {
        for exp in fs::read_dir(run.path().join("experiments")).into_iter().flatten().filter_map(Result::ok) {
            if !exp.path().is_dir() {
                continue;
            }
            let key = format!("{}/{}", exp.file_name().to_string_lossy(), run.file_name().to_string_lossy());
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                best = Some((key, exp.path()));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| ToolError::Failed(format!("no experiment results found under {RUNS_DIR}/; run run_experiment first")))
}

fn link_experiment(ctx: &ToolContext<'_>, dir: Option<&str>) -> Result<String, ToolError> {
    let target = match dir {
        Some(d) => {
            let p = ctx.workspace.validate_path(d)?;
            if !p.is_dir() {
                return Err(ToolError::Failed(format!("'{d}' is not an experiment directory")));
            }
            p
        }
        None => latest_experiment(ctx)?,
    };
    let paper = ctx.workspace.validate_path(PAPER_DIR)?;
    fs::create_dir_all(&paper).map_err(|e| io_err(&paper, e))?;
    let link = ctx.workspace.validate_path_nofollow(&format!("{PAPER_DIR}/{DATA_LINK}"))?;
    if let Ok(meta) = fs::symlink_metadata(&link) {
        let removed = if meta.is_dir() { fs::remove_dir_all(&link) } else { fs::remove_file(&link) };
        removed.map_err(|e| io_err(&link, e))?;
    }
    let rel = ctx.workspace.relative(&target);
    make_link(&format!("../{rel}"), &target, &link)?;
    ctx.workspace.validate_path(&format!("{PAPER_DIR}/{DATA_LINK}"))?;
    Ok(format!("Linked {PAPER_DIR}/{DATA_LINK} -> {rel}/"))
}

#[cfg(unix)]
fn make_link(relative: &str, _target: &Path, link: &Path) -> Result<(), ToolError> {
    std::os::unix::fs::symlink(relative, link).map_err(|e| io_err(link, e))
}

#[cfg(not(unix))]
fn make_link(_relative: &str, target: &Path, link: &Path) -> Result<(), ToolError> {
    copy_tree(target, link, |_| false).map(|_| ())
}

fn copy_templates(fx: &StubFixtures, ctx: &ToolContext<'_>, destination: &str) -> Result<String, ToolError> {
    let from = fx.subdir(TEMPLATE_FIXTURE)?;
    let dest = ctx.workspace.validate_path(destination)?;
    fs::create_dir_all(&dest).map_err(|e| io_err(&dest, e))?;
    let copied = copy_tree(&from, &dest, |_| false)?;
    Ok(format!(
        "Copied {} template file(s) into {}/: {}",
        copied.len(),
        ctx.workspace.relative(&dest),
        copied.join(", ")
    ))
}

fn generate_section(
    fx: &StubFixtures,
    ctx: &ToolContext<'_>,
    section: &str,
    guidance: Option<&str>,
) -> Result<String, ToolError> {
    if section.is_empty() || !section.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(ToolError::Failed(format!(
            "section_name '{section}' must be a plain identifier such as introduction or results"
        )));
    }
    let data = format!("{PAPER_DIR}/{DATA_LINK}/{SUMMARY_DIR}/baseline_summary.json");
    let linked = ctx.workspace.validate_path(&data).map(|p| p.is_file()).unwrap_or(false);
    if !linked {
        return Err(ToolError::Failed(format!(
            "cannot draft '{section}': {data} does not exist. Experiment results must be linked into {PAPER_DIR}/{DATA_LINK} before writing."
        )));
    }
    let title = section
        .split('_')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ");
    let body = fx
        .section(section)?
        .replace("{title}", &title)
        .replace("{guidance}", guidance.unwrap_or("").trim());
    let rel = format!("{PAPER_DIR}/sections/{section}.tex");
    let path = ctx.workspace.validate_path(&rel)?;
    let body = if body.ends_with('\n') { body } else { body + "\n" };
    write(&path, &body)?;
    Ok(format!("Generated {rel} ({} lines).", body.lines().count()))
}

/// Unbalanced braces and mismatched `\begin`/`\end` pairs, one message each.
fn latex_issues(source: &str) -> Vec<String> {
    let env = regex::Regex::new(r"\\(begin|end)\{([^}]*)\}").expect("static regex");
    let mut issues = Vec::new();
    let mut depth: i64 = 0;
    let mut stack: Vec<(String, usize)> = Vec::new();
    for (n, raw) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = strip_comment(raw);
        let mut escaped = false;
        for c in line.chars() {
            match c {
                '\\' => escaped = !escaped,
                '{' if !escaped => depth += 1,
                '}' if !escaped => {
                    depth -= 1;
                    if depth < 0 {
                        issues.push(format!("line {line_no}: unmatched closing brace"));
                        depth = 0;
                    }
                }
                _ => escaped = false,
            }
            if c != '\\' {
                escaped = false;
            }
        }
        for cap in env.captures_iter(line) {
            let name = cap[2].to_string();
            if &cap[1] == "begin" {
                stack.push((name, line_no));
            } else {
                match stack.pop() {
                    Some((open, _)) if open == name => {}
                    Some((open, at)) => issues.push(format!(
                        "line {line_no}: \\end{{{name}}} closes \\begin{{{open}}} opened on line {at}"
                    )),
                    None => issues.push(format!("line {line_no}: \\end{{{name}}} without matching \\begin")),
                }
            }
        }
    }
    if depth > 0 {
        issues.push(format!("{depth} unclosed brace(s) at end of file"));
    }
    for (open, at) in stack {
        issues.push(format!("\\begin{{{open}}} on line {at} is never closed"));
    }
    issues
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'%' && (i == 0 || bytes[i - 1] != b'\\') {
            return &line[..i];
        }
    }
    line
}

/// Files named by `\input{..}` in `source`, resolved against `dir`.
fn inputs(source: &str, dir: &Path) -> Vec<PathBuf> {
    let re = regex::Regex::new(r"\\input\{([^}]+)\}").expect("static regex");
    source
        .lines()
        .map(strip_comment)
        .flat_map(|l| re.captures_iter(l).map(|c| c[1].trim().to_string()).collect::<Vec<_>>())
        .map(|name| {
            let p = dir.join(&name);
            if p.extension().is_some() { p } else { dir.join(format!("{name}.tex")) }
        })
        .collect()
}

fn citation_key(description: &str, taken: &BTreeMap<String, String>) -> String {
    let base: Vec<String> = description
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| w.len() > 2)
        .take(3)
        .map(str::to_ascii_lowercase)
        .collect();
    let base = if base.is_empty() { "ref".to_string() } else { base.join("_") };
    let mut key = base.clone();
    let mut n = 2;
    while taken.values().any(|k| *k == key) {
        key = format!("{base}{n}");
        n += 1;
    }
    key
}

fn compile(ctx: &ToolContext<'_>, tex_file: &str) -> Result<String, ToolError> {
    let main = existing_file(ctx, tex_file)?;
    let dir = main.parent().expect("file has a parent").to_path_buf();
    let main_src = read(&main)?;
    let mut files = vec![main.clone()];
    for input in inputs(&main_src, &dir) {
        let shown = ctx.workspace.relative(&input);
        let input = ctx.workspace.validate_path(&shown)?;
        if !input.is_file() {
            return Err(ToolError::Failed(format!("compilation failed: \\input file {shown} not found")));
        }
        files.push(input);
    }

    let placeholder = regex::Regex::new(r"\[cite:\s*([^\]]+)\]").expect("static regex");
    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    let mut sources = Vec::new();
    let mut problems = Vec::new();
    for file in &files {
        let src = read(file)?;
        for issue in latex_issues(&src) {
            problems.push(format!("{}: {issue}", ctx.workspace.relative(file)));
        }
        let resolved = placeholder
            .replace_all(&src, |c: &regex::Captures<'_>| {
                let desc = c[1].trim().to_string();
                let key = match keys.get(&desc) {
                    Some(k) => k.clone(),
                    None => {
                        let k = citation_key(&desc, &keys);
                        keys.insert(desc, k.clone());
                        k
                    }
                };
                format!("\\cite{{{key}}}")
            })
            .into_owned();
        sources.push((file.clone(), src, resolved));
    }
    if !problems.is_empty() {
        return Err(ToolError::Failed(format!("compilation failed:\n- {}", problems.join("\n- "))));
    }
    for (file, src, resolved) in &sources {
        if src != resolved {
            write(file, resolved)?;
        }
    }

    let bib = dir.join("references.bib");
    let mut bib_text = fs::read_to_string(&bib).unwrap_or_default();
    let mut added = 0;
    let by_key: BTreeSet<(&String, &String)> = keys.iter().map(|(d, k)| (k, d)).collect();
    for (key, desc) in by_key {
        if bib_text.contains(&format!("{{{key},")) {
            continue;
        }
        if !bib_text.is_empty() && !bib_text.ends_with('\n') {
            bib_text.push('\n');
        }
        bib_text.push_str(&format!("\n@misc{{{key},\n  title = {{{desc}}},\n  note = {{Resolved from citation placeholder}}\n}}\n"));
        added += 1;
    }
    write(&bib, &bib_text)?;

    let mut hasher = Sha256::new();
    for (_, _, resolved) in &sources {
        hasher.update(resolved.as_bytes());
    }
    let pdf = main.with_extension("pdf");
    let pages = 1 + sources.iter().map(|(_, _, r)| r.lines().count()).sum::<usize>() / 50;
    write(
        &pdf,
        &format!(
            "%PDF-1.4\n% stub render of {}\n% pages: {pages}\n% sha256: {}\n%%EOF\n",
            ctx.workspace.relative(&main),
            hex::encode(hasher.finalize())
        ),
    )?;
    Ok(format!(
        "Compiled {} -> {} ({pages} page(s), {} file(s), {} citation(s) resolved, {added} new bibliography entr{}).",
        ctx.workspace.relative(&main),
        ctx.workspace.relative(&pdf),
        sources.len(),
        keys.len(),
        if added == 1 { "y" } else { "ies" }
    ))
}

fn verify_paper(ctx: &ToolContext<'_>, paper_dir: &str) -> Result<String, ToolError> {
    let dir = ctx.workspace.validate_path(paper_dir)?;
    let shown = ctx.workspace.relative(&dir);
    let mut problems = Vec::new();
    let tex = dir.join("final_paper.tex");
    let pdf = dir.join("final_paper.pdf");
    let bib = dir.join("references.bib");
    let mut checked = 0;
    match fs::read_to_string(&tex) {
        Err(_) => problems.push(format!("{shown}/final_paper.tex does not exist")),
        Ok(src) => {
            checked += 1;
            for input in inputs(&src, &dir) {
                match fs::read_to_string(&input) {
                    Ok(text) => {
                        checked += 1;
                        if text.contains("[cite:") {
                            problems.push(format!("{} has unresolved citation placeholders", ctx.workspace.relative(&input)));
                        }
                    }
                    Err(_) => problems.push(format!("input {} does not exist", ctx.workspace.relative(&input))),
                }
            }
            if src.contains("[cite:") {
                problems.push(format!("{shown}/final_paper.tex has unresolved citation placeholders"));
            }
        }
    }
    match fs::read(&pdf) {
        Ok(bytes) if bytes.starts_with(b"%PDF") => checked += 1,
        Ok(_) => problems.push(format!("{shown}/final_paper.pdf is not a PDF")),
        Err(_) => problems.push(format!("{shown}/final_paper.pdf does not exist")),
    }
    if bib.is_file() {
        checked += 1;
    } else {
        problems.push(format!("{shown}/references.bib does not exist"));
    }
    if problems.is_empty() {
        Ok(format!("Content verification passed for {shown}/: {checked} files checked."))
    } else {
        Err(ToolError::Failed(format!("content verification failed:\n- {}", problems.join("\n- "))))
    }
}

/// Binds a tool name to an executable: the argument object is written to its
/// stdin as JSON, stdout becomes the observation, and a nonzero exit fails the call.
pub struct ExternalCommandTool {
    spec: ToolSpec,
    command: Vec<String>,
}

impl ExternalCommandTool {
    pub fn new(spec: ToolSpec, command: Vec<String>) -> Result<Self, String> {
        if command.first().is_none_or(|c| c.trim().is_empty()) {
            return Err(format!("binding for '{}' has an empty command", spec.name));
        }
        Ok(Self { spec, command })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }
}

impl Tool for ExternalCommandTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .current_dir(ctx.workspace.root())
            .env("LABCREW_AGENT", ctx.agent_name)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ToolError::Failed(format!("cannot start '{}': {e}", self.command[0])))?;
        let payload = serde_json::to_vec(args).expect("json map serializes");
        if let Some(mut stdin) = child.stdin.take() {
            // a command that ignores stdin may close it early
            let _ = stdin.write_all(&payload);
        }
        let out = child
            .wait_with_output()
            .map_err(|e| ToolError::Failed(format!("'{}' did not finish: {e}", self.command[0])))?;
        if out.status.success() {
            Ok(String::from_utf8_lossy(&out.stdout).trim_end().to_string())
        } else {
            Err(ToolError::Failed(format!(
                "'{}' exited with {}: {}",
                self.command[0],
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )))
        }
    }
}
