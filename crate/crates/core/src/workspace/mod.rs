//! Shared, sandboxed workspace directory.
//!
//! Every operation resolves its path through [`WorkspaceHandle::validate_path`]
//! first; nothing outside the root is ever read or written. Layout:
//!
//! ```text
//! <root>/
//! ├── working_idea.json            standard file (manager-writable only)
//! ├── past_ideas_and_results.md    standard file (manager-writable only)
//! ├── <agent_name>/                one scratch directory per agent
//! ├── memory/                      persisted agent memories
//! ├── memory_backup/               compaction backups
//! ├── llm_calls.jsonl              call log
//! └── session.json                 session manifest
//! ```

mod path;
pub mod tools;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WORKING_IDEA: &str = "working_idea.json";
pub const PAST_IDEAS: &str = "past_ideas_and_results.md";
pub const STANDARD_FILES: [&str; 2] = [WORKING_IDEA, PAST_IDEAS];
pub const MEMORY_DIR: &str = "memory";
pub const MEMORY_BACKUP_DIR: &str = "memory_backup";
pub const CALL_LOG_FILE: &str = "llm_calls.jsonl";
pub const SESSION_MANIFEST: &str = "session.json";
pub const INTERRUPT_FLAG: &str = ".interrupt";

/// Runtime-owned entries at the root; agents may read them but never mutate them.
const RESERVED: [&str; 5] = [
    MEMORY_DIR,
    MEMORY_BACKUP_DIR,
    CALL_LOG_FILE,
    SESSION_MANIFEST,
    INTERRUPT_FLAG,
];

/// Extensions treated as plain text without sniffing.
pub const PLAIN_TEXT_EXTENSIONS: [&str; 12] = [
    "txt", "md", "py", "json", "tex", "bib", "yaml", "toml", "csv", "log", "sty", "bst",
];

const BINARY_EXTENSIONS: [&str; 22] = [
    "pdf", "docx", "doc", "xlsx", "xls", "pptx", "png", "jpg", "jpeg", "gif", "bmp", "svg",
    "zip", "gz", "tar", "pt", "pth", "pkl", "npy", "npz", "bin", "so",
];

const SNIFF_BYTES: usize = 8192;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("Access denied: '{path}' resolves outside the workspace. Only files under the workspace directory are accessible; use paths relative to the workspace root (e.g. 'notes/a.txt').")]
    SandboxViolation { path: String },
    #[error("'{path}' not found. {hint}")]
    NotFound { path: String, hint: String },
    #[error("Unsupported format for '{path}': {message}")]
    UnsupportedFormat { path: String, message: String },
    #[error("Permission denied for '{path}': {message}")]
    Permission { path: String, message: String },
    #[error("Invalid line range {start}-{end} for '{path}': the file has {line_count} lines. Line numbers are 1-based and inclusive.")]
    Range {
        path: String,
        start: i64,
        end: i64,
        line_count: usize,
    },
    #[error("Refusing to delete the entire workspace. {0}")]
    Safety(String),
    #[error("Invalid argument: {0}")]
    Argument(String),
    #[error("I/O error on '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl WorkspaceError {
    pub(crate) fn violation(path: &str) -> Self {
        WorkspaceError::SandboxViolation {
            path: path.to_string(),
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        WorkspaceError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkspacePolicy {
    pub agent_name: String,
    pub can_write_standard_files: bool,
}

impl WorkspacePolicy {
    pub fn manager(agent_name: &str) -> Self {
        Self {
            agent_name: agent_name.to_string(),
            can_write_standard_files: true,
        }
    }

    pub fn member(agent_name: &str) -> Self {
        Self {
            agent_name: agent_name.to_string(),
            can_write_standard_files: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirEntryInfo {
    pub name: String,
    pub is_dir: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchMatch {
    pub file: String,
    pub line_number: usize,
    pub line: String,
    pub context_before: Vec<String>,
    pub context_after: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FileKind {
    Text,
    Binary,
}

#[derive(Debug, Clone)]
pub struct WorkspaceHandle {
    root: PathBuf,
    alias_root: PathBuf,
    agent_dirs: BTreeMap<String, PathBuf>,
}

impl WorkspaceHandle {
    /// Opens an existing workspace directory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, WorkspaceError> {
        let given = root.as_ref();
        let alias_root = if given.is_absolute() {
            given.to_path_buf()
        } else {
            std::env::current_dir()
                .map_err(|e| WorkspaceError::io(given, e))?
                .join(given)
        };
        let root = fs::canonicalize(given).map_err(|e| WorkspaceError::io(given, e))?;
        if !root.is_dir() {
            return Err(WorkspaceError::Argument(format!(
                "workspace root {} is not a directory",
                root.display()
            )));
        }
        let mut handle = Self {
            root,
            alias_root,
            agent_dirs: BTreeMap::new(),
        };
        if let Ok(entries) = fs::read_dir(&handle.root) {
            let mut names: Vec<String> = entries
                .filter_map(Result::ok)
                .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
                .filter_map(|e| e.file_name().into_string().ok())
                .filter(|n| n.ends_with("_agent"))
                .collect();
            names.sort();
            for name in names {
                let dir = handle.root.join(&name);
                handle.agent_dirs.insert(name, dir);
            }
        }
        Ok(handle)
    }

    /// Creates (or re-initializes) a workspace with standard files and one
    /// subdirectory per agent. Existing files are left untouched.
    pub fn create(root: impl AsRef<Path>, agents: &[&str]) -> Result<Self, WorkspaceError> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| WorkspaceError::io(root, e))?;
        let mut handle = Self::open(root)?;
        handle.ensure_layout(agents)?;
        Ok(handle)
    }

    fn ensure_layout(&mut self, agents: &[&str]) -> Result<(), WorkspaceError> {
        self.write_layout(agents)?;
        for agent in agents {
            self.agent_dirs
                .insert(agent.to_string(), self.root.join(agent));
        }
        Ok(())
    }

    /// Recreates standard files and agent directories that are missing.
    fn write_layout(&self, agents: &[&str]) -> Result<(), WorkspaceError> {
        let initial = [
            (WORKING_IDEA, "{}\n"),
            (
                PAST_IDEAS,
                "# Past ideas and results\n\nNo previous research attempts recorded yet.\n",
            ),
        ];
        for (name, content) in initial {
            let path = self.root.join(name);
            if !path.exists() {
                fs::write(&path, content).map_err(|e| WorkspaceError::io(&path, e))?;
            }
        }
        let backup = self.root.join(MEMORY_BACKUP_DIR);
        fs::create_dir_all(&backup).map_err(|e| WorkspaceError::io(&backup, e))?;
        for agent in agents {
            let dir = self.root.join(agent);
            fs::create_dir_all(&dir).map_err(|e| WorkspaceError::io(&dir, e))?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn agent_dirs(&self) -> &BTreeMap<String, PathBuf> {
        &self.agent_dirs
    }

    pub fn agent_dir(&self, agent: &str) -> Option<&Path> {
        self.agent_dirs.get(agent).map(PathBuf::as_path)
    }

    pub fn join(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Resolves `candidate` (relative to the root, or absolute under it),
    /// following symbolic links, and rejects anything that lands outside.
    pub fn validate_path(&self, candidate: &str) -> Result<PathBuf, WorkspaceError> {
        path::resolve(&self.root, &self.alias_root, candidate, true)
    }

    /// Like [`validate_path`](Self::validate_path) but leaves a final
    /// symbolic link unexpanded, so the link itself can be removed or replaced.
    pub fn validate_path_nofollow(&self, candidate: &str) -> Result<PathBuf, WorkspaceError> {
        path::resolve(&self.root, &self.alias_root, candidate, false)
    }

    /// Path relative to the root, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|_| path.display().to_string())
    }

    fn is_standard(&self, resolved: &Path) -> bool {
        STANDARD_FILES.iter().any(|f| resolved == self.root.join(f))
    }

    fn is_reserved(&self, resolved: &Path) -> bool {
        RESERVED
            .iter()
            .any(|r| resolved.starts_with(self.root.join(r)))
    }

    fn check_mutation(
        &self,
        policy: &WorkspacePolicy,
        resolved: &Path,
        shown: &str,
    ) -> Result<(), WorkspaceError> {
        if self.is_reserved(resolved) {
            return Err(WorkspaceError::Permission {
                path: shown.to_string(),
                message: "this path holds runtime state (memory, backups, call log or session manifest) and cannot be modified by agents".into(),
            });
        }
        if self.is_standard(resolved) && !policy.can_write_standard_files {
            return Err(WorkspaceError::Permission {
                path: shown.to_string(),
                message: format!(
                    "standard workspace files are managed exclusively by the manager agent and are READ-ONLY for {}",
                    policy.agent_name
                ),
            });
        }
        Ok(())
    }

    /// Complete content of a plain-text file, undecorated.
    pub fn see_file(&self, _policy: &WorkspacePolicy, filename: &str) -> Result<String, WorkspaceError> {
        let path = self.validate_path(filename)?;
        let meta = fs::metadata(&path).map_err(|_| not_found(filename, "file"))?;
        if meta.is_dir() {
            return Err(WorkspaceError::Argument(format!(
                "'{filename}' is a directory; use list_dir to see its contents"
            )));
        }
        let bytes = fs::read(&path).map_err(|e| WorkspaceError::io(&path, e))?;
        if classify(&path, Some(&bytes)) == FileKind::Binary {
            return Err(unsupported_read(filename));
        }
        String::from_utf8(bytes).map_err(|_| unsupported_read(filename))
    }

    /// Writes `content` to a plain-text file, creating parent directories.
    pub fn create_file_with_content(
        &self,
        policy: &WorkspacePolicy,
        filename: &str,
        content: &str,
    ) -> Result<String, WorkspaceError> {
        let path = self.validate_path(filename)?;
        if path == self.root {
            return Err(WorkspaceError::Argument("a file name is required".into()));
        }
        if !creatable_extension(&path) {
            return Err(WorkspaceError::UnsupportedFormat {
                path: filename.to_string(),
                message: format!(
                    "this tool does not support creating binary files such as .pdf, .docx, or images; supported plain text extensions: .{}",
                    PLAIN_TEXT_EXTENSIONS.join(" .")
                ),
            });
        }
        self.check_mutation(policy, &path, filename)?;
        if path.is_dir() {
            return Err(WorkspaceError::Argument(format!(
                "'{filename}' is an existing directory"
            )));
        }
        let existed = path.exists();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| WorkspaceError::io(parent, e))?;
        }
        atomic_write(&path, content.as_bytes())?;
        let verb = if existed { "overwritten" } else { "created" };
        Ok(format!(
            "File '{}' {verb} ({} characters).",
            self.relative(&path),
            content.chars().count()
        ))
    }

    /// Replaces lines `start_line..=end_line` (1-based) with `new_content`.
    ///
    /// Files are modeled as `\n`-separated lines plus a trailing-newline flag.
    /// Empty `new_content` deletes the range; otherwise one trailing `\n` is
    /// dropped and the rest split on `\n`.
    pub fn modify_file(
        &self,
        policy: &WorkspacePolicy,
        filename: &str,
        start_line: i64,
        end_line: i64,
        new_content: &str,
    ) -> Result<String, WorkspaceError> {
        let path = self.validate_path(filename)?;
        if !path.is_file() {
            return Err(not_found(filename, "file"));
        }
        let bytes = fs::read(&path).map_err(|e| WorkspaceError::io(&path, e))?;
        if classify(&path, Some(&bytes)) == FileKind::Binary {
            return Err(WorkspaceError::UnsupportedFormat {
                path: filename.to_string(),
                message: "modify_file only works with plain text files".into(),
            });
        }
        let content = String::from_utf8(bytes).map_err(|_| WorkspaceError::UnsupportedFormat {
            path: filename.to_string(),
            message: "file is not valid UTF-8 text".into(),
        })?;
        self.check_mutation(policy, &path, filename)?;
        let line_count = count_lines(&content);
        if start_line < 1 || start_line > end_line || end_line as u64 > line_count as u64 {
            return Err(WorkspaceError::Range {
                path: filename.to_string(),
                start: start_line,
                end: end_line,
                line_count,
            });
        }
        let updated = splice_lines(&content, start_line as usize, end_line as usize, new_content);
        atomic_write(&path, updated.as_bytes())?;
        Ok(format!(
            "Replaced lines {start_line}-{end_line} of '{}'; the file now has {} lines.",
            self.relative(&path),
            count_lines(&updated)
        ))
    }

    /// Sorted entries of a directory.
    pub fn list_dir(
        &self,
        _policy: &WorkspacePolicy,
        directory: &str,
    ) -> Result<Vec<DirEntryInfo>, WorkspaceError> {
        let dir = self.validate_path(directory)?;
        let meta = fs::metadata(&dir).map_err(|_| not_found(directory, "directory"))?;
        if !meta.is_dir() {
            return Err(WorkspaceError::Argument(format!(
                "'{directory}' is a file, not a directory; use see_file to read it"
            )));
        }
        let mut entries = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| WorkspaceError::io(&dir, e))? {
            let entry = entry.map_err(|e| WorkspaceError::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let full = entry.path();
            let Ok(file_type) = entry.file_type() else { continue };
            let is_dir = if file_type.is_symlink() {
                let rel = self.relative(&full);
                match self.validate_path(&rel) {
                    Ok(target) => target.is_dir(),
                    Err(_) => continue,
                }
            } else {
                file_type.is_dir()
            };
            entries.push(DirEntryInfo { name, is_dir });
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(entries)
    }

    /// Case-sensitive literal search in a file or, recursively, a directory.
    pub fn search_keyword(
        &self,
        _policy: &WorkspacePolicy,
        path: &str,
        keyword: &str,
        context_lines: usize,
    ) -> Result<Vec<SearchMatch>, WorkspaceError> {
        if keyword.is_empty() {
            return Err(WorkspaceError::Argument("keyword must not be empty".into()));
        }
        let resolved = self.validate_path(path)?;
        let meta = fs::metadata(&resolved).map_err(|_| not_found(path, "file or directory"))?;
        let mut files: Vec<(String, PathBuf)> = Vec::new();
        if meta.is_dir() {
            let shown = self.relative(&resolved);
            let mut visited = BTreeSet::new();
            self.collect_text_files(&resolved, &shown, &mut visited, &mut files)?;
        } else {
            if classify(&resolved, None) == FileKind::Binary {
                return Err(WorkspaceError::UnsupportedFormat {
                    path: path.to_string(),
                    message: "search_keyword only supports plain text files".into(),
                });
            }
            files.push((self.relative(&resolved), resolved));
        }
        files.sort();

        let mut matches = Vec::new();
        for (shown, full) in files {
            let Ok(bytes) = fs::read(&full) else { continue };
            if classify(&full, Some(&bytes)) == FileKind::Binary {
                continue;
            }
            let Ok(text) = String::from_utf8(bytes) else { continue };
            let lines: Vec<&str> = split_lines(&text);
            for (i, line) in lines.iter().enumerate() {
                if !line.contains(keyword) {
                    continue;
                }
                let from = i.saturating_sub(context_lines);
                let to = (i + 1 + context_lines).min(lines.len());
                matches.push(SearchMatch {
                    file: shown.clone(),
                    line_number: i + 1,
                    line: line.to_string(),
                    context_before: lines[from..i].iter().map(|s| s.to_string()).collect(),
                    context_after: lines[i + 1..to].iter().map(|s| s.to_string()).collect(),
                });
            }
        }
        Ok(matches)
    }

    fn collect_text_files(
        &self,
        dir: &Path,
        shown: &str,
        visited: &mut BTreeSet<PathBuf>,
        out: &mut Vec<(String, PathBuf)>,
    ) -> Result<(), WorkspaceError> {
        if !visited.insert(dir.to_path_buf()) {
            return Ok(());
        }
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| WorkspaceError::io(dir, e))?
            .filter_map(Result::ok)
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let display = if shown.is_empty() {
                name.clone()
            } else {
                format!("{shown}/{name}")
            };
            let Ok(file_type) = entry.file_type() else { continue };
            let real = if file_type.is_symlink() {
                match self.validate_path(&self.relative(&entry.path())) {
                    Ok(target) => target,
                    Err(_) => continue,
                }
            } else {
                entry.path()
            };
            if real.is_dir() {
                self.collect_text_files(&real, &display, visited, out)?;
            } else if real.is_file() && classify(&real, None) != FileKind::Binary {
                out.push((display, real));
            }
        }
        Ok(())
    }

    /// Deletes a file, a directory tree, or a symbolic link (never its target).
    ///
    /// An empty name (or the root itself) means "everything in the working
    /// directory" and requires `confirm_delete_all`; runtime state survives
    /// and the standard layout is recreated afterwards.
    pub fn delete_file_or_folder(
        &self,
        policy: &WorkspacePolicy,
        filename: &str,
        confirm_delete_all: bool,
    ) -> Result<String, WorkspaceError> {
        let trimmed = filename.trim();
        let target = if trimmed.is_empty() {
            self.root.clone()
        } else {
            self.validate_path_nofollow(trimmed)?
        };
        if target == self.root {
            if !confirm_delete_all {
                return Err(WorkspaceError::Safety(
                    "Pass confirm_delete_all=true to delete everything in the working directory, or name a specific file or folder.".into(),
                ));
            }
            if !policy.can_write_standard_files {
                return Err(WorkspaceError::Permission {
                    path: filename.to_string(),
                    message: "only the manager agent may clear the whole workspace".into(),
                });
            }
            let mut removed = 0;
            for entry in fs::read_dir(&self.root).map_err(|e| WorkspaceError::io(&self.root, e))? {
                let entry = entry.map_err(|e| WorkspaceError::io(&self.root, e))?;
                let path = entry.path();
                if self.is_reserved(&path) {
                    continue;
                }
                remove_entry(&path)?;
                removed += 1;
            }
            let agents: Vec<&str> = self.agent_dirs.keys().map(String::as_str).collect();
            self.write_layout(&agents)?;
            return Ok(format!(
                "Deleted {removed} entries from the workspace; standard files and agent directories were recreated."
            ));
        }
        let shown = self.relative(&target);
        if fs::symlink_metadata(&target).is_err() {
            return Err(not_found(filename, "file or folder"));
        }
        self.check_mutation(policy, &target, filename)?;
        if self.agent_dirs.values().any(|d| d == &target) {
            // the directory comes back empty so the layout stays intact
            remove_entry(&target)?;
            fs::create_dir_all(&target).map_err(|e| WorkspaceError::io(&target, e))?;
            return Ok(format!("Cleared agent directory '{shown}'."));
        }
        remove_entry(&target)?;
        Ok(format!("Deleted '{shown}'."))
    }
}

fn remove_entry(path: &Path) -> Result<(), WorkspaceError> {
    let meta = fs::symlink_metadata(path).map_err(|e| WorkspaceError::io(path, e))?;
    let result = if meta.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    };
    result.map_err(|e| WorkspaceError::io(path, e))
}

fn not_found(path: &str, what: &str) -> WorkspaceError {
    WorkspaceError::NotFound {
        path: path.to_string(),
        hint: format!("No such {what} in the workspace. Use list_dir to explore available files."),
    }
}

fn unsupported_read(path: &str) -> WorkspaceError {
    WorkspaceError::UnsupportedFormat {
        path: path.to_string(),
        message: "see_file only reads plain text files. For PDFs or complex documents, use vlm_document_analysis instead.".into(),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
}

fn creatable_extension(path: &Path) -> bool {
    match extension(path) {
        None => true,
        Some(ext) => PLAIN_TEXT_EXTENSIONS.contains(&ext.as_str()),
    }
}

fn classify(path: &Path, bytes: Option<&[u8]>) -> FileKind {
    if let Some(ext) = extension(path) {
        if PLAIN_TEXT_EXTENSIONS.contains(&ext.as_str()) {
            return FileKind::Text;
        }
        if BINARY_EXTENSIONS.contains(&ext.as_str()) {
            return FileKind::Binary;
        }
    }
    let sniffed;
    let head: &[u8] = match bytes {
        Some(b) => &b[..b.len().min(SNIFF_BYTES)],
        None => {
            sniffed = sniff(path);
            &sniffed
        }
    };
    if head.contains(&0) {
        FileKind::Binary
    } else {
        FileKind::Text
    }
}

fn sniff(path: &Path) -> Vec<u8> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(SNIFF_BYTES);
    if let Ok(file) = fs::File::open(path) {
        let _ = file.take(SNIFF_BYTES as u64).read_to_end(&mut buf);
    }
    buf
}

/// Lines of `text` with the trailing-newline terminator removed.
pub(crate) fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n').collect()
}

pub(crate) fn count_lines(text: &str) -> usize {
    split_lines(text).len()
}

/// Byte-offset splice; see [`WorkspaceHandle::modify_file`] for the model.
fn splice_lines(content: &str, start: usize, end: usize, new_content: &str) -> String {
    let mut line_starts = vec![0usize];
    for (i, b) in content.bytes().enumerate() {
        if b == b'\n' && i + 1 < content.len() {
            line_starts.push(i + 1);
        }
    }
    let line_count = line_starts.len();
    let trailing_newline = content.ends_with('\n');
    let mut from = line_starts[start - 1];
    let to = if end < line_count {
        line_starts[end]
    } else {
        content.len()
    };
    let replacement = if new_content.is_empty() {
        String::new()
    } else {
        let body = new_content.strip_suffix('\n').unwrap_or(new_content);
        if end < line_count || trailing_newline {
            format!("{body}\n")
        } else {
            body.to_string()
        }
    };
    if new_content.is_empty() && end == line_count && !trailing_newline && from > 0 {
        // dropping the final unterminated line also drops the newline before it
        from -= 1;
    }
    let mut out = String::with_capacity(content.len() - (to - from) + replacement.len());
    out.push_str(&content[..from]);
    out.push_str(&replacement);
    out.push_str(&content[to..]);
    out
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    let parent = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(|e| WorkspaceError::io(parent, e))?;
    tmp.write_all(bytes).map_err(|e| WorkspaceError::io(path, e))?;
    tmp.persist(path).map_err(|e| WorkspaceError::io(path, e.error))?;
    Ok(())
}

/// One `[dir]`/`[file]` line per entry.
pub fn render_listing(entries: &[DirEntryInfo]) -> String {
    entries
        .iter()
        .map(|e| {
            if e.is_dir {
                format!("[dir]  {}/", e.name)
            } else {
                format!("[file] {}", e.name)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// What the `list_dir` tool returns for `directory`.
pub fn render_dir_listing(directory: &str, entries: &[DirEntryInfo]) -> String {
    if entries.is_empty() {
        format!("Directory '{directory}' is empty.")
    } else {
        render_listing(entries)
    }
}

/// grep-style rendering: `file:line:text` for hits, `file-line-text` for context.
pub fn render_matches(keyword: &str, matches: &[SearchMatch]) -> String {
    if matches.is_empty() {
        return format!("No matches found for '{keyword}'.");
    }
    let mut out = format!("Found {} matches for '{keyword}':", matches.len());
    for m in matches {
        out.push_str("\n--");
        let first = m.line_number - m.context_before.len();
        for (i, line) in m.context_before.iter().enumerate() {
            out.push_str(&format!("\n{}-{}-{}", m.file, first + i, line));
        }
        out.push_str(&format!("\n{}:{}:{}", m.file, m.line_number, m.line));
        for (i, line) in m.context_after.iter().enumerate() {
            out.push_str(&format!("\n{}-{}-{}", m.file, m.line_number + 1 + i, line));
        }
    }
    out
}
