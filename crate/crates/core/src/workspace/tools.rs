//! The six workspace tools every agent holds.

use std::sync::Arc;

use serde_json::{Map, Value};

use super::{render_dir_listing, render_matches};
use crate::runtime::tool::{Args, ParamSpec, ParamType, Tool, ToolContext, ToolError, ToolRegistry, ToolSpec};

pub const SEE_FILE: &str = "see_file";
pub const CREATE_FILE: &str = "create_file_with_content";
pub const MODIFY_FILE: &str = "modify_file";
pub const LIST_DIR: &str = "list_dir";
pub const SEARCH_KEYWORD: &str = "search_keyword";
pub const DELETE: &str = "delete_file_or_folder";

pub const WORKSPACE_TOOL_NAMES: [&str; 6] =
    [SEE_FILE, CREATE_FILE, MODIFY_FILE, LIST_DIR, SEARCH_KEYWORD, DELETE];

pub struct SeeFile(ToolSpec);
pub struct CreateFile(ToolSpec);
pub struct ModifyFile(ToolSpec);
pub struct ListDir(ToolSpec);
pub struct SearchKeyword(ToolSpec);
pub struct DeleteFileOrFolder(ToolSpec);

impl Default for SeeFile {
    fn default() -> Self {
        Self(ToolSpec::new(
            SEE_FILE,
            "Read a plain text file from the workspace (code, configs, logs, notes). Returns the raw file content without line numbers. For PDFs or complex documents, use vlm_document_analysis instead.",
            vec![ParamSpec::required("filename", ParamType::String, "Name of the file to read.")],
        ))
    }
}

impl Tool for SeeFile {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        Ok(ctx.workspace.see_file(ctx.policy, a.str("filename")?)?)
    }
}

impl Default for CreateFile {
    fn default() -> Self {
        Self(ToolSpec::new(
            CREATE_FILE,
            "Create a plain text file (e.g. .txt, .py, .md, .json, .tex) and write content into it, replacing any previous content. This tool does not support creating binary files such as .pdf, .docx, or images.",
            vec![
                ParamSpec::required("filename", ParamType::String, "Name of the file to create."),
                ParamSpec::required("content", ParamType::String, "Content to write into the file."),
            ],
        ))
    }
}

impl Tool for CreateFile {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        Ok(ctx
            .workspace
            .create_file_with_content(ctx.policy, a.str("filename")?, a.str("content")?)?)
    }
}

impl Default for ModifyFile {
    fn default() -> Self {
        Self(ToolSpec::new(
            MODIFY_FILE,
            "Replace lines start_line through end_line (1-based, inclusive) of a plain text file with new content. An empty new_content deletes those lines. Keep indentation intact. Not applicable to binary files such as .pdf, .docx, or spreadsheets.",
            vec![
                ParamSpec::required("filename", ParamType::String, "Name of the file to modify."),
                ParamSpec::required("start_line", ParamType::Integer, "First line number to replace."),
                ParamSpec::required("end_line", ParamType::Integer, "Last line number to replace."),
                ParamSpec::required("new_content", ParamType::String, "Replacement text, with proper indentation."),
            ],
        ))
    }
}

impl Tool for ModifyFile {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        Ok(ctx.workspace.modify_file(
            ctx.policy,
            a.str("filename")?,
            a.int("start_line")?,
            a.int("end_line")?,
            a.str("new_content")?,
        )?)
    }
}

impl Default for ListDir {
    fn default() -> Self {
        Self(ToolSpec::new(
            LIST_DIR,
            "List the entries of a workspace directory in sorted order, marking each as [dir] or [file]. Use \".\" for the workspace root. Only paths inside the workspace are accessible.",
            vec![ParamSpec::required("directory", ParamType::String, "The directory to list.")],
        ))
    }
}

impl Tool for ListDir {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        let directory = a.str("directory")?;
        let entries = ctx.workspace.list_dir(ctx.policy, directory)?;
        Ok(render_dir_listing(directory, &entries))
    }
}

impl Default for SearchKeyword {
    fn default() -> Self {
        Self(ToolSpec::new(
            SEARCH_KEYWORD,
            "Case-sensitive literal search for a keyword in a plain text file, or recursively in every plain text file under a folder. Returns matching lines with file names, line numbers and surrounding context lines. Binary formats like .pdf, .docx, .xlsx are skipped.",
            vec![
                ParamSpec::required("path", ParamType::String, "File or folder to search in."),
                ParamSpec::required("keyword", ParamType::String, "Keyword to search for."),
                ParamSpec::nullable(
                    "context_lines",
                    ParamType::Integer,
                    "Number of lines to include before and after each match (default 2).",
                ),
            ],
        ))
    }
}

impl Tool for SearchKeyword {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        let keyword = a.str("keyword")?;
        let context = a.opt_int("context_lines").unwrap_or(2);
        if context < 0 {
            return Err(ToolError::Failed("context_lines must not be negative".into()));
        }
        let matches = ctx
            .workspace
            .search_keyword(ctx.policy, a.str("path")?, keyword, context as usize)?;
        Ok(render_matches(keyword, &matches))
    }
}

impl Default for DeleteFileOrFolder {
    fn default() -> Self {
        Self(ToolSpec::new(
            DELETE,
            "Delete a file or folder (recursively). This is irreversible. An empty filename means everything in the working directory and is refused unless confirm_delete_all is true. Only paths inside the workspace are accessible.",
            vec![
                ParamSpec::required("filename", ParamType::String, "Name of the file or folder to delete."),
                ParamSpec::nullable(
                    "confirm_delete_all",
                    ParamType::Boolean,
                    "Must be true to delete the whole working directory.",
                ),
            ],
        ))
    }
}

impl Tool for DeleteFileOrFolder {
    fn spec(&self) -> &ToolSpec {
        &self.0
    }

    fn call(&self, args: &Map<String, Value>, ctx: &ToolContext<'_>) -> Result<String, ToolError> {
        let a = Args(args);
        Ok(ctx.workspace.delete_file_or_folder(
            ctx.policy,
            a.str("filename")?,
            a.opt_bool("confirm_delete_all").unwrap_or(false),
        )?)
    }
}

/// Registry holding the six workspace tools in their canonical order.
pub fn workspace_tools() -> ToolRegistry {
    ToolRegistry::new()
        .with(Arc::new(SeeFile::default()))
        .with(Arc::new(CreateFile::default()))
        .with(Arc::new(ModifyFile::default()))
        .with(Arc::new(ListDir::default()))
        .with(Arc::new(SearchKeyword::default()))
        .with(Arc::new(DeleteFileOrFolder::default()))
}
