//! Sandbox path resolution.
//!
//! Paths are resolved component by component against the canonical root.
//! Symbolic links are expanded as they are met, so a link whose target lies
//! outside the root is rejected even when the target does not exist yet.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::fs;
use std::path::{Component, Path, PathBuf};

use super::WorkspaceError;

const MAX_LINK_EXPANSIONS: usize = 40;

pub(crate) fn resolve(
    root: &Path,
    alias_root: &Path,
    candidate: &str,
    follow_final: bool,
) -> Result<PathBuf, WorkspaceError> {
    if candidate.is_empty() {
        return Err(WorkspaceError::Argument("path must not be empty".into()));
    }
    if candidate.contains('\0') {
        return Err(WorkspaceError::violation(candidate));
    }
    let given = Path::new(candidate);
    let relative: PathBuf = if given.is_absolute() {
        strip_root(given, root, alias_root).ok_or_else(|| WorkspaceError::violation(candidate))?
    } else {
        given.to_path_buf()
    };

    let mut queue: VecDeque<OsString> = VecDeque::new();
    for comp in relative.components() {
        match comp {
            Component::Normal(name) => queue.push_back(name.to_os_string()),
            Component::ParentDir => queue.push_back("..".into()),
            Component::CurDir => {}
            Component::RootDir | Component::Prefix(_) => {
                return Err(WorkspaceError::violation(candidate))
            }
        }
    }

    let mut resolved = root.to_path_buf();
    let mut expansions = 0;
    while let Some(name) = queue.pop_front() {
        if name == ".." {
            if resolved == root {
                return Err(WorkspaceError::violation(candidate));
            }
            resolved.pop();
            continue;
        }
        let next = resolved.join(&name);
        let is_last = queue.is_empty();
        let is_link = fs::symlink_metadata(&next)
            .map(|m| m.file_type().is_symlink())
            .unwrap_or(false);
        if !is_link || (is_last && !follow_final) {
            resolved = next;
            continue;
        }
        expansions += 1;
        if expansions > MAX_LINK_EXPANSIONS {
            return Err(WorkspaceError::Argument(format!(
                "too many levels of symbolic links while resolving '{candidate}'"
            )));
        }
        let target = fs::read_link(&next).map_err(|e| WorkspaceError::io(&next, e))?;
        let mut expanded: Vec<OsString> = Vec::new();
        if target.is_absolute() {
            let inside = strip_root(&target, root, alias_root)
                .ok_or_else(|| WorkspaceError::violation(candidate))?;
            resolved = root.to_path_buf();
            collect(&inside, &mut expanded, candidate)?;
        } else {
            collect(&target, &mut expanded, candidate)?;
        }
        for comp in expanded.into_iter().rev() {
            queue.push_front(comp);
        }
    }
    Ok(resolved)
}

fn collect(path: &Path, out: &mut Vec<OsString>, candidate: &str) -> Result<(), WorkspaceError> {
    for comp in path.components() {
        match comp {
            Component::Normal(name) => out.push(name.to_os_string()),
            Component::ParentDir => out.push("..".into()),
            Component::CurDir => {}
            Component::RootDir | Component::Prefix(_) => {
                return Err(WorkspaceError::violation(candidate))
            }
        }
    }
    Ok(())
}

/// Lexical prefix strip that tolerates `.`/`..` inside the absolute candidate.
fn strip_root(path: &Path, root: &Path, alias_root: &Path) -> Option<PathBuf> {
    let normalized = lexical_normalize(path)?;
    normalized
        .strip_prefix(root)
        .or_else(|_| normalized.strip_prefix(alias_root))
        .ok()
        .map(Path::to_path_buf)
}

fn lexical_normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::ParentDir => {
                if !out.pop() || out.as_os_str().is_empty() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_normalize_refuses_to_climb_above_root() {
        assert_eq!(
            lexical_normalize(Path::new("/a/b/../c")),
            Some(PathBuf::from("/a/c"))
        );
        assert_eq!(lexical_normalize(Path::new("/..")), None);
    }
}
