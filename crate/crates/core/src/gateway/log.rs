//! Append-only call log (`llm_calls.jsonl`).

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, LmRequest, LmResponse};
use crate::runtime::memory::TokenUsage;

/// Longest text stored verbatim in a digest, in bytes.
pub const DIGEST_TEXT_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDigest {
    pub sha256: String,
    pub bytes: usize,
    /// Verbatim text, capped; absent when redacted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default)]
    pub truncated: bool,
}

impl TextDigest {
    pub fn of(text: &str, redact: bool) -> Self {
        let sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        let (stored, truncated) = if redact {
            (None, false)
        } else if text.len() > DIGEST_TEXT_CAP {
            let mut cut = DIGEST_TEXT_CAP;
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            (Some(text[..cut].to_string()), true)
        } else {
            (Some(text.to_string()), false)
        };
        Self {
            sha256,
            bytes: text.len(),
            text: stored,
            truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestDigest {
    /// Prompts are deterministic renders, so a hash identifies them.
    pub system_prompt_sha256: String,
    pub memory: TextDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub sequence: u64,
    pub timestamp: DateTime<Utc>,
    pub agent_name: String,
    pub step_index: usize,
    pub attempt: u32,
    pub model: String,
    pub request: RequestDigest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<TextDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_usage: Option<TokenUsage>,
    pub latency_ms: u64,
}

struct Writer {
    file: File,
    next_sequence: u64,
}

/// Single-writer log shared by every agent of a session.
pub struct CallLog {
    path: PathBuf,
    redact: bool,
    writer: Mutex<Writer>,
}

impl CallLog {
    /// Opens (or creates) the log and continues its sequence numbering.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::open_with(path, false)
    }

    pub fn open_with(path: impl AsRef<Path>, redact: bool) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let last = if path.exists() {
            read_log(&path)?.last().map(|e| e.sequence).unwrap_or(0)
        } else {
            0
        };
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        if !ends_with_newline(&mut file)? {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            path,
            redact,
            writer: Mutex::new(Writer {
                file,
                next_sequence: last + 1,
            }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub(crate) fn append(
        &self,
        timestamp: DateTime<Utc>,
        request: &LmRequest,
        attempt: u32,
        result: &Result<LmResponse, BackendError>,
        latency_ms: u64,
    ) -> io::Result<u64> {
        let mut writer = self.writer.lock().expect("call log lock");
        let sequence = writer.next_sequence;
        let entry = CallLogEntry {
            sequence,
            timestamp,
            agent_name: request.agent_name.clone(),
            step_index: request.step_index,
            attempt,
            model: request.model.clone(),
            request: RequestDigest {
                system_prompt_sha256: hex::encode(Sha256::digest(request.system_prompt.as_bytes())),
                memory: TextDigest::of(&request.serialized_memory, self.redact),
            },
            response: result.as_ref().ok().map(|r| TextDigest::of(&r.text, self.redact)),
            error: result.as_ref().err().map(|e| e.to_string()),
            token_usage: result.as_ref().ok().map(|r| r.token_usage),
            latency_ms,
        };
        let mut line = serde_json::to_string(&entry).map_err(io::Error::other)?;
        line.push('\n');
        writer.file.write_all(line.as_bytes())?;
        writer.file.flush()?;
        writer.next_sequence += 1;
        Ok(sequence)
    }
}

fn ends_with_newline(file: &mut File) -> io::Result<bool> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(true);
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    Ok(last[0] == b'\n')
}

/// Entries sorted by sequence. Unparseable lines (typically a torn tail
/// after a crash) are skipped with a warning; a missing file is empty.
pub fn read_log(path: &Path) -> io::Result<Vec<CallLogEntry>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CallLogEntry>(&line) {
            Ok(entry) => entries.push(entry),
            Err(e) => tracing::warn!(path = %path.display(), line = n + 1, error = %e, "skipping corrupt call log line"),
        }
    }
    entries.sort_by_key(|e| e.sequence);
    Ok(entries)
}
