use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GatewayError, PromptRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Call providers and persist every completion.
    Record,
    /// Serve only from the transcript; never contact a provider.
    Replay,
    /// Call providers, persist nothing.
    Live,
}

/// One transcript line: `{hash, request, output_text}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub request: PromptRequest,
    pub output_text: String,
}

/// Recorded completions keyed by request digest.
///
/// Entries are kept sorted by digest so a saved transcript is byte-stable
/// regardless of the order in which completions arrived.
#[derive(Debug, Clone)]
pub struct Transcript {
    pub mode: Mode,
    entries: BTreeMap<String, TranscriptEntry>,
    path: Option<PathBuf>,
    dirty: bool,
}

pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";

impl Transcript {
    pub fn live() -> Self {
        Transcript {
            mode: Mode::Live,
            entries: BTreeMap::new(),
            path: None,
            dirty: false,
        }
    }

    /// In-memory transcript; nothing is written on [`flush`](Self::flush).
    pub fn in_memory(mode: Mode, entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Transcript {
            mode,
            entries: entries.into_iter().map(|e| (e.hash.clone(), e)).collect(),
            path: None,
            dirty: false,
        }
    }

    /// Opens `dir/transcript.jsonl` (or `path` itself when it is a file).
    /// A missing file is an empty transcript in record mode and an error in
    /// replay mode.
    pub fn open(path: &Path, mode: Mode) -> Result<Self, GatewayError> {
        let file = if path.is_dir() || path.extension().is_none() {
            path.join(TRANSCRIPT_FILE)
        } else {
            path.to_path_buf()
        };
        let mut entries = BTreeMap::new();
        if file.exists() {
            let reader = BufReader::new(fs::File::open(&file)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: TranscriptEntry = serde_json::from_str(&line).map_err(|err| {
                    GatewayError::Transcript(format!("{}:{}: {err}", file.display(), n + 1))
                })?;
                entries.insert(e.hash.clone(), e);
            }
        } else if mode == Mode::Replay {
            return Err(GatewayError::Transcript(format!(
                "no transcript at {}",
                file.display()
            )));
        }
        Ok(Transcript {
            mode,
            entries,
            path: (mode == Mode::Record).then_some(file),
            dirty: false,
        })
    }

    pub fn get(&self, hash: &str) -> Option<&TranscriptEntry> {
        self.entries.get(hash)
    }

    pub fn insert(&mut self, entry: TranscriptEntry) {
        self.entries.insert(entry.hash.clone(), entry);
        self.dirty = true;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &TranscriptEntry> {
        self.entries.values()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            out.push_str(&serde_json::to_string(e).expect("transcript entry serializes"));
            out.push('\n');
        }
        out
    }

    /// Rewrites the backing file if anything was recorded since the last flush.
    pub fn flush(&mut self) -> Result<(), GatewayError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if !self.dirty {
            return Ok(());
        }
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_jsonl().as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        self.dirty = false;
        Ok(())
    }
}
