//! On-disk formats.
//!
//! * chain: JSON Lines, one canonical block per line
//! * bank: pretty JSON of the bank state
//! * pending pool: `<chain>.pending.json` next to the chain
//! * descriptors, output tables, scenarios: JSON documents
//! * simulation event log: JSON Lines; summary: pretty JSON
//! * rankings: CSV
//!
//! Every write goes to a temporary sibling first and is renamed into place.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use probo_core::canonical::to_canonical_string;
use probo_core::ledger::{Block, Chain};
use probo_core::network::PendingPool;
use probo_core::reputation::ScoreBoard;
use probo_core::simnet::SimEvent;
use probo_core::tokenomics::NodeId;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum FileError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    /// A chain line that does not decode as a block.
    #[error("{}: invalid at index {index}: malformed block ({message})", path.display())]
    MalformedBlock {
        path: PathBuf,
        index: usize,
        message: String,
    },
    #[error("{}: locked by another writer (remove the lock file if stale)", path.display())]
    Locked { path: PathBuf },
}

impl FileError {
    fn io(path: &Path, source: io::Error) -> Self {
        FileError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, message: impl ToString) -> Self {
        FileError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn pending_path(chain: &Path) -> PathBuf {
    with_suffix(chain, ".pending.json")
}

pub fn lock_path(chain: &Path) -> PathBuf {
    with_suffix(chain, ".lock")
}

/// Replace `path` with `bytes` via write-to-temp and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FileError> {
    let tmp = with_suffix(path, ".tmp");
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| FileError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FileError::parse(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| FileError::parse(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Canonical JSON Lines: one value per line, keys sorted.
pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>, probo_core::CanonicalError> {
    let mut out = Vec::new();
    for item in items {
        out.extend_from_slice(to_canonical_string(item)?.as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

pub fn chain_bytes(chain: &Chain) -> Result<Vec<u8>, probo_core::CanonicalError> {
    jsonl_bytes(chain.blocks())
}

pub fn write_chain(path: &Path, chain: &Chain) -> Result<(), FileError> {
    let bytes = chain_bytes(chain).map_err(|e| FileError::parse(path, e))?;
    write_atomic(path, &bytes)
}

/// Load blocks without validating them; see [`Chain::validate`].
pub fn read_chain(path: &Path) -> Result<Chain, FileError> {
    let file = File::open(path).map_err(|e| FileError::io(path, e))?;
    let mut blocks = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FileError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let block: Block = serde_json::from_str(&line).map_err(|e| FileError::MalformedBlock {
            path: path.to_path_buf(),
            index,
            message: e.to_string(),
        })?;
        blocks.push(block);
    }
    Ok(Chain::from_blocks(blocks))
}

/// The pending pool sidecar; a missing file is an empty pool.
pub fn read_pending(chain: &Path) -> Result<PendingPool, FileError> {
    let path = pending_path(chain);
    if path.exists() {
        read_json(&path)
    } else {
        Ok(PendingPool::default())
    }
}

pub fn write_events(path: &Path, events: &[SimEvent]) -> Result<(), FileError> {
    let bytes = jsonl_bytes(events).map_err(|e| FileError::parse(path, e))?;
    write_atomic(path, &bytes)
}

/// Ranking CSV: `rank,id,score,accepted,rejected,verified`.
pub fn ranking_csv(board: &ScoreBoard, ranked: &[(NodeId, f64)]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "id", "score", "accepted", "rejected", "verified"])?;
    for (i, (id, score)) in ranked.iter().enumerate() {
        let c = board.counts.get(id).copied().unwrap_or_default();
        w.write_record([
            (i + 1).to_string(),
            id.to_string(),
            format_score(*score),
            c.accepted.to_string(),
            c.rejected.to_string(),
            c.verified.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Shortest round-trip decimal, with `-0` printed as `0`.
fn format_score(score: f64) -> String {
    if score == 0.0 {
        "0".into()
    } else {
        format!("{score}")
    }
}

/// Advisory single-writer lock, released on drop.
#[derive(Debug)]
pub struct WriteLock {
    path: PathBuf,
}

impl WriteLock {
    pub fn acquire(chain: &Path) -> Result<WriteLock, FileError> {
        let path = lock_path(chain);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WriteLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(FileError::Locked { path }),
            Err(e) => Err(FileError::io(&path, e)),
        }
    }
}

impl Drop for WriteLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
