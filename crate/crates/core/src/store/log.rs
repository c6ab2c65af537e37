//! Append-only JSON-lines log backing a durable store.
//!
//! Layout of a store directory:
//!
//! ```text
//! replica       replica id, one line
//! log.jsonl     one entry per line, fsynced before a write is acknowledged
//! ```
//!
//! A crash can leave a torn final line; replay drops it and truncates the
//! file back to the last complete entry.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, RevisionedDoc, StoreError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub(super) enum Entry {
    Revision(RevisionedDoc),
    Checkpoint { peer: String, seq: u64 },
}

pub(super) struct Log {
    dir: PathBuf,
    file: File,
}

impl Log {
    pub(super) fn open(dir: &Path, replica_id: &str) -> Result<(Log, String, Vec<Entry>), StoreError> {
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let id_path = dir.join("replica");
        let replica_id = match std::fs::read_to_string(&id_path) {
            Ok(s) => s.trim().to_string(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                write_synced(&id_path, format!("{replica_id}\n").as_bytes())?;
                replica_id.to_string()
            }
            Err(e) => return Err(io_err(e)),
        };
        let path = dir.join("log.jsonl");
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err)?;
        let (entries, good_len) = replay(&file)?;
        if good_len < file.metadata().map_err(io_err)?.len() {
            file.set_len(good_len).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        Ok((
            Log {
                dir: dir.to_path_buf(),
                file,
            },
            replica_id,
            entries,
        ))
    }

    pub(super) fn dir(&self) -> &Path {
        &self.dir
    }

    /// Append entries in a single write and fsync.
    pub(super) fn append(&mut self, entries: &[Entry]) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(io_err)?;
        self.file.sync_data().map_err(io_err)
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let mut f = File::create(path).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    if let Some(parent) = path.parent() {
        // make the new directory entry durable too
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Parse complete lines; stop at the first line that is unterminated or does
/// not parse. Returns the entries and the byte length of the good prefix.
fn replay(file: &File) -> Result<(Vec<Entry>, u64), StoreError> {
    let mut reader = BufReader::new(file);
    reader.seek(SeekFrom::Start(0)).map_err(io_err)?;
    let mut entries = Vec::new();
    let mut good = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_err)?;
        if n == 0 || line.last() != Some(&b'\n') {
            break;
        }
        match serde_json::from_slice::<Entry>(&line) {
            Ok(e) => entries.push(e),
            Err(_) => break,
        }
        good += n as u64;
    }
    Ok((entries, good))
}
