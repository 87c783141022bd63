//! Append-only JSON Lines event log with fsync-before-ack and replay.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::state::{ApplyError, LogEntry, State};

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("event log {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event log corrupt at seq {seq}: {reason}")]
    Corrupt { seq: u64, reason: String },
    #[error("event log replay failed: {0}")]
    Replay(#[from] ApplyError),
    #[error("event log is unusable after a failed write; restart to recover")]
    Poisoned,
    #[error("injected fault at {0:?}")]
    Injected(FaultPoint),
}

/// Where a simulated crash interrupts an append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Nothing reaches the file.
    BeforeWrite,
    /// Half of the bytes reach the file, without the final newline.
    MidWrite,
    /// The entry is durable but the caller is never told.
    AfterWriteBeforeAck,
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    poisoned: bool,
    fault: Option<FaultPoint>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// What recovery found besides the replayed state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub entries: usize,
    /// Bytes of an incomplete final line that were cut off.
    pub truncated_bytes: usize,
}

impl EventLog {
    /// Opens (or creates) the log, truncates a torn final line, and replays
    /// every entry into a fresh state.
    pub fn open(path: impl Into<PathBuf>) -> Result<(Self, State, RecoveryReport), LogError> {
        let path = path.into();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io_err(&path))?;

        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        let mut report = RecoveryReport {
            truncated_bytes: bytes.len() - complete,
            ..Default::default()
        };
        if report.truncated_bytes > 0 {
            log::warn!(
                "{}: dropping {} byte(s) of an incomplete final entry",
                path.display(),
                report.truncated_bytes
            );
            file.set_len(complete as u64).map_err(io_err(&path))?;
            file.sync_all().map_err(io_err(&path))?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err(&path))?;

        let state = replay(&bytes[..complete])?;
        report.entries = state.last_seq as usize;
        let log = Self {
            path,
            file,
            poisoned: false,
            fault: None,
        };
        Ok((log, state, report))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes the entries as one buffer and syncs it to disk. After any
    /// failure the log refuses further writes, like a crashed process.
    pub fn append(&mut self, entries: &[LogEntry]) -> Result<(), LogError> {
        if self.poisoned {
            return Err(LogError::Poisoned);
        }
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e).expect("log entries serialize");
            buf.push(b'\n');
        }
        let fault = self.fault.take();
        if fault == Some(FaultPoint::BeforeWrite) {
            self.poisoned = true;
            return Err(LogError::Injected(FaultPoint::BeforeWrite));
        }
        if fault == Some(FaultPoint::MidWrite) {
            self.poisoned = true;
            let half = (buf.len() / 2).max(1).min(buf.len() - 1);
            self.file.write_all(&buf[..half]).map_err(io_err(&self.path))?;
            let _ = self.file.sync_data();
            return Err(LogError::Injected(FaultPoint::MidWrite));
        }
        let written = self
            .file
            .write_all(&buf)
            .and_then(|()| self.file.sync_data());
        if let Err(source) = written {
            self.poisoned = true;
            return Err(LogError::Io {
                path: self.path.clone(),
                source,
            });
        }
        if fault == Some(FaultPoint::AfterWriteBeforeAck) {
            self.poisoned = true;
            return Err(LogError::Injected(FaultPoint::AfterWriteBeforeAck));
        }
        Ok(())
    }

    /// Arms a simulated crash for the next append.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, point: FaultPoint) {
        self.fault = Some(point);
    }
}

/// Folds complete log lines into a state. Unparseable lines and sequence
/// gaps are errors naming the seq where replay stopped.
pub fn replay(bytes: &[u8]) -> Result<State, LogError> {
    let mut state = State::default();
    for line in bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
        let expected = state.last_seq + 1;
        let entry: LogEntry = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
            seq: expected,
            reason: e.to_string(),
        })?;
        if entry.seq != expected {
            return Err(LogError::Corrupt {
                seq: expected,
                reason: format!("found seq {} where {expected} was expected", entry.seq),
            });
        }
        state.apply(&entry)?;
    }
    Ok(state)
}
