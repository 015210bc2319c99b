//! On-disk formats: the cold transcript log, the warm summary store, JSONL
//! helpers for event logs, and the output directory layout.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{Message, Summary, SummaryId};

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("no warm record with id {0}")]
    NotFound(SummaryId),
    #[error("log is closed")]
    Closed,
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

/// Lines of a newline-delimited file. A last line without its newline is a
/// torn write and is left out, with a warning.
fn complete_lines(path: &Path) -> Result<(Vec<String>, u64), PersistError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let complete = buf.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < buf.len() {
        log::warn!("{}: ignoring torn trailing record ({} bytes)", path.display(), buf.len() - complete);
    }
    let text = String::from_utf8_lossy(&buf[..complete]);
    Ok((text.lines().map(str::to_owned).collect(), complete as u64))
}

fn parse_line<T: DeserializeOwned>(path: &Path, n: usize, line: &str) -> Result<T, PersistError> {
    serde_json::from_str(line).map_err(|e| PersistError::Corrupt {
        path: path.to_path_buf(),
        line: n + 1,
        reason: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), PersistError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = io::BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PersistError> {
    let (lines, _) = complete_lines(path)?;
    lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| parse_line(path, i, l)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdRecord {
    pub session_id: String,
    pub seq: u64,
    pub message: Message,
}

/// Append-only transcript log for one session.
#[derive(Debug)]
pub struct ColdLog {
    path: PathBuf,
    session_id: String,
    file: Option<File>,
    next_seq: u64,
}

impl ColdLog {
    /// Open for appending, continuing after the last complete record. A torn
    /// tail is cut off so the next append starts on a fresh line.
    pub fn open(path: impl Into<PathBuf>, session_id: &str) -> Result<Self, PersistError> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut next_seq = 0;
        if path.exists() {
            let (lines, complete) = complete_lines(&path)?;
            if let Some(last) = lines.iter().rev().find(|l| !l.trim().is_empty()) {
                let r: ColdRecord = parse_line(&path, lines.len() - 1, last)?;
                next_seq = r.seq + 1;
            }
            OpenOptions::new().write(true).open(&path)?.set_len(complete)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, session_id: session_id.to_string(), file: Some(file), next_seq })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, message: &Message) -> Result<u64, PersistError> {
        let file = self.file.as_mut().ok_or(PersistError::Closed)?;
        let rec = ColdRecord { session_id: self.session_id.clone(), seq: self.next_seq, message: message.clone() };
        let mut line = serde_json::to_vec(&rec).map_err(io::Error::from)?;
        line.push(b'\n');
        file.write_all(&line)?;
        self.next_seq += 1;
        Ok(rec.seq)
    }

    pub fn close(&mut self) -> Result<(), PersistError> {
        if let Some(f) = self.file.take() {
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn replay(path: &Path) -> Result<Vec<ColdRecord>, PersistError> {
        let recs: Vec<ColdRecord> = read_jsonl(path)?;
        for (i, w) in recs.windows(2).enumerate() {
            if w[1].seq <= w[0].seq {
                return Err(PersistError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 2,
                    reason: "sequence numbers must increase".into(),
                });
            }
        }
        Ok(recs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmRecord {
    #[serde(flatten)]
    pub summary: Summary,
    /// Injection count when the summary was written.
    pub created_at: u64,
}

/// Keyed summary table in one JSONL file. Puts append; the in-memory index
/// points at the latest line for each id.
#[derive(Debug)]
pub struct WarmStore {
    path: PathBuf,
    file: File,
    index: BTreeMap<SummaryId, u64>,
    end: u64,
}

impl WarmStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut index = BTreeMap::new();
        let mut end = 0;
        if path.exists() {
            let (lines, complete) = complete_lines(&path)?;
            for (i, line) in lines.iter().enumerate() {
                if !line.trim().is_empty() {
                    let r: WarmRecord = parse_line(&path, i, line)?;
                    index.insert(r.summary.id, end);
                }
                end += line.len() as u64 + 1;
            }
            debug_assert_eq!(end, complete);
            OpenOptions::new().write(true).open(&path)?.set_len(complete)?;
        }
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        Ok(Self { path, file, index, end })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SummaryId> + '_ {
        self.index.keys().copied()
    }

    pub fn put(&mut self, record: &WarmRecord) -> Result<(), PersistError> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::from)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.index.insert(record.summary.id, self.end);
        self.end += line.len() as u64;
        Ok(())
    }

    pub fn get(&mut self, id: SummaryId) -> Result<WarmRecord, PersistError> {
        let &offset = self.index.get(&id).ok_or(PersistError::NotFound(id))?;
        self.file.seek(SeekFrom::Start(offset))?;
        let mut line = String::new();
        BufReader::new(&mut self.file).read_line(&mut line)?;
        parse_line(&self.path, 0, line.trim_end())
    }
}

/// Output tree: `runs/<run-id>/…` and `sessions/<id>/…`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn events_log(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join("events.log")
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn cold_log(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("cold.log")
    }

    pub fn warm_db(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("warm.db")
    }

    pub fn hibernate_img(&self, id: &str) -> PathBuf {
        self.session_dir(id).join("hibernate.img")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::summarize_stub;

    #[test]
    fn sequences_are_consecutive_and_close_guards() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = ColdLog::open(dir.path().join("cold.log"), "s").unwrap();
        assert_eq!(log.append(&Message::new(0, 10)).unwrap(), 0);
        assert_eq!(log.append(&Message::new(1, 10)).unwrap(), 1);
        log.close().unwrap();
        assert!(matches!(log.append(&Message::new(2, 10)), Err(PersistError::Closed)));
        let mut again = ColdLog::open(dir.path().join("cold.log"), "s").unwrap();
        assert_eq!(again.append(&Message::new(2, 10)).unwrap(), 2);
    }

    #[test]
    fn torn_tail_is_ignored_then_overwritten() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cold.log");
        let mut log = ColdLog::open(&path, "s").unwrap();
        log.append(&Message::new(0, 10)).unwrap();
        log.close().unwrap();
        OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"session_id\":\"s\",\"se").unwrap();
        assert_eq!(ColdLog::replay(&path).unwrap().len(), 1);
        let mut log = ColdLog::open(&path, "s").unwrap();
        log.append(&Message::new(1, 10)).unwrap();
        let seqs: Vec<u64> = ColdLog::replay(&path).unwrap().iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![0, 1]);
    }

    #[test]
    fn warm_put_get_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("warm.db");
        let mut store = WarmStore::open(&path).unwrap();
        let a = WarmRecord { summary: summarize_stub(3, &[Message::new(0, 40).key(0.7)], 0.25), created_at: 1 };
        let mut b = a.clone();
        b.created_at = 9;
        store.put(&a).unwrap();
        store.put(&b).unwrap();
        assert_eq!(store.get(3).unwrap(), b);
        assert!(matches!(store.get(4), Err(PersistError::NotFound(4))));
        drop(store);
        let mut store = WarmStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(3).unwrap(), b);
    }
}
