use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::retrieval::{Scorer, MAX_K};

/// One relevance judgement: 1 irrelevant, 2 somewhat relevant, 3 very relevant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceAnnotation {
    pub qid: String,
    pub tid: u32,
    pub rank: u8,
    pub score: u8,
    pub annotator: String,
    pub scorer: Scorer,
    pub ts: String,
}

impl RelevanceAnnotation {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(1..=3).contains(&self.score) {
            return Err(EvalError::InvalidAnnotation(format!(
                "score must be 1, 2 or 3, got {}",
                self.score
            )));
        }
        if !(1..=MAX_K).contains(&usize::from(self.rank)) {
            return Err(EvalError::InvalidAnnotation(format!(
                "rank must be in 1..={MAX_K}, got {}",
                self.rank
            )));
        }
        if self.qid.is_empty() || self.annotator.trim().is_empty() {
            return Err(EvalError::InvalidAnnotation(
                "qid and annotator must be non-empty".into(),
            ));
        }
        Ok(())
    }

    fn key(&self) -> (String, u32, String) {
        (self.qid.clone(), self.tid, self.annotator.clone())
    }
}

/// Complete lines of a store file and the byte length they occupy. Bytes
/// after the last newline are an interrupted write.
fn parse_complete(bytes: &[u8]) -> Result<(Vec<RelevanceAnnotation>, usize), EvalError> {
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut out = Vec::new();
    for (n, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let a: RelevanceAnnotation =
            serde_json::from_slice(line).map_err(|e| EvalError::CorruptStore {
                line: n + 1,
                message: e.to_string(),
            })?;
        out.push(a);
    }
    Ok((out, complete))
}

/// Every complete record in the store at `path`, ignoring a trailing
/// partial line. A missing file reads as empty.
pub fn read_annotations(path: &Path) -> Result<Vec<RelevanceAnnotation>, EvalError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    Ok(parse_complete(&bytes)?.0)
}

/// What opening a store found.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreOpen {
    pub records: usize,
    /// Bytes of an interrupted trailing write moved to the quarantine file.
    pub quarantined_bytes: usize,
}

/// Append-only JSON Lines annotation log. Each append is flushed to disk
/// before it returns.
#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    file: File,
    records: Vec<RelevanceAnnotation>,
    keys: HashSet<(String, u32, String)>,
}

impl AnnotationStore {
    pub fn quarantine_path(path: &Path) -> PathBuf {
        let mut name = path
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".quarantine");
        path.with_file_name(name)
    }

    /// Opens or creates the store. A trailing partial line left by an
    /// interrupted write is appended to `<store>.quarantine` and cut off.
    pub fn open(path: &Path) -> Result<(Self, StoreOpen), EvalError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (records, complete) = parse_complete(&bytes)?;
        let partial = bytes.len() - complete;
        if partial > 0 {
            let mut q = OpenOptions::new()
                .append(true)
                .create(true)
                .open(Self::quarantine_path(path))?;
            q.write_all(&bytes[complete..])?;
            q.write_all(b"\n")?;
            q.sync_all()?;
            file.set_len(complete as u64)?;
            file.sync_all()?;
            log::warn!("quarantined {partial} bytes of an interrupted annotation write");
        }
        let mut keys = HashSet::new();
        for r in &records {
            keys.insert(r.key());
        }
        let info = StoreOpen {
            records: records.len(),
            quarantined_bytes: partial,
        };
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                records,
                keys,
            },
            info,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[RelevanceAnnotation] {
        &self.records
    }

    pub fn contains(&self, qid: &str, tid: u32, annotator: &str) -> bool {
        self.keys
            .contains(&(qid.to_string(), tid, annotator.to_string()))
    }

    /// Validates, rejects duplicates of (qid, tid, annotator), then writes
    /// and syncs one line.
    pub fn append(&mut self, a: RelevanceAnnotation) -> Result<(), EvalError> {
        a.validate()?;
        if self.keys.contains(&a.key()) {
            return Err(EvalError::Duplicate {
                qid: a.qid,
                tid: a.tid,
                annotator: a.annotator,
            });
        }
        let mut line = serde_json::to_vec(&a)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.keys.insert(a.key());
        self.records.push(a);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ann(qid: &str, tid: u32, score: u8) -> RelevanceAnnotation {
        RelevanceAnnotation {
            qid: qid.into(),
            tid,
            rank: 1,
            score,
            annotator: "a1".into(),
            scorer: Scorer::DualEncoder,
            ts: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn json_line_shape() {
        let v = serde_json::to_value(ann("q1", 4, 2)).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"qid": "q1", "tid": 4, "rank": 1, "score": 2, "annotator": "a1",
                "scorer": "dual_encoder", "ts": "2024-01-01T00:00:00Z"})
        );
    }

    #[test]
    fn validation() {
        assert!(ann("q", 1, 4).validate().is_err());
        assert!(ann("q", 1, 0).validate().is_err());
        let mut a = ann("q", 1, 3);
        a.rank = 51;
        assert!(a.validate().is_err());
        a.rank = 0;
        assert!(a.validate().is_err());
        a.rank = 5;
        assert!(a.validate().is_ok());
        assert!(ann("q", 1, 3).validate().is_ok());
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        let (mut s, info) = AnnotationStore::open(&path).unwrap();
        assert_eq!(info.records, 0);
        s.append(ann("q1", 1, 3)).unwrap();
        s.append(ann("q1", 2, 1)).unwrap();
        let before = std::fs::read(&path).unwrap();
        assert!(matches!(
            s.append(ann("q1", 1, 2)),
            Err(EvalError::Duplicate { .. })
        ));
        assert!(matches!(
            s.append(ann("q1", 3, 5)),
            Err(EvalError::InvalidAnnotation(_))
        ));
        assert_eq!(std::fs::read(&path).unwrap(), before);
        drop(s);
        let (s, info) = AnnotationStore::open(&path).unwrap();
        assert_eq!(
            info,
            StoreOpen {
                records: 2,
                quarantined_bytes: 0
            }
        );
        assert!(s.contains("q1", 2, "a1"));
        assert_eq!(read_annotations(&path).unwrap(), s.records());
    }

    #[test]
    fn corrupt_complete_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(
            AnnotationStore::open(&path),
            Err(EvalError::CorruptStore { line: 1, .. })
        ));
    }
}
