//! Append-only survey store.
//!
//! A data directory holds:
//!
//! * `store.log`: the first line is exactly `MIGTRIAGE-LOG 1`. Every following
//!   line is `<checksum> <json>\n`, where `<json>` is one compact JSON entry
//!   and `<checksum>` is the first 16 lowercase hex digits of the SHA-256 of
//!   the JSON bytes. Entries are never rewritten. A final line without its
//!   newline or with a bad checksum is a torn write and is cut off on open;
//!   a bad line anywhere else, or a final line whose checksum matches but
//!   whose JSON does not decode, is reported as corruption.
//! * `snapshot.json`: the full state as of byte offset `log_offset` of the
//!   log, replaced atomically every [`SNAPSHOT_EVERY`] appends. Opening loads
//!   the snapshot and replays the log from that offset.
//! * `models/<id>.json`: published models, written before the log entry that
//!   refers to them.
//!
//! Appends are flushed with `fsync` before the in-memory state changes, so a
//! caller that got `Ok` back can rely on the entry surviving a crash.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use migtriage_core::fingerprint::hex_digest;
use migtriage_core::metrics::FieldImportance;
use migtriage_core::{EvaluationReport, MigrantProfile, ModelKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::files::{self, ModelEnvelope};

pub const LOG_HEADER: &str = "MIGTRIAGE-LOG 1\n";
pub const SNAPSHOT_EVERY: u64 = 64;
const SNAPSHOT_FORMAT: &str = "migtriage-snapshot";
const CHECKSUM_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: corrupt at byte {offset}: {message}", path.display())]
    Corrupt { path: PathBuf, offset: u64, message: String },
    #[error("unknown model \"{0}\"")]
    UnknownModel(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub id: u64,
    pub profile: MigrantProfile,
    pub submitted_at_ms: u64,
    pub schema_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub record_id: u64,
    pub score: f64,
    pub flagged: bool,
    pub model_id: String,
    pub top_factors: Vec<String>,
    pub assessed_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub kind: ModelKind,
    pub schema_version: String,
    pub published_at_ms: u64,
}

/// Contents of `models/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedModel {
    pub id: String,
    pub envelope: ModelEnvelope,
    pub report: EvaluationReport,
    /// Field-level ranking used for `top_factors`, most important first.
    pub importance: Vec<FieldImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Entry {
    Survey(SurveyRecord),
    Labels {
        #[serde(with = "label_pairs")]
        labels: BTreeMap<u64, bool>,
    },
    Assessments { model_id: String, items: Vec<RiskAssessment> },
    Published(ModelSummary),
}

/// Labels as `[[id, label], ...]`: integer map keys do not survive the
/// buffering serde does for internally tagged enums.
mod label_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(labels: &BTreeMap<u64, bool>, s: S) -> Result<S::Ok, S::Error> {
        labels.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u64, bool>, D::Error> {
        Ok(Vec::<(u64, bool)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    /// In id order; ids start at 1 and are never reused.
    pub records: Vec<SurveyRecord>,
    pub labels: BTreeMap<u64, bool>,
    /// Latest assessment of each record.
    pub assessments: BTreeMap<u64, RiskAssessment>,
    pub models: Vec<ModelSummary>,
    pub active_model: Option<String>,
}

impl StoreState {
    fn apply(&mut self, entry: Entry) {
        match entry {
            Entry::Survey(r) => self.records.push(r),
            Entry::Labels { labels } => self.labels.extend(labels),
            Entry::Assessments { items, .. } => {
                for a in items {
                    self.assessments.insert(a.record_id, a);
                }
            }
            Entry::Published(m) => {
                self.active_model = Some(m.id.clone());
                self.models.push(m);
            }
        }
    }

    pub fn next_record_id(&self) -> u64 {
        self.records.last().map_or(1, |r| r.id + 1)
    }

    pub fn next_model_id(&self) -> String {
        format!("m{}", self.models.len() + 1)
    }

    pub fn record(&self, id: u64) -> Option<&SurveyRecord> {
        let idx = self.records.binary_search_by_key(&id, |r| r.id).ok()?;
        Some(&self.records[idx])
    }

    pub fn model(&self, id: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.id == id)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    format_version: u32,
    log_offset: u64,
    state: StoreState,
}

struct Writer {
    file: File,
    len: u64,
    since_snapshot: u64,
}

pub struct Store {
    dir: PathBuf,
    writer: Mutex<Writer>,
    state: RwLock<StoreState>,
}

fn checksum(json: &[u8]) -> String {
    hex_digest(json)[..CHECKSUM_LEN].to_string()
}

fn encode_line(entry: &Entry) -> Vec<u8> {
    let json = serde_json::to_vec(entry).expect("serializable entry");
    let mut line = checksum(&json).into_bytes();
    line.push(b' ');
    line.extend_from_slice(&json);
    line.push(b'\n');
    line
}

enum LineError {
    /// Malformed or failing its checksum: what a torn write leaves behind.
    Damaged(String),
    /// Intact bytes that do not decode to an entry. Never a torn write.
    Undecodable(String),
}

fn decode_line(line: &[u8]) -> Result<Entry, LineError> {
    if line.len() < CHECKSUM_LEN + 1 || line[CHECKSUM_LEN] != b' ' {
        return Err(LineError::Damaged("malformed line".into()));
    }
    let (sum, json) = (&line[..CHECKSUM_LEN], &line[CHECKSUM_LEN + 1..]);
    if sum != checksum(json).as_bytes() {
        return Err(LineError::Damaged("checksum mismatch".into()));
    }
    serde_json::from_slice(json).map_err(|e| LineError::Undecodable(e.to_string()))
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.join("models")).map_err(io(dir))?;
        let log_path = dir.join("store.log");
        if !log_path.exists() {
            files::write_atomic(&log_path, LOG_HEADER.as_bytes()).map_err(|e| StoreError::Corrupt {
                path: log_path.clone(),
                offset: 0,
                message: e.to_string(),
            })?;
        }
        let bytes = fs::read(&log_path).map_err(io(&log_path))?;
        let corrupt = |offset: u64, message: String| StoreError::Corrupt {
            path: log_path.clone(),
            offset,
            message,
        };
        if !bytes.starts_with(LOG_HEADER.as_bytes()) {
            return Err(corrupt(0, "missing MIGTRIAGE-LOG 1 header".into()));
        }

        let snap_path = dir.join("snapshot.json");
        let (mut state, start) = if snap_path.exists() {
            let snap: Snapshot = files::read_json(&snap_path).map_err(|e| StoreError::Corrupt {
                path: snap_path.clone(),
                offset: 0,
                message: e.to_string(),
            })?;
            if snap.format != SNAPSHOT_FORMAT || snap.format_version != 1 {
                return Err(corrupt(0, "unsupported snapshot format".into()));
            }
            (snap.state, snap.log_offset)
        } else {
            (StoreState::default(), LOG_HEADER.len() as u64)
        };
        if start > bytes.len() as u64 {
            return Err(corrupt(start, "snapshot points past the end of the log".into()));
        }

        let mut pos = start as usize;
        let mut good = pos;
        while pos < bytes.len() {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map(|i| pos + i);
            let Some(end) = end else {
                break; // torn final line
            };
            match decode_line(&bytes[pos..end]) {
                Ok(entry) => state.apply(entry),
                Err(LineError::Damaged(_)) if end + 1 == bytes.len() => break,
                Err(LineError::Damaged(msg) | LineError::Undecodable(msg)) => return Err(corrupt(pos as u64, msg)),
            }
            pos = end + 1;
            good = pos;
        }

        let mut file = OpenOptions::new().read(true).write(true).open(&log_path).map_err(io(&log_path))?;
        if good < bytes.len() {
            file.set_len(good as u64).map_err(io(&log_path))?;
            file.sync_all().map_err(io(&log_path))?;
        }
        file.seek(SeekFrom::Start(good as u64)).map_err(io(&log_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            writer: Mutex::new(Writer {
                file,
                len: good as u64,
                since_snapshot: 0,
            }),
            state: RwLock::new(state),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("store.log")
    }

    pub fn read(&self) -> RwLockReadGuard<'_, StoreState> {
        self.state.read().expect("store state lock")
    }

    /// Writes one entry durably, then applies it. On failure the log is
    /// truncated back so no partial line remains.
    fn append(&self, make: impl FnOnce(&StoreState) -> Entry) -> Result<Entry, StoreError> {
        let mut w = self.writer.lock().expect("store writer lock");
        let entry = make(&self.read());
        self.append_locked(&mut w, entry)
    }

    fn append_locked(&self, w: &mut Writer, entry: Entry) -> Result<Entry, StoreError> {
        let line = encode_line(&entry);
        let path = self.log_path();
        let written = w.file.write_all(&line).and_then(|_| w.file.sync_data());
        if let Err(e) = written {
            let len = w.len;
            let _ = w.file.set_len(len).and_then(|_| w.file.seek(SeekFrom::Start(len)).map(|_| ()));
            return Err(io(&path)(e));
        }
        w.len += line.len() as u64;
        self.state.write().expect("store state lock").apply(entry.clone());
        w.since_snapshot += 1;
        if w.since_snapshot >= SNAPSHOT_EVERY {
            // A failed snapshot only costs replay time on the next open.
            if self.write_snapshot(w.len).is_ok() {
                w.since_snapshot = 0;
            }
        }
        Ok(entry)
    }

    fn write_snapshot(&self, log_offset: u64) -> Result<(), StoreError> {
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            format_version: 1,
            log_offset,
            state: self.read().clone(),
        };
        let path = self.dir.join("snapshot.json");
        files::write_atomic(&path, files::to_json(&snap).as_bytes()).map_err(|e| StoreError::Corrupt {
            path,
            offset: log_offset,
            message: e.to_string(),
        })
    }

    /// Forces a snapshot of the current state.
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let mut w = self.writer.lock().expect("store writer lock");
        self.write_snapshot(w.len)?;
        w.since_snapshot = 0;
        Ok(())
    }

    pub fn submit(&self, profile: MigrantProfile, schema_version: &str) -> Result<SurveyRecord, StoreError> {
        let entry = self.append(|s| {
            Entry::Survey(SurveyRecord {
                id: s.next_record_id(),
                profile,
                submitted_at_ms: now_ms(),
                schema_version: schema_version.into(),
            })
        })?;
        match entry {
            Entry::Survey(r) => Ok(r),
            _ => unreachable!(),
        }
    }

    pub fn add_labels(&self, labels: BTreeMap<u64, bool>) -> Result<(), StoreError> {
        self.append(|_| Entry::Labels { labels }).map(|_| ())
    }

    pub fn record_assessments(&self, model_id: &str, items: Vec<RiskAssessment>) -> Result<(), StoreError> {
        self.append(|_| Entry::Assessments {
            model_id: model_id.into(),
            items,
        })
        .map(|_| ())
    }

    fn model_path(&self, id: &str) -> PathBuf {
        self.dir.join("models").join(format!("{id}.json"))
    }

    /// Stores a trained model under a fresh id and makes it the active one.
    pub fn publish(
        &self,
        envelope: ModelEnvelope,
        report: EvaluationReport,
        importance: Vec<FieldImportance>,
    ) -> Result<ModelSummary, StoreError> {
        // Serialized with the writer lock held so the id cannot be taken twice.
        let mut w = self.writer.lock().expect("store writer lock");
        let id = self.read().next_model_id();
        let summary = ModelSummary {
            id: id.clone(),
            kind: envelope.model.kind,
            schema_version: envelope.schema_version.clone(),
            published_at_ms: now_ms(),
        };
        let file = PublishedModel {
            id: id.clone(),
            envelope,
            report,
            importance,
        };
        let path = self.model_path(&id);
        files::write_atomic(&path, files::to_json(&file).as_bytes()).map_err(|e| StoreError::Corrupt {
            path,
            offset: 0,
            message: e.to_string(),
        })?;
        match self.append_locked(&mut w, Entry::Published(summary))? {
            Entry::Published(m) => Ok(m),
            _ => unreachable!(),
        }
    }

    pub fn load_model(&self, id: &str) -> Result<PublishedModel, StoreError> {
        if self.read().model(id).is_none() {
            return Err(StoreError::UnknownModel(id.into()));
        }
        let path = self.model_path(id);
        files::read_json(&path).map_err(|e| StoreError::Corrupt {
            path,
            offset: 0,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(age: i64) -> MigrantProfile {
        MigrantProfile {
            age,
            sex: "M".into(),
            city_of_birth: "TAS".into(),
            current_city: "ALA".into(),
            duration_months: 4,
            marital_status: "single".into(),
            accompanying_adult: true,
            extended_answers: Default::default(),
        }
    }

    #[test]
    fn reopen_replays_log() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path()).unwrap();
            for age in 20..25 {
                s.submit(profile(age), "1").unwrap();
            }
            s.add_labels([(1, true), (2, false)].into()).unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        let st = s.read();
        assert_eq!(st.records.len(), 5);
        assert_eq!(st.records.iter().map(|r| r.id).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
        assert_eq!(st.labels.len(), 2);
        let text = fs::read_to_string(s.log_path()).unwrap();
        assert!(text.starts_with(LOG_HEADER));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path()).unwrap();
            s.submit(profile(30), "1").unwrap();
        }
        let log = dir.path().join("store.log");
        let good = fs::read(&log).unwrap();
        let mut torn = good.clone();
        torn.extend_from_slice(b"0123456789abcdef {\"type\":\"sur");
        fs::write(&log, &torn).unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.read().records.len(), 1);
        assert_eq!(fs::read(&log).unwrap(), good);
        let r = s.submit(profile(31), "1").unwrap();
        assert_eq!(r.id, 2);
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path()).unwrap();
            s.submit(profile(30), "1").unwrap();
            s.submit(profile(31), "1").unwrap();
        }
        let log = dir.path().join("store.log");
        let text = fs::read_to_string(&log).unwrap().replacen("\"age\":30", "\"age\":99", 1);
        fs::write(&log, text).unwrap();
        assert!(matches!(Store::open(dir.path()), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn intact_but_undecodable_last_line_is_not_truncated() {
        let dir = tempfile::tempdir().unwrap();
        drop(Store::open(dir.path()).unwrap());
        let log = dir.path().join("store.log");
        let json = br#"{"type":"unknown"}"#;
        let mut bytes = fs::read(&log).unwrap();
        bytes.extend_from_slice(checksum(json).as_bytes());
        bytes.push(b' ');
        bytes.extend_from_slice(json);
        bytes.push(b'\n');
        fs::write(&log, &bytes).unwrap();
        assert!(matches!(Store::open(dir.path()), Err(StoreError::Corrupt { .. })));
        assert_eq!(fs::read(&log).unwrap(), bytes);
    }

    #[test]
    fn every_entry_kind_round_trips_through_the_log() {
        let entries = [
            Entry::Survey(SurveyRecord {
                id: 1,
                profile: profile(20),
                submitted_at_ms: 5,
                schema_version: "1".into(),
            }),
            Entry::Labels {
                labels: [(1, true), (7, false)].into(),
            },
            Entry::Assessments {
                model_id: "m1".into(),
                items: vec![RiskAssessment {
                    record_id: 1,
                    score: 0.25,
                    flagged: false,
                    model_id: "m1".into(),
                    top_factors: vec!["age".into()],
                    assessed_at_ms: 9,
                }],
            },
            Entry::Published(ModelSummary {
                id: "m1".into(),
                kind: ModelKind::RandomForest,
                schema_version: "1".into(),
                published_at_ms: 11,
            }),
        ];
        for e in entries {
            let line = encode_line(&e);
            match decode_line(&line[..line.len() - 1]) {
                Ok(back) => assert_eq!(back, e),
                Err(LineError::Damaged(m) | LineError::Undecodable(m)) => panic!("{e:?}: {m}"),
            }
        }
    }

    #[test]
    fn snapshot_plus_tail_equals_full_replay() {
        let dir = tempfile::tempdir().unwrap();
        let n = SNAPSHOT_EVERY + 5;
        let before = {
            let s = Store::open(dir.path()).unwrap();
            for i in 0..n {
                s.submit(profile(18 + (i % 10) as i64), "1").unwrap();
            }
            let state = s.read().clone();
            state
        };
        assert!(dir.path().join("snapshot.json").exists());
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(*s.read(), before);
        fs::remove_file(dir.path().join("snapshot.json")).unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(*s.read(), before);
    }

    #[test]
    fn rejects_foreign_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("store.log"), "hello\n").unwrap();
        assert!(Store::open(dir.path()).is_err());
    }
}
