//! Versioned artifact store.
//!
//! Every `put` publishes a new immutable version. References, candidate
//! groups and edges accumulate (keyed union); partitions and profiles are
//! whole-state artifacts, so each put replaces the visible set.
//!
//! The file backend is an append-only log, one line per record:
//!
//! ```text
//! <fnv1a-64 hex> item <kind> <canonical json>
//! <fnv1a-64 hex> commit <version json>
//! ```
//!
//! Items become visible only once their commit line is durable. On open, a
//! torn final line is dropped and the log is cut back to the last commit.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CandidateGroup, Cluster, EntityProfile, EntityReference, MatchEdge};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

// Declared alphabetically so map keys serialize in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    ComparisonSpace,
    Edges,
    Partition,
    Profiles,
    References,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 5] = [
        ArtifactKind::ComparisonSpace,
        ArtifactKind::Edges,
        ArtifactKind::Partition,
        ArtifactKind::Profiles,
        ArtifactKind::References,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArtifactKind::ComparisonSpace => "comparison_space",
            ArtifactKind::Edges => "edges",
            ArtifactKind::Partition => "partition",
            ArtifactKind::Profiles => "profiles",
            ArtifactKind::References => "references",
        }
    }

    /// Whole-state kinds replace the visible set on each put.
    pub fn replaces(self) -> bool {
        matches!(self, ArtifactKind::Partition | ArtifactKind::Profiles)
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArtifactKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::NotFound(format!("artifact kind `{s}`")))
    }
}

/// A storable item with a stable identity key.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: ArtifactKind;
    fn key(&self) -> String;
}

impl Artifact for EntityReference {
    const KIND: ArtifactKind = ArtifactKind::References;
    fn key(&self) -> String {
        self.ref_id.clone()
    }
}

impl Artifact for CandidateGroup {
    const KIND: ArtifactKind = ArtifactKind::ComparisonSpace;
    fn key(&self) -> String {
        self.members().join("\u{1f}")
    }
}

impl Artifact for MatchEdge {
    const KIND: ArtifactKind = ArtifactKind::Edges;
    fn key(&self) -> String {
        format!("{}\u{1f}{}", self.a, self.b)
    }
}

impl Artifact for Cluster {
    const KIND: ArtifactKind = ArtifactKind::Partition;
    fn key(&self) -> String {
        self.members.first().cloned().unwrap_or_default()
    }
}

impl Artifact for EntityProfile {
    const KIND: ArtifactKind = ArtifactKind::Profiles;
    fn key(&self) -> String {
        self.profile_id.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreVersion {
    pub version: u64,
    /// Unix time in milliseconds.
    pub created_at: u64,
    pub counts: BTreeMap<ArtifactKind, u64>,
}

/// Half-open range of log entries visible for one kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Extent {
    start: u64,
    end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VersionRecord {
    version: u64,
    created_at: u64,
    counts: BTreeMap<ArtifactKind, u64>,
    extents: BTreeMap<ArtifactKind, Extent>,
}

impl VersionRecord {
    fn public(&self) -> StoreVersion {
        StoreVersion {
            version: self.version,
            created_at: self.created_at,
            counts: self.counts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    key: String,
    line: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct State {
    logs: BTreeMap<ArtifactKind, Vec<Entry>>,
    // key -> entry position, union kinds only
    keys: HashMap<ArtifactKind, HashMap<String, usize>>,
    versions: Vec<VersionRecord>,
}

/// Changes staged by one put, applied only after they are durable.
struct Staged {
    kind: ArtifactKind,
    entries: Vec<Entry>,
    record: VersionRecord,
}

impl State {
    fn latest(&self) -> Option<&VersionRecord> {
        self.versions.last()
    }

    fn extent(&self, kind: ArtifactKind, at: u64) -> Result<Extent> {
        if at == 0 {
            return Ok(Extent::default());
        }
        let record = self
            .versions
            .get(at as usize - 1)
            .ok_or_else(|| Error::NotFound(format!("store version {at}")))?;
        Ok(record.extents.get(&kind).copied().unwrap_or_default())
    }

    fn stage(&self, kind: ArtifactKind, items: Vec<Entry>, created_at: u64) -> Result<Staged> {
        let log_len = self.logs.get(&kind).map_or(0, Vec::len) as u64;
        let mut fresh: Vec<Entry> = Vec::new();
        if kind.replaces() {
            let mut seen: HashMap<&str, &str> = HashMap::new();
            for e in &items {
                if let Some(prev) = seen.insert(&e.key, &e.line) {
                    if prev != e.line {
                        return Err(Error::Conflict(format!("{kind} item `{}` given twice with different content", e.key)));
                    }
                }
            }
            let mut items = items;
            items.sort_by(|a, b| a.key.cmp(&b.key));
            items.dedup_by(|a, b| a.key == b.key);
            fresh = items;
        } else {
            let known = self.keys.get(&kind);
            let log = self.logs.get(&kind);
            let mut batch: HashMap<String, String> = HashMap::new();
            for e in items {
                let existing = known
                    .and_then(|k| k.get(&e.key))
                    .map(|&i| log.expect("indexed kind has a log")[i].line.as_str())
                    .or_else(|| batch.get(&e.key).map(String::as_str));
                match existing {
                    Some(line) if line == e.line => {}
                    Some(_) => {
                        return Err(Error::Conflict(format!(
                            "{kind} `{}` already stored with different content",
                            e.key
                        )))
                    }
                    None => {
                        batch.insert(e.key.clone(), e.line.clone());
                        fresh.push(e);
                    }
                }
            }
        }
        let mut extents = self.latest().map(|v| v.extents.clone()).unwrap_or_default();
        let new_end = log_len + fresh.len() as u64;
        let extent = if kind.replaces() {
            Extent {
                start: log_len,
                end: new_end,
            }
        } else {
            Extent { start: 0, end: new_end }
        };
        extents.insert(kind, extent);
        let counts = extents
            .iter()
            .filter(|(_, e)| e.end > e.start)
            .map(|(k, e)| (*k, e.end - e.start))
            .collect();
        let record = VersionRecord {
            version: self.latest().map_or(0, |v| v.version) + 1,
            created_at,
            counts,
            extents,
        };
        Ok(Staged {
            kind,
            entries: fresh,
            record,
        })
    }

    fn apply(&mut self, staged: Staged) {
        let log = self.logs.entry(staged.kind).or_default();
        let keys = self.keys.entry(staged.kind).or_default();
        for e in staged.entries {
            if !staged.kind.replaces() {
                keys.insert(e.key.clone(), log.len());
            }
            log.push(e);
        }
        self.versions.push(staged.record);
    }

    fn visible(&self, kind: ArtifactKind, at: u64) -> Result<Vec<&Entry>> {
        let extent = self.extent(kind, at)?;
        let log = self.logs.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
        let mut entries: Vec<&Entry> = log[extent.start as usize..extent.end as usize].iter().collect();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(entries)
    }

    fn push_raw(&mut self, kind: ArtifactKind, line: String) -> Result<()> {
        let key = key_of_line(kind, &line)?;
        let log = self.logs.entry(kind).or_default();
        if !kind.replaces() {
            self.keys.entry(kind).or_default().insert(key.clone(), log.len());
        }
        log.push(Entry { key, line });
        Ok(())
    }

    fn check_record(&self, record: &VersionRecord) -> Result<()> {
        let expected = self.latest().map_or(0, |v| v.version) + 1;
        if record.version != expected {
            return Err(Error::Corrupt(format!(
                "version {} follows {}",
                record.version,
                expected - 1
            )));
        }
        for (kind, extent) in &record.extents {
            let len = self.logs.get(kind).map_or(0, Vec::len) as u64;
            if extent.start > extent.end || extent.end > len {
                return Err(Error::Corrupt(format!(
                    "version {} references {kind} entries beyond the log",
                    record.version
                )));
            }
        }
        Ok(())
    }
}

fn key_of_line(kind: ArtifactKind, line: &str) -> Result<String> {
    fn key<T: Artifact>(line: &str) -> Result<String> {
        let item: T = serde_json::from_str(line).map_err(|e| Error::Corrupt(format!("unreadable {} item: {e}", T::KIND)))?;
        Ok(item.key())
    }
    match kind {
        ArtifactKind::ComparisonSpace => key::<CandidateGroup>(line),
        ArtifactKind::Edges => key::<MatchEdge>(line),
        ArtifactKind::Partition => key::<Cluster>(line),
        ArtifactKind::Profiles => key::<EntityProfile>(line),
        ArtifactKind::References => key::<EntityReference>(line),
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoreBackend {
    Memory,
    /// Directory holding `log.jsonl` and `index.json`.
    File { path: PathBuf },
}

const LOG_FILE: &str = "log.jsonl";
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Serialize, Deserialize)]
struct IndexFile {
    version: u64,
    log_bytes: u64,
}

#[derive(Debug)]
struct FileLog {
    dir: PathBuf,
    file: File,
    committed_bytes: u64,
}

fn log_line(body: &str) -> String {
    format!("{} {body}\n", hex64(fnv1a64(body.as_bytes())))
}

impl FileLog {
    fn write_staged(&mut self, staged: &Staged) -> Result<()> {
        let mut buf = String::new();
        for e in &staged.entries {
            buf.push_str(&log_line(&format!("item {} {}", staged.kind, e.line)));
        }
        buf.push_str(&log_line(&format!("commit {}", serde_json::to_string(&staged.record)?)));
        let result = self
            .file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.sync_data());
        if let Err(e) = result {
            // cut back to the last commit so the failed put leaves no trace
            let _ = self.file.set_len(self.committed_bytes);
            let _ = self.file.seek(SeekFrom::Start(self.committed_bytes));
            return Err(Error::Store(format!("log write failed: {e}")));
        }
        self.committed_bytes += buf.len() as u64;
        self.write_index(staged.record.version)
    }

    fn write_index(&self, version: u64) -> Result<()> {
        let index = IndexFile {
            version,
            log_bytes: self.committed_bytes,
        };
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&index)?)?;
        fs::rename(&tmp, self.dir.join(INDEX_FILE))?;
        Ok(())
    }
}

/// Versioned repository for pipeline artifacts.
#[derive(Debug)]
pub struct ReferenceStore {
    state: State,
    log: Option<FileLog>,
}

impl Default for ReferenceStore {
    fn default() -> Self {
        Self::memory()
    }
}

impl ReferenceStore {
    pub fn memory() -> Self {
        ReferenceStore {
            state: State::default(),
            log: None,
        }
    }

    pub fn open(backend: &StoreBackend) -> Result<Self> {
        match backend {
            StoreBackend::Memory => Ok(Self::memory()),
            StoreBackend::File { path } => Self::open_dir(path),
        }
    }

    /// Opens (or creates) a file-backed store, replaying its log.
    pub fn open_dir(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let log_path = dir.join(LOG_FILE);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&log_path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (state, committed_bytes) = replay_log(&bytes)?;
        if let Ok(raw) = fs::read(dir.join(INDEX_FILE)) {
            let index: IndexFile = serde_json::from_slice(&raw)
                .map_err(|e| Error::Corrupt(format!("unreadable index file: {e}")))?;
            if index.log_bytes > committed_bytes || index.version > state.versions.len() as u64 {
                return Err(Error::Corrupt(format!(
                    "index records version {} at {} bytes but the log only holds {} committed bytes",
                    index.version, index.log_bytes, committed_bytes
                )));
            }
        }
        if committed_bytes < bytes.len() as u64 {
            tracing::warn!(
                dropped = bytes.len() as u64 - committed_bytes,
                "discarding uncommitted tail of store log"
            );
            file.set_len(committed_bytes)?;
            file.sync_data()?;
        }
        let log = FileLog {
            dir: dir.to_path_buf(),
            file,
            committed_bytes,
        };
        log.write_index(state.versions.len() as u64)?;
        Ok(ReferenceStore { state, log: Some(log) })
    }

    pub fn is_persistent(&self) -> bool {
        self.log.is_some()
    }

    pub fn latest_version(&self) -> u64 {
        self.state.latest().map_or(0, |v| v.version)
    }

    pub fn versions(&self) -> Vec<StoreVersion> {
        self.state.versions.iter().map(VersionRecord::public).collect()
    }

    pub fn version(&self, v: u64) -> Result<StoreVersion> {
        if v == 0 {
            return Ok(StoreVersion {
                version: 0,
                created_at: 0,
                counts: BTreeMap::new(),
            });
        }
        self.state
            .versions
            .get(v as usize - 1)
            .map(VersionRecord::public)
            .ok_or_else(|| Error::NotFound(format!("store version {v}")))
    }

    /// Publishes a new version containing `items` merged into the latest state.
    pub fn put<T: Artifact>(&mut self, items: &[T]) -> Result<StoreVersion> {
        let entries = items
            .iter()
            .map(|item| Ok(Entry {
                key: item.key(),
                line: serde_json::to_string(item)?,
            }))
            .collect::<Result<Vec<_>>>()?;
        self.put_entries(T::KIND, entries)
    }

    fn put_entries(&mut self, kind: ArtifactKind, entries: Vec<Entry>) -> Result<StoreVersion> {
        let staged = self.state.stage(kind, entries, now_millis())?;
        if let Some(log) = self.log.as_mut() {
            log.write_staged(&staged)?;
        }
        let public = staged.record.public();
        self.state.apply(staged);
        Ok(public)
    }

    /// Items of `T` visible at `at` (latest when `None`), in key order.
    pub fn get<T: Artifact>(&self, at: Option<u64>) -> Result<Vec<T>> {
        self.get_lines(T::KIND, at)?
            .iter()
            .map(|line| serde_json::from_str(line).map_err(|e| Error::Corrupt(e.to_string())))
            .collect()
    }

    /// Canonical JSON lines visible at `at`, in key order.
    pub fn get_lines(&self, kind: ArtifactKind, at: Option<u64>) -> Result<Vec<String>> {
        let at = at.unwrap_or_else(|| self.latest_version());
        Ok(self
            .state
            .visible(kind, at)?
            .into_iter()
            .map(|e| e.line.clone())
            .collect())
    }

    /// Writes every version and item to `path`. Readers of the snapshot see
    /// exactly this store.
    pub fn snapshot(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        body.push_str("{\"format_version\":1}\n");
        body.push_str(&format!(
            "{{\"segment\":\"versions\",\"count\":{}}}\n",
            self.state.versions.len()
        ));
        for v in &self.state.versions {
            body.push_str(&serde_json::to_string(v)?);
            body.push('\n');
        }
        for kind in ArtifactKind::ALL {
            let log = self.state.logs.get(&kind).map(Vec::as_slice).unwrap_or(&[]);
            body.push_str(&format!("{{\"segment\":\"{kind}\",\"count\":{}}}\n", log.len()));
            for e in log {
                body.push_str(&e.line);
                body.push('\n');
            }
        }
        let checksum = hex64(fnv1a64(body.as_bytes()));
        body.push_str(&format!("{{\"checksum\":\"{checksum}\"}}\n"));
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(body.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads a snapshot into a fresh in-memory store. Any damage fails the
    /// whole restore.
    pub fn restore(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let state = parse_snapshot(&bytes)?;
        Ok(ReferenceStore { state, log: None })
    }

    /// Observable state equality: same versions and same items at each one.
    pub fn same_observable_state(&self, other: &ReferenceStore) -> bool {
        if self.versions() != other.versions() {
            return false;
        }
        (0..=self.latest_version()).all(|v| {
            ArtifactKind::ALL
                .into_iter()
                .all(|k| self.get_lines(k, Some(v)).ok() == other.get_lines(k, Some(v)).ok())
        })
    }
}

fn replay_log(bytes: &[u8]) -> Result<(State, u64)> {
    let mut state = State::default();
    let mut pending: Vec<(ArtifactKind, String)> = Vec::new();
    let mut committed = 0u64;
    let mut offset = 0usize;
    let mut lines = bytes.split_inclusive(|&b| b == b'\n').peekable();
    let mut line_no = 0;
    while let Some(raw) = lines.next() {
        line_no += 1;
        let is_last = lines.peek().is_none();
        offset += raw.len();
        let parsed = parse_log_line(raw);
        let (kind_tag, rest) = match parsed {
            Ok(v) => v,
            // torn write at the tail: drop it and anything uncommitted
            Err(_) if is_last => break,
            Err(e) => return Err(Error::Corrupt(format!("store log line {line_no}: {e}"))),
        };
        match kind_tag {
            LogTag::Item(kind) => pending.push((kind, rest.to_owned())),
            LogTag::Commit => {
                let record: VersionRecord = serde_json::from_str(rest)
                    .map_err(|e| Error::Corrupt(format!("store log line {line_no}: {e}")))?;
                for (kind, line) in pending.drain(..) {
                    state.push_raw(kind, line)?;
                }
                state.check_record(&record)?;
                state.versions.push(record);
                committed = offset as u64;
            }
        }
    }
    // items after the last commit were never applied
    Ok((state, committed))
}

enum LogTag {
    Item(ArtifactKind),
    Commit,
}

fn parse_log_line(raw: &[u8]) -> std::result::Result<(LogTag, &str), String> {
    let text = std::str::from_utf8(raw).map_err(|_| "not UTF-8".to_string())?;
    let text = text.strip_suffix('\n').ok_or("missing line terminator")?;
    let (sum, body) = text.split_once(' ').ok_or("missing checksum")?;
    if hex64(fnv1a64(body.as_bytes())) != sum {
        return Err("checksum mismatch".into());
    }
    if let Some(rest) = body.strip_prefix("commit ") {
        return Ok((LogTag::Commit, rest));
    }
    let rest = body.strip_prefix("item ").ok_or("unknown record type")?;
    let (kind, json) = rest.split_once(' ').ok_or("missing item kind")?;
    let kind = kind.parse::<ArtifactKind>().map_err(|e| e.to_string())?;
    Ok((LogTag::Item(kind), json))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotHeader {
    format_version: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentHeader {
    segment: String,
    count: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChecksumLine {
    checksum: String,
}

fn parse_snapshot(bytes: &[u8]) -> Result<State> {
    let corrupt = |m: String| Error::Corrupt(format!("snapshot: {m}"));
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt("not UTF-8".into()))?;
    let body_end = text
        .strip_suffix('\n')
        .and_then(|t| t.rfind('\n'))
        .map(|i| i + 1)
        .ok_or_else(|| corrupt("missing checksum line".into()))?;
    let (body, trailer) = text.split_at(body_end);
    let trailer: ChecksumLine =
        serde_json::from_str(trailer.trim_end()).map_err(|_| corrupt("missing checksum line".into()))?;
    let actual = hex64(fnv1a64(body.as_bytes()));
    if trailer.checksum != actual {
        return Err(corrupt(format!(
            "checksum mismatch: recorded {}, computed {actual}",
            trailer.checksum
        )));
    }
    let mut lines = BufReader::new(body.as_bytes()).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| corrupt(format!("unexpected end before {what}")))
    };
    let header: SnapshotHeader = serde_json::from_str(&next("header")?).map_err(|e| corrupt(e.to_string()))?;
    if header.format_version != 1 {
        return Err(corrupt(format!("unsupported format_version {}", header.format_version)));
    }
    let seg: SegmentHeader = serde_json::from_str(&next("versions")?).map_err(|e| corrupt(e.to_string()))?;
    if seg.segment != "versions" {
        return Err(corrupt(format!("expected versions segment, found `{}`", seg.segment)));
    }
    let mut records = Vec::with_capacity(seg.count);
    for _ in 0..seg.count {
        let r: VersionRecord = serde_json::from_str(&next("version record")?).map_err(|e| corrupt(e.to_string()))?;
        records.push(r);
    }
    let mut state = State::default();
    for kind in ArtifactKind::ALL {
        let seg: SegmentHeader = serde_json::from_str(&next(kind.name())?).map_err(|e| corrupt(e.to_string()))?;
        if seg.segment != kind.name() {
            return Err(corrupt(format!("expected {kind} segment, found `{}`", seg.segment)));
        }
        for _ in 0..seg.count {
            state.push_raw(kind, next(kind.name())?)?;
        }
    }
    if next("end").is_ok() {
        return Err(corrupt("trailing data after last segment".into()));
    }
    for r in records {
        state.check_record(&r)?;
        state.versions.push(r);
    }
    Ok(state)
}
