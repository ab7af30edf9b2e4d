//! Append-only store: one directory per collection, one NDJSON file per UTC
//! day. Indexes live in memory and are rebuilt from the files on open; a torn
//! trailing line left by a crash is truncated away.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::model::{Annotation, CommandEnvelope, FaultKind, FaultRecord, PollutantKind, Reading, TimestampMs};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("storage quota of {quota} bytes exhausted")]
    StorageFull { quota: u64 },
    #[error("record does not match collection {collection}: {detail}")]
    SchemaMismatch { collection: Collection, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Collection {
    Data,
    ErrorLog,
    Users,
    Annotation,
    Commands,
    Faults,
}

impl Collection {
    pub const ALL: [Collection; 6] = [
        Collection::Data,
        Collection::ErrorLog,
        Collection::Users,
        Collection::Annotation,
        Collection::Commands,
        Collection::Faults,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            Collection::Data => "data",
            Collection::ErrorLog => "error_log",
            Collection::Users => "users",
            Collection::Annotation => "annotation",
            Collection::Commands => "commands",
            Collection::Faults => "faults",
        }
    }
}

impl std::fmt::Display for Collection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Collection::Data => "DATA",
            Collection::ErrorLog => "ERROR_LOG",
            Collection::Users => "USERS",
            Collection::Annotation => "ANNOTATION",
            Collection::Commands => "COMMANDS",
            Collection::Faults => "FAULTS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorKind {
    Malformed,
    OutOfRange,
    RateLimited,
    CommandExpired,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorEntry {
    pub ts_ms: TimestampMs,
    pub kind: ErrorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    pub detail: String,
    /// Offending payload, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Admin,
    Viewer,
    Occupant,
}

impl std::str::FromStr for Role {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "ADMIN" => Ok(Role::Admin),
            "VIEWER" => Ok(Role::Viewer),
            "OCCUPANT" => Ok(Role::Occupant),
            _ => Err(format!("unknown role `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: String,
    pub role: Role,
    /// Hex SHA-256 of the bearer token.
    pub token_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_expiry_ms: Option<TimestampMs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
}

pub fn hash_token(token: &str) -> String {
    Sha256::digest(token.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl UserRecord {
    pub fn new(user_id: impl Into<String>, role: Role, token: &str) -> Self {
        UserRecord {
            user_id: user_id.into(),
            role,
            token_sha256: hash_token(token),
            token_expiry_ms: None,
            site_id: None,
        }
    }

    pub fn token_matches(&self, token: &str) -> bool {
        hash_token(token).as_bytes().ct_eq(self.token_sha256.as_bytes()).into()
    }

    pub fn is_expired(&self, now_ms: TimestampMs) -> bool {
        self.token_expiry_ms.is_some_and(|e| now_ms >= e)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultFilter {
    pub device_id: Option<String>,
    pub kind: Option<FaultKind>,
    pub t0: Option<TimestampMs>,
    pub t1: Option<TimestampMs>,
}

impl FaultFilter {
    fn accepts(&self, f: &FaultRecord) -> bool {
        self.device_id.as_ref().is_none_or(|d| *d == f.device_id)
            && self.kind.is_none_or(|k| k == f.kind)
            && self.t0.is_none_or(|t| f.last_ms >= t)
            && self.t1.is_none_or(|t| f.first_ms < t)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StoreOptions {
    /// `fsync` after every append instead of only flushing to the OS.
    pub fsync: bool,
    /// Total bytes the store may hold across all collections.
    pub quota_bytes: Option<u64>,
}

#[derive(Default)]
struct Inner {
    bytes: u64,
    files: HashMap<(Collection, String), File>,
    series: BTreeMap<String, BTreeMap<(TimestampMs, u64), Reading>>,
    seen: HashSet<(String, u64)>,
    errors: Vec<ErrorEntry>,
    users: BTreeMap<String, UserRecord>,
    annotations: Vec<Annotation>,
    commands: BTreeMap<String, CommandEnvelope>,
    faults: BTreeMap<(String, FaultKind, TimestampMs), FaultRecord>,
}

pub struct Store {
    root: PathBuf,
    opts: StoreOptions,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

fn day_of(ts_ms: TimestampMs) -> String {
    chrono::DateTime::from_timestamp_millis(ts_ms)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| "invalid".into())
}

/// Reads complete lines, truncating an unterminated or unparsable tail.
fn load_lines<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, u64), StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut good_end = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<T>(line.trim_end()) {
            Ok(v) => {
                out.push(v);
                good_end += n as u64;
            }
            Err(e) => {
                log::warn!("{}: dropping unreadable tail at byte {good_end}: {e}", path.display());
                break;
            }
        }
    }
    let len = fs::metadata(path).map_err(io_err(path))?.len();
    if len > good_end {
        let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
        f.set_len(good_end).map_err(io_err(path))?;
        f.sync_all().map_err(io_err(path))?;
    }
    Ok((out, good_end))
}

impl Store {
    pub fn open(root: impl AsRef<Path>, opts: StoreOptions) -> Result<Store, StoreError> {
        let root = root.as_ref().to_path_buf();
        let mut inner = Inner::default();
        for c in Collection::ALL {
            let dir = root.join(c.dir_name());
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(io_err(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
                .collect();
            files.sort();
            for path in files {
                inner.bytes += match c {
                    Collection::Data => {
                        let (rows, n) = load_lines::<Reading>(&path)?;
                        rows.into_iter().for_each(|r| inner.index_reading(r));
                        n
                    }
                    Collection::ErrorLog => {
                        let (rows, n) = load_lines::<ErrorEntry>(&path)?;
                        inner.errors.extend(rows);
                        n
                    }
                    Collection::Users => {
                        let (rows, n) = load_lines::<UserRecord>(&path)?;
                        rows.into_iter().for_each(|u| {
                            inner.users.insert(u.user_id.clone(), u);
                        });
                        n
                    }
                    Collection::Annotation => {
                        let (rows, n) = load_lines::<Annotation>(&path)?;
                        inner.annotations.extend(rows);
                        n
                    }
                    Collection::Commands => {
                        let (rows, n) = load_lines::<CommandEnvelope>(&path)?;
                        rows.into_iter().for_each(|c| {
                            inner.commands.insert(c.cmd_id.clone(), c);
                        });
                        n
                    }
                    Collection::Faults => {
                        let (rows, n) = load_lines::<FaultRecord>(&path)?;
                        rows.into_iter().for_each(|f| {
                            inner.faults.insert(fault_key(&f), f);
                        });
                        n
                    }
                };
            }
        }
        inner.errors.sort_by_key(|e| e.ts_ms);
        Ok(Store {
            root,
            opts,
            inner: Mutex::new(inner),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn append_line(&self, inner: &mut Inner, c: Collection, day: String, line: String) -> Result<(), StoreError> {
        let bytes = line.len() as u64 + 1;
        if let Some(quota) = self.opts.quota_bytes {
            if inner.bytes + bytes > quota {
                return Err(StoreError::StorageFull { quota });
            }
        }
        let path = self.root.join(c.dir_name()).join(format!("{day}.ndjson"));
        let file = match inner.files.entry((c, day)) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                let f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
                e.insert(f)
            }
        };
        let mut buf = line.into_bytes();
        buf.push(b'\n');
        file.write_all(&buf).map_err(io_err(&path))?;
        file.flush().map_err(io_err(&path))?;
        if self.opts.fsync {
            file.sync_data().map_err(io_err(&path))?;
        }
        inner.bytes += bytes;
        Ok(())
    }

    /// Persists a reading unless `(device_id, seq)` is already stored.
    /// Returns whether a row was written.
    pub fn append_reading(&self, r: &Reading) -> Result<bool, StoreError> {
        let mut inner = self.inner.lock();
        if inner.seen.contains(&(r.device_id.clone(), r.seq)) {
            return Ok(false);
        }
        self.append_line(&mut inner, Collection::Data, day_of(r.ts_ms), r.to_canonical_json())?;
        inner.index_reading(r.clone());
        Ok(true)
    }

    pub fn contains_reading(&self, device_id: &str, seq: u64) -> bool {
        self.inner.lock().seen.contains(&(device_id.to_string(), seq))
    }

    /// Readings of `device_id` with `t0 <= ts < t1`, in time order. With a
    /// `kind`, only readings carrying that pollutant.
    pub fn query_series(
        &self,
        device_id: &str,
        kind: Option<PollutantKind>,
        t0: TimestampMs,
        t1: TimestampMs,
    ) -> Vec<Reading> {
        let inner = self.inner.lock();
        let Some(series) = inner.series.get(device_id) else {
            return Vec::new();
        };
        if t1 <= t0 {
            return Vec::new();
        }
        series
            .range((t0, 0)..(t1, 0))
            .map(|(_, r)| r)
            .filter(|r| kind.is_none_or(|k| r.values.contains_key(&k)))
            .cloned()
            .collect()
    }

    /// All stored readings per device within `[t0, t1)`.
    pub fn query_site(&self, devices: &[String], t0: TimestampMs, t1: TimestampMs) -> BTreeMap<String, Vec<Reading>> {
        devices
            .iter()
            .map(|d| (d.clone(), self.query_series(d, None, t0, t1)))
            .filter(|(_, v)| !v.is_empty())
            .collect()
    }

    /// Devices with stored data and the timestamp of their latest reading.
    pub fn devices(&self) -> BTreeMap<String, TimestampMs> {
        self.inner
            .lock()
            .series
            .iter()
            .filter_map(|(d, s)| s.keys().next_back().map(|(ts, _)| (d.clone(), *ts)))
            .collect()
    }

    pub fn reading_count(&self) -> usize {
        self.inner.lock().seen.len()
    }

    pub fn append_error(&self, e: ErrorEntry) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let line = serde_json::to_string(&e).expect("error entry serializes");
        self.append_line(&mut inner, Collection::ErrorLog, day_of(e.ts_ms), line)?;
        let pos = inner.errors.partition_point(|x| x.ts_ms <= e.ts_ms);
        inner.errors.insert(pos, e);
        Ok(())
    }

    pub fn query_errors(&self, t0: TimestampMs, t1: TimestampMs) -> Vec<ErrorEntry> {
        self.inner
            .lock()
            .errors
            .iter()
            .filter(|e| e.ts_ms >= t0 && e.ts_ms < t1)
            .cloned()
            .collect()
    }

    pub fn put_user(&self, u: UserRecord) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let line = serde_json::to_string(&u).expect("user serializes");
        self.append_line(&mut inner, Collection::Users, "users".into(), line)?;
        inner.users.insert(u.user_id.clone(), u);
        Ok(())
    }

    pub fn user_by_token(&self, token: &str) -> Option<UserRecord> {
        let inner = self.inner.lock();
        let mut found = None;
        // Visit every record so timing does not depend on the match position.
        for u in inner.users.values() {
            if u.token_matches(token) {
                found = Some(u.clone());
            }
        }
        found
    }

    pub fn users(&self) -> Vec<UserRecord> {
        self.inner.lock().users.values().cloned().collect()
    }

    pub fn append_annotation(&self, a: &Annotation) -> Result<(), StoreError> {
        a.check().map_err(|detail| StoreError::SchemaMismatch {
            collection: Collection::Annotation,
            detail,
        })?;
        let mut inner = self.inner.lock();
        let line = serde_json::to_string(a).expect("annotation serializes");
        self.append_line(&mut inner, Collection::Annotation, day_of(a.start_ms), line)?;
        inner.annotations.push(a.clone());
        Ok(())
    }

    /// Annotations of `site_id` whose span intersects `[t0, t1)`.
    pub fn query_annotations(&self, site_id: &str, t0: TimestampMs, t1: TimestampMs) -> Vec<Annotation> {
        let mut out: Vec<Annotation> = self
            .inner
            .lock()
            .annotations
            .iter()
            .filter(|a| a.site_id == site_id && a.intersects(t0, t1))
            .cloned()
            .collect();
        out.sort_by_key(|a| a.start_ms);
        out
    }

    /// Appends a new version of a command; the latest version wins.
    pub fn put_command(&self, c: &CommandEnvelope) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let line = serde_json::to_string(c).expect("command serializes");
        self.append_line(&mut inner, Collection::Commands, day_of(c.issued_ms), line)?;
        inner.commands.insert(c.cmd_id.clone(), c.clone());
        Ok(())
    }

    pub fn get_command(&self, cmd_id: &str) -> Option<CommandEnvelope> {
        self.inner.lock().commands.get(cmd_id).cloned()
    }

    pub fn commands(&self) -> Vec<CommandEnvelope> {
        let mut v: Vec<_> = self.inner.lock().commands.values().cloned().collect();
        v.sort_by(|a, b| (a.issued_ms, &a.cmd_id).cmp(&(b.issued_ms, &b.cmd_id)));
        v
    }

    /// Appends a new version of a fault, keyed by device, kind and onset.
    pub fn put_fault(&self, f: &FaultRecord) -> Result<(), StoreError> {
        let mut inner = self.inner.lock();
        let line = serde_json::to_string(f).expect("fault serializes");
        self.append_line(&mut inner, Collection::Faults, day_of(f.first_ms), line)?;
        inner.faults.insert(fault_key(f), f.clone());
        Ok(())
    }

    pub fn query_faults(&self, filter: &FaultFilter) -> Vec<FaultRecord> {
        let mut v: Vec<FaultRecord> = self
            .inner
            .lock()
            .faults
            .values()
            .filter(|f| filter.accepts(f))
            .cloned()
            .collect();
        v.sort_by(|a, b| (a.first_ms, &a.device_id).cmp(&(b.first_ms, &b.device_id)));
        v
    }

    /// Validates raw JSON against the collection's record type and appends it.
    pub fn append_json(&self, c: Collection, json: &str) -> Result<(), StoreError> {
        fn parse<T: DeserializeOwned>(c: Collection, json: &str) -> Result<T, StoreError> {
            serde_json::from_str(json).map_err(|e| StoreError::SchemaMismatch {
                collection: c,
                detail: e.to_string(),
            })
        }
        match c {
            Collection::Data => self.append_reading(&parse(c, json)?).map(|_| ()),
            Collection::ErrorLog => self.append_error(parse(c, json)?),
            Collection::Users => self.put_user(parse(c, json)?),
            Collection::Annotation => self.append_annotation(&parse(c, json)?),
            Collection::Commands => self.put_command(&parse(c, json)?),
            Collection::Faults => self.put_fault(&parse(c, json)?),
        }
    }

    /// Flushes and syncs every open file.
    pub fn sync(&self) -> Result<(), StoreError> {
        let inner = self.inner.lock();
        for ((c, day), f) in inner.files.iter() {
            let path = self.root.join(c.dir_name()).join(format!("{day}.ndjson"));
            f.sync_all().map_err(io_err(&path))?;
        }
        Ok(())
    }
}

fn fault_key(f: &FaultRecord) -> (String, FaultKind, TimestampMs) {
    (f.device_id.clone(), f.kind, f.first_ms)
}

impl Inner {
    fn index_reading(&mut self, r: Reading) {
        if self.seen.insert((r.device_id.clone(), r.seq)) {
            self.series.entry(r.device_id.clone()).or_default().insert((r.ts_ms, r.seq), r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationSource, CommandAction, CommandStatus};

    fn reading(seq: u64, ts: i64) -> Reading {
        Reading::new("h1-kitchen", seq, ts).with(PollutantKind::Co2, 500.0 + seq as f64)
    }

    #[test]
    fn idempotent_append_and_half_open_query() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        for i in 0..10 {
            assert!(s.append_reading(&reading(i, 1_700_000_000_000 + i as i64 * 1000)).unwrap());
        }
        assert!(!s.append_reading(&reading(3, 1_700_000_003_000)).unwrap());
        let q = s.query_series("h1-kitchen", Some(PollutantKind::Co2), 1_700_000_002_000, 1_700_000_005_000);
        assert_eq!(q.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![2, 3, 4]);
        assert!(s.query_series("h1-kitchen", Some(PollutantKind::Voc), 0, i64::MAX).is_empty());
        assert_eq!(s.reading_count(), 10);
    }

    #[test]
    fn reopen_rebuilds_and_truncates_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
            for i in 0..5 {
                s.append_reading(&reading(i, 1_700_000_000_000 + i as i64 * 1000)).unwrap();
            }
        }
        let file = dir.path().join("data").join(format!("{}.ndjson", day_of(1_700_000_000_000)));
        let mut f = OpenOptions::new().append(true).open(&file).unwrap();
        f.write_all(b"{\"device_id\":\"h1-kit").unwrap();
        drop(f);
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(s.reading_count(), 5);
        assert!(fs::read_to_string(&file).unwrap().ends_with('\n'));
        s.append_reading(&reading(5, 1_700_000_005_000)).unwrap();
        drop(s);
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(s.reading_count(), 6);
    }

    #[test]
    fn schema_checks() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        let bad = Annotation {
            site_id: "h1".into(),
            occupant_id: "o1".into(),
            activity: "cooking".into(),
            start_ms: 10,
            end_ms: Some(5),
            source: AnnotationSource::Manual,
        };
        assert!(matches!(s.append_annotation(&bad), Err(StoreError::SchemaMismatch { .. })));
        let err = s.append_json(Collection::Data, r#"{"label":"x"}"#).unwrap_err();
        assert!(matches!(err, StoreError::SchemaMismatch { collection: Collection::Data, .. }));
    }

    #[test]
    fn quota_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(
            dir.path(),
            StoreOptions {
                fsync: true,
                quota_bytes: Some(200),
            },
        )
        .unwrap();
        s.append_reading(&reading(0, 1_700_000_000_000)).unwrap();
        let mut full = false;
        for i in 1..10 {
            if let Err(StoreError::StorageFull { .. }) = s.append_reading(&reading(i, 1_700_000_000_000 + i as i64)) {
                full = true;
                break;
            }
        }
        assert!(full);
    }

    #[test]
    fn commands_and_faults_latest_version_wins() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
            let mut c = CommandEnvelope {
                cmd_id: "c1".into(),
                device_id: "h1-kitchen".into(),
                action: CommandAction::Reboot,
                params: Default::default(),
                issued_ms: 1_700_000_000_000,
                status: CommandStatus::Pending,
            };
            s.put_command(&c).unwrap();
            c.status = CommandStatus::Acked;
            s.put_command(&c).unwrap();
            let mut f = FaultRecord {
                device_id: "h1-kitchen".into(),
                kind: FaultKind::StuckZero,
                first_ms: 1_700_000_000_000,
                last_ms: 1_700_000_030_000,
                recovery_cmd_id: None,
                note: String::new(),
            };
            s.put_fault(&f).unwrap();
            f.recovery_cmd_id = Some("c1".into());
            s.put_fault(&f).unwrap();
        }
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        assert_eq!(s.get_command("c1").unwrap().status, CommandStatus::Acked);
        let faults = s.query_faults(&FaultFilter::default());
        assert_eq!(faults.len(), 1);
        assert_eq!(faults[0].recovery_cmd_id.as_deref(), Some("c1"));
        let none = s.query_faults(&FaultFilter {
            kind: Some(FaultKind::Stale),
            ..Default::default()
        });
        assert!(none.is_empty());
    }

    #[test]
    fn tokens_are_hashed() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        s.put_user(UserRecord::new("ada", Role::Admin, "s3cret")).unwrap();
        let raw = fs::read_to_string(dir.path().join("users/users.ndjson")).unwrap();
        assert!(!raw.contains("s3cret"));
        assert_eq!(s.user_by_token("s3cret").unwrap().role, Role::Admin);
        assert!(s.user_by_token("wrong").is_none());
    }

    #[test]
    fn annotation_queries_intersect() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), StoreOptions::default()).unwrap();
        let a = |start, end| Annotation {
            site_id: "h1".into(),
            occupant_id: "o1".into(),
            activity: "x".into(),
            start_ms: start,
            end_ms: end,
            source: AnnotationSource::Api,
        };
        s.append_annotation(&a(100, Some(200))).unwrap();
        s.append_annotation(&a(300, None)).unwrap();
        assert_eq!(s.query_annotations("h1", 150, 160).len(), 1);
        assert_eq!(s.query_annotations("h1", 200, 300).len(), 0);
        assert_eq!(s.query_annotations("h1", 0, 1000).len(), 2);
        assert_eq!(s.query_annotations("h2", 0, 1000).len(), 0);
    }
}
