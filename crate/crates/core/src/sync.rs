//! Incremental synchronization: extract records changed since the cursor,
//! clean them, upsert them into the analytics store, then advance the cursor.
//!
//! The cursor only moves after the upsert committed, so a failure anywhere
//! in a cycle leads to the same records being extracted again. Upserts are
//! keyed by `record_id`, which makes the replay harmless.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Severity;
use crate::cleaning::{flag_report, read_jsonl, CleanRecord, FlagReportLine, Pipeline, RawRecord};
use crate::store::{AnalyticsStore, UpsertStats};

pub const DEFAULT_CYCLE_INTERVAL: Duration = Duration::from_secs(72 * 3600);
/// Rule id attached to records the target store refused.
pub const STORE_CONSTRAINT_RULE: &str = "store.constraint";

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("source unavailable: {0}")]
    Source(String),
    #[error("target store: {0}")]
    Target(String),
    #[error("cursor storage: {0}")]
    Cursor(String),
    #[error("a sync cycle is already running")]
    CycleInProgress,
    #[error("injected fault at {0:?}")]
    InjectedFault(FaultPoint),
}

/// Read side of the ERP database.
pub trait SourceStore: Send + Sync {
    /// Records modified strictly after `since`. Order is not required.
    fn extract_since(&self, since: DateTime<Utc>) -> Result<Vec<RawRecord>, SyncError>;
}

/// Write side of the analytics store.
pub trait TargetStore: Send + Sync {
    fn upsert(&self, records: &[CleanRecord]) -> Result<UpsertStats, SyncError>;
}

impl TargetStore for AnalyticsStore {
    fn upsert(&self, records: &[CleanRecord]) -> Result<UpsertStats, SyncError> {
        AnalyticsStore::upsert(self, records)
            .map(|(stats, _)| stats)
            .map_err(|e| SyncError::Target(e.to_string()))
    }
}

/// In-memory source keyed by record id.
#[derive(Debug, Default)]
pub struct MemorySource {
    records: RwLock<BTreeMap<String, RawRecord>>,
    offline: AtomicBool,
}

impl MemorySource {
    pub fn new(records: impl IntoIterator<Item = RawRecord>) -> Self {
        let source = Self::default();
        for r in records {
            source.put(r);
        }
        source
    }

    pub fn put(&self, record: RawRecord) {
        self.records
            .write()
            .insert(record.record_id.clone(), record);
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Makes every extraction fail until switched back.
    pub fn set_offline(&self, offline: bool) {
        self.offline.store(offline, Ordering::SeqCst);
    }
}

impl SourceStore for MemorySource {
    fn extract_since(&self, since: DateTime<Utc>) -> Result<Vec<RawRecord>, SyncError> {
        if self.offline.load(Ordering::SeqCst) {
            return Err(SyncError::Source("source marked offline".into()));
        }
        Ok(self
            .records
            .read()
            .values()
            .filter(|r| r.modified_at > since)
            .cloned()
            .collect())
    }
}

/// Source backed by a JSON-lines export of raw records, re-read on every
/// extraction.
#[derive(Debug, Clone)]
pub struct JsonlSource {
    path: PathBuf,
}

impl JsonlSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl SourceStore for JsonlSource {
    fn extract_since(&self, since: DateTime<Utc>) -> Result<Vec<RawRecord>, SyncError> {
        let file = File::open(&self.path)
            .map_err(|e| SyncError::Source(format!("{}: {e}", self.path.display())))?;
        let records: Vec<RawRecord> = read_jsonl(BufReader::new(file))
            .map_err(|e| SyncError::Source(format!("{}: {e}", self.path.display())))?;
        Ok(records
            .into_iter()
            .filter(|r| r.modified_at > since)
            .collect())
    }
}

/// Records modified after `since`, ordered by `(modified_at, record_id)`.
pub fn extract_delta(
    source: &dyn SourceStore,
    since: DateTime<Utc>,
) -> Result<Vec<RawRecord>, SyncError> {
    let mut records = source.extract_since(since)?;
    records.retain(|r| r.modified_at > since);
    records.sort_by(|a, b| (a.modified_at, &a.record_id).cmp(&(b.modified_at, &b.record_id)));
    Ok(records)
}

pub fn upsert_batch(
    target: &dyn TargetStore,
    records: &[CleanRecord],
) -> Result<UpsertStats, SyncError> {
    target.upsert(records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStats {
    pub extracted: usize,
    pub cleaned: usize,
    pub upserted: usize,
    /// Refused by a reject-severity rule or by a store constraint.
    pub hard_rejected: usize,
    /// Loaded but carrying at least one review flag.
    pub flagged: usize,
    pub inserted: usize,
    pub updated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncCursor {
    pub last_successful_sync: DateTime<Utc>,
    pub last_batch_stats: BatchStats,
    pub cycle_interval_secs: u64,
}

impl Default for SyncCursor {
    fn default() -> Self {
        Self {
            last_successful_sync: DateTime::<Utc>::UNIX_EPOCH,
            last_batch_stats: BatchStats::default(),
            cycle_interval_secs: DEFAULT_CYCLE_INTERVAL.as_secs(),
        }
    }
}

impl SyncCursor {
    pub fn cycle_interval(&self) -> Duration {
        Duration::from_secs(self.cycle_interval_secs)
    }
}

pub trait CursorStore: Send + Sync {
    fn load(&self) -> Result<SyncCursor, SyncError>;
    fn save(&self, cursor: &SyncCursor) -> Result<(), SyncError>;
}

#[derive(Debug, Default)]
pub struct MemoryCursorStore {
    cursor: Mutex<SyncCursor>,
}

impl MemoryCursorStore {
    pub fn new(cursor: SyncCursor) -> Self {
        Self {
            cursor: Mutex::new(cursor),
        }
    }
}

impl CursorStore for MemoryCursorStore {
    fn load(&self) -> Result<SyncCursor, SyncError> {
        Ok(self.cursor.lock().clone())
    }

    fn save(&self, cursor: &SyncCursor) -> Result<(), SyncError> {
        *self.cursor.lock() = cursor.clone();
        Ok(())
    }
}

/// JSON cursor file, replaced atomically through a sibling temp file. A
/// missing file reads as the initial cursor.
#[derive(Debug, Clone)]
pub struct FileCursorStore {
    path: PathBuf,
}

impl FileCursorStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl CursorStore for FileCursorStore {
    fn load(&self) -> Result<SyncCursor, SyncError> {
        match fs::read_to_string(&self.path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| SyncError::Cursor(format!("{}: {e}", self.path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SyncCursor::default()),
            Err(e) => Err(SyncError::Cursor(format!("{}: {e}", self.path.display()))),
        }
    }

    fn save(&self, cursor: &SyncCursor) -> Result<(), SyncError> {
        let err = |e: std::io::Error| SyncError::Cursor(format!("{}: {e}", self.path.display()));
        let tmp = self.path.with_extension("tmp");
        let mut file = File::create(&tmp).map_err(err)?;
        file.write_all(
            serde_json::to_string_pretty(cursor)
                .expect("cursor serializes")
                .as_bytes(),
        )
        .map_err(err)?;
        file.sync_all().map_err(err)?;
        fs::rename(&tmp, &self.path).map_err(err)
    }
}

/// Where a simulated crash interrupts a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPoint {
    AfterExtract,
    AfterClean,
    /// Half of the batch committed, the rest not attempted.
    MidUpsert,
    AfterUpsert,
    AfterCursorPersist,
}

impl FaultPoint {
    pub const ALL: [FaultPoint; 5] = [
        FaultPoint::AfterExtract,
        FaultPoint::AfterClean,
        FaultPoint::MidUpsert,
        FaultPoint::AfterUpsert,
        FaultPoint::AfterCursorPersist,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleReport {
    pub cursor: SyncCursor,
    /// Flags raised by cleaning plus store refusals.
    pub flagged: Vec<FlagReportLine>,
}

fn check_fault(fault: Option<FaultPoint>, here: FaultPoint) -> Result<(), SyncError> {
    if fault == Some(here) {
        return Err(SyncError::InjectedFault(here));
    }
    Ok(())
}

/// One extract → clean → upsert → persist cycle starting from `cursor`.
/// Records refused by a reject rule or a store constraint count as
/// processed: their outcome is deterministic, so replaying them would only
/// repeat it.
pub fn run_sync_cycle(
    source: &dyn SourceStore,
    target: &dyn TargetStore,
    pipeline: &Pipeline,
    cursor: &SyncCursor,
    cursors: &dyn CursorStore,
    fault: Option<FaultPoint>,
) -> Result<CycleReport, SyncError> {
    let raw = extract_delta(source, cursor.last_successful_sync)?;
    check_fault(fault, FaultPoint::AfterExtract)?;

    let cleaned = clean_parallel(pipeline, &raw);
    check_fault(fault, FaultPoint::AfterClean)?;

    let (accepted, rejected): (Vec<&CleanRecord>, Vec<&CleanRecord>) =
        cleaned.iter().partition(|r| !r.is_rejected());
    let accepted: Vec<CleanRecord> = accepted.into_iter().cloned().collect();
    if fault == Some(FaultPoint::MidUpsert) {
        upsert_batch(target, &accepted[..accepted.len() / 2])?;
        return Err(SyncError::InjectedFault(FaultPoint::MidUpsert));
    }
    let upsert = upsert_batch(target, &accepted)?;
    check_fault(fault, FaultPoint::AfterUpsert)?;

    let mut flagged = flag_report(&cleaned);
    for (record_id, reason) in &upsert.failures {
        flagged.push(FlagReportLine {
            record_id: record_id.clone(),
            rule_id: STORE_CONSTRAINT_RULE.into(),
            severity: Severity::Reject,
            fields: Vec::new(),
            message: reason.clone(),
        });
    }
    let stats = BatchStats {
        extracted: raw.len(),
        cleaned: cleaned.len(),
        upserted: upsert.succeeded(),
        hard_rejected: rejected.len() + upsert.failed,
        flagged: accepted.iter().filter(|r| !r.flags.is_empty()).count(),
        inserted: upsert.inserted,
        updated: upsert.updated,
    };
    debug_assert_eq!(stats.upserted + stats.hard_rejected, stats.cleaned);
    let high_water = raw
        .iter()
        .map(|r| r.modified_at)
        .max()
        .unwrap_or(cursor.last_successful_sync);
    let next = SyncCursor {
        last_successful_sync: cursor.last_successful_sync.max(high_water),
        last_batch_stats: stats,
        cycle_interval_secs: cursor.cycle_interval_secs,
    };
    cursors.save(&next)?;
    check_fault(fault, FaultPoint::AfterCursorPersist)?;
    Ok(CycleReport {
        cursor: next,
        flagged,
    })
}

fn clean_parallel(pipeline: &Pipeline, records: &[RawRecord]) -> Vec<CleanRecord> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(8);
    if records.len() < 256 || workers == 1 {
        return pipeline.clean_batch(records);
    }
    let chunk = records.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|c| s.spawn(move || pipeline.clean_batch(c)))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("cleaning worker panicked"))
            .collect()
    })
}

/// Cursor storage, stores and pipeline wired together behind a cycle lock.
pub struct SyncEngine {
    source: Arc<dyn SourceStore>,
    target: Arc<dyn TargetStore>,
    pipeline: Arc<Pipeline>,
    cursors: Arc<dyn CursorStore>,
    report_path: Option<PathBuf>,
    lock: Mutex<()>,
}

impl SyncEngine {
    pub fn new(
        source: Arc<dyn SourceStore>,
        target: Arc<dyn TargetStore>,
        pipeline: Arc<Pipeline>,
        cursors: Arc<dyn CursorStore>,
    ) -> Self {
        Self {
            source,
            target,
            pipeline,
            cursors,
            report_path: None,
            lock: Mutex::new(()),
        }
    }

    /// Appends flagged-record lines to this JSON-lines file after each cycle.
    pub fn with_report(mut self, path: impl Into<PathBuf>) -> Self {
        self.report_path = Some(path.into());
        self
    }

    pub fn cursor(&self) -> Result<SyncCursor, SyncError> {
        self.cursors.load()
    }

    pub fn run_cycle(&self) -> Result<CycleReport, SyncError> {
        self.run_cycle_with_fault(None)
    }

    pub fn run_cycle_with_fault(
        &self,
        fault: Option<FaultPoint>,
    ) -> Result<CycleReport, SyncError> {
        let _guard = self.lock.try_lock().ok_or(SyncError::CycleInProgress)?;
        let cursor = self.cursors.load()?;
        let report = run_sync_cycle(
            &*self.source,
            &*self.target,
            &self.pipeline,
            &cursor,
            &*self.cursors,
            fault,
        )?;
        if let Some(path) = &self.report_path {
            append_report(path, &report.flagged)
                .map_err(|e| SyncError::Target(format!("{}: {e}", path.display())))?;
        }
        tracing::info!(
            extracted = report.cursor.last_batch_stats.extracted,
            upserted = report.cursor.last_batch_stats.upserted,
            rejected = report.cursor.last_batch_stats.hard_rejected,
            "sync cycle finished"
        );
        Ok(report)
    }
}

fn append_report(path: &Path, lines: &[FlagReportLine]) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for line in lines {
        writeln!(
            file,
            "{}",
            serde_json::to_string(line).expect("report line serializes")
        )?;
    }
    Ok(())
}

/// Background thread running a cycle immediately and then every `interval`
/// until the handle is stopped or dropped.
pub struct Scheduler {
    stop: Option<mpsc::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl Scheduler {
    pub fn spawn(engine: Arc<SyncEngine>, interval: Duration) -> Self {
        let (tx, rx) = mpsc::channel::<()>();
        let handle = std::thread::spawn(move || loop {
            if let Err(e) = engine.run_cycle() {
                tracing::warn!(error = %e, "sync cycle failed; cursor unchanged");
            }
            match rx.recv_timeout(interval) {
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                _ => break,
            }
        });
        Self {
            stop: Some(tx),
            handle: Some(handle),
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Scheduler {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::sample_catalog;
    use chrono::TimeZone;

    fn at(day: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, day, 12, 0, 0).unwrap()
    }

    fn raw(id: &str, day: u32, city: &str) -> RawRecord {
        RawRecord {
            record_id: id.into(),
            modified_at: at(day),
            fields: [
                ("actual_working_city", city),
                ("is_payroll", "true"),
                ("employee_status", "true"),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        }
    }

    struct Rig {
        source: Arc<MemorySource>,
        store: Arc<AnalyticsStore>,
        engine: SyncEngine,
    }

    fn rig(records: Vec<RawRecord>) -> Rig {
        let cat = Arc::new(sample_catalog());
        let source = Arc::new(MemorySource::new(records));
        let store = Arc::new(AnalyticsStore::open_in_memory(&cat.schema).unwrap());
        let engine = SyncEngine::new(
            source.clone(),
            store.clone(),
            Arc::new(Pipeline::sample(cat)),
            Arc::new(MemoryCursorStore::default()),
        );
        Rig {
            source,
            store,
            engine,
        }
    }

    #[test]
    fn delta_extraction_order_and_bounds() {
        let src = MemorySource::new([
            raw("b", 3, "Kazan"),
            raw("a", 2, "Ankara"),
            raw("c", 1, "Moscow"),
            raw("a2", 2, "x"),
        ]);
        let ids = |since| {
            extract_delta(&src, since)
                .unwrap()
                .into_iter()
                .map(|r| r.record_id)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(DateTime::<Utc>::UNIX_EPOCH), ["c", "a", "a2", "b"]);
        assert_eq!(ids(at(1)), ["a", "a2", "b"]);
        assert!(ids(at(3)).is_empty());
    }

    #[test]
    fn cycle_advances_cursor_and_converges() {
        let r = rig(vec![
            raw("a", 1, "Moskva"),
            raw("b", 2, "Ankara"),
            raw("c", 3, "Istanbul"),
        ]);
        let first = r.engine.run_cycle().unwrap().cursor;
        assert_eq!(first.last_successful_sync, at(3));
        assert_eq!(
            (
                first.last_batch_stats.extracted,
                first.last_batch_stats.inserted
            ),
            (3, 3)
        );
        let hash = r.store.state_hash().unwrap();

        let second = r.engine.run_cycle().unwrap().cursor;
        assert_eq!(second.last_successful_sync, at(3));
        assert_eq!(second.last_batch_stats, BatchStats::default());
        assert_eq!(r.store.state_hash().unwrap(), hash);

        r.source.put(raw("b", 4, "Mersin"));
        let third = r.engine.run_cycle().unwrap().cursor;
        assert_eq!(
            (third.last_batch_stats.updated, third.last_successful_sync),
            (1, at(4))
        );
    }

    #[test]
    fn source_failure_leaves_cursor() {
        let r = rig(vec![raw("a", 1, "Moscow")]);
        r.source.set_offline(true);
        assert!(matches!(r.engine.run_cycle(), Err(SyncError::Source(_))));
        assert_eq!(r.engine.cursor().unwrap(), SyncCursor::default());
    }

    #[test]
    fn rejected_records_are_reported_not_loaded() {
        let mut bad = raw("bad", 2, "Moscow");
        bad.fields.insert("is_payroll".into(), "maybe".into());
        let r = rig(vec![raw("ok", 1, "Moscow"), bad]);
        let report = r.engine.run_cycle().unwrap();
        let s = report.cursor.last_batch_stats;
        assert_eq!((s.cleaned, s.upserted, s.hard_rejected), (2, 1, 1));
        assert!(report
            .flagged
            .iter()
            .any(|f| f.record_id == "bad" && f.rule_id == "payroll_flag_values"));
        assert_eq!(r.store.record_ids().unwrap(), ["ok".to_string()].into());
    }

    #[test]
    fn cycle_lock_is_exclusive() {
        let r = rig(vec![]);
        let _held = r.engine.lock.lock();
        assert!(matches!(
            r.engine.run_cycle(),
            Err(SyncError::CycleInProgress)
        ));
    }

    #[test]
    fn file_cursor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileCursorStore::new(dir.path().join("cursor.json"));
        assert_eq!(store.load().unwrap(), SyncCursor::default());
        let c = SyncCursor {
            last_successful_sync: at(5),
            ..SyncCursor::default()
        };
        store.save(&c).unwrap();
        assert_eq!(store.load().unwrap(), c);
        assert!(!dir.path().join("cursor.tmp").exists());
    }
}
