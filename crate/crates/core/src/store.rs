//! Embedded analytics store: the cleaned, query-facing relational database.
//!
//! One SQLite connection per store, created from the catalog schema. Writes
//! go through [`AnalyticsStore::upsert`]; reads go through
//! [`AnalyticsStore::execute`], which runs under `query_only`, an authorizer
//! that only admits reads, and a statement deadline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rusqlite::hooks::{AuthAction, AuthContext, Authorization};
use rusqlite::types::{Value, ValueRef};
use rusqlite::{Connection, ErrorCode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{SchemaCatalog, SemanticType, TableDef};
use crate::cleaning::CleanRecord;
use crate::guard::{OutputColumn, ParamValue, ParameterizedStatement};
use crate::table::{sha256_hex, Cell, ColumnHeader, ResultTable};

pub const DEFAULT_ROW_CAP: usize = 1000;
pub const DEFAULT_STATEMENT_TIMEOUT: Duration = Duration::from_secs(15);
/// Table that synchronized records land in, keyed by `record_id`.
pub const DEFAULT_RECORD_TABLE: &str = "employees";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("execution timeout")]
    Timeout,
    #[error("statement is not read-only")]
    NotReadOnly,
    #[error("store schema: {0}")]
    Schema(String),
}

/// Per-record result of an upsert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "message", rename_all = "snake_case")]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    Failed(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsertStats {
    pub inserted: usize,
    pub updated: usize,
    pub failed: usize,
    /// `(record_id, reason)` for every failed record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<(String, String)>,
}

impl UpsertStats {
    pub fn succeeded(&self) -> usize {
        self.inserted + self.updated
    }
}

/// Full store contents, rows sorted, every value rendered with a type tag.
pub type StoreSnapshot = BTreeMap<String, Vec<Vec<String>>>;

pub struct AnalyticsStore {
    conn: Mutex<Connection>,
    schema: SchemaCatalog,
    record_table: String,
    reads: AtomicU64,
}

impl std::fmt::Debug for AnalyticsStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticsStore")
            .field("record_table", &self.record_table)
            .finish()
    }
}

fn sql_type(t: SemanticType) -> &'static str {
    match t {
        SemanticType::Integer => "INTEGER",
        SemanticType::Decimal => "REAL",
        _ => "TEXT",
    }
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

fn create_table_sql(table: &TableDef) -> String {
    let cols: Vec<String> = table
        .columns
        .iter()
        .map(|c| {
            let name = quote(&c.name);
            let mut def = format!("{name} {}", sql_type(c.semantic_type));
            if c.name == "record_id" {
                def.push_str(" PRIMARY KEY NOT NULL");
            }
            match c.semantic_type {
                SemanticType::Boolean => {
                    def.push_str(&format!(" CHECK ({name} IN ('true', 'false'))"))
                }
                SemanticType::Integer => {
                    def.push_str(&format!(" CHECK (typeof({name}) IN ('integer', 'null'))"))
                }
                SemanticType::Decimal => def.push_str(&format!(
                    " CHECK (typeof({name}) IN ('real', 'integer', 'null'))"
                )),
                _ => {}
            }
            def
        })
        .collect();
    format!(
        "CREATE TABLE IF NOT EXISTS {} ({})",
        quote(&table.name),
        cols.join(", ")
    )
}

/// Converts a raw field string into the column's storage value. Empty
/// strings are NULL.
fn field_value(value: &str, ty: SemanticType) -> Result<Value, String> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(Value::Null);
    }
    match ty {
        SemanticType::Integer => v
            .parse::<i64>()
            .map(Value::Integer)
            .map_err(|_| format!("`{value}` is not an integer")),
        SemanticType::Decimal => v
            .parse::<f64>()
            .map(Value::Real)
            .map_err(|_| format!("`{value}` is not a number")),
        _ => Ok(Value::Text(value.to_string())),
    }
}

fn param_value(p: &ParamValue) -> Value {
    match p {
        ParamValue::Null => Value::Null,
        ParamValue::Integer(i) => Value::Integer(*i),
        ParamValue::Real(r) => Value::Real(*r),
        ParamValue::Text(s) => Value::Text(s.clone()),
    }
}

fn cell(v: ValueRef<'_>) -> Cell {
    match v {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(r) => Cell::Decimal(r),
        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Cell::Text(crate::table::hex_string(b)),
    }
}

fn tagged(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "n:".into(),
        ValueRef::Integer(i) => format!("i:{i}"),
        ValueRef::Real(r) => format!("r:{r:?}"),
        ValueRef::Text(t) => format!("t:{}", String::from_utf8_lossy(t)),
        ValueRef::Blob(b) => format!("b:{}", crate::table::hex_string(b)),
    }
}

fn read_only_authorizer(ctx: AuthContext<'_>) -> Authorization {
    match ctx.action {
        AuthAction::Select | AuthAction::Read { .. } | AuthAction::Function { .. } => {
            Authorization::Allow
        }
        _ => Authorization::Deny,
    }
}

impl AnalyticsStore {
    pub fn open_in_memory(schema: &SchemaCatalog) -> Result<Self, StoreError> {
        Self::with_connection(Connection::open_in_memory()?, schema)
    }

    pub fn open(path: impl AsRef<Path>, schema: &SchemaCatalog) -> Result<Self, StoreError> {
        let conn = Connection::open(path)?;
        conn.pragma_update_and_check(None, "journal_mode", "WAL", |_| Ok(()))?;
        Self::with_connection(conn, schema)
    }

    fn with_connection(conn: Connection, schema: &SchemaCatalog) -> Result<Self, StoreError> {
        for table in &schema.tables {
            conn.execute(&create_table_sql(table), [])?;
        }
        let record_table = schema
            .table(DEFAULT_RECORD_TABLE)
            .filter(|t| t.column("record_id").is_some())
            .or_else(|| {
                schema
                    .tables
                    .iter()
                    .find(|t| t.column("record_id").is_some())
            })
            .map(|t| t.name.clone())
            .unwrap_or_default();
        Ok(Self {
            conn: Mutex::new(conn),
            schema: schema.clone(),
            record_table,
            reads: AtomicU64::new(0),
        })
    }

    pub fn schema(&self) -> &SchemaCatalog {
        &self.schema
    }

    pub fn record_table(&self) -> &str {
        &self.record_table
    }

    /// Number of read statements executed so far.
    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    /// Inserts or replaces records keyed by `record_id` in one transaction.
    /// Each record runs under its own savepoint, so a constraint failure
    /// costs only that record.
    pub fn upsert(
        &self,
        records: &[CleanRecord],
    ) -> Result<(UpsertStats, Vec<UpsertOutcome>), StoreError> {
        let table = self
            .schema
            .table(&self.record_table)
            .ok_or_else(|| {
                StoreError::Schema("catalog has no table with a record_id column".into())
            })?
            .clone();
        let mut stats = UpsertStats::default();
        let mut outcomes = Vec::with_capacity(records.len());
        if records.is_empty() {
            return Ok((stats, outcomes));
        }
        let names: Vec<String> = table.columns.iter().map(|c| quote(&c.name)).collect();
        let updates: Vec<String> = names
            .iter()
            .filter(|n| n.as_str() != "\"record_id\"")
            .map(|n| format!("{n} = excluded.{n}"))
            .collect();
        let upsert_sql = format!(
            "INSERT INTO {t} ({cols}) VALUES ({ph}) ON CONFLICT(record_id) DO UPDATE SET {upd}",
            t = quote(&table.name),
            cols = names.join(", "),
            ph = vec!["?"; names.len()].join(", "),
            upd = updates.join(", "),
        );
        let exists_sql = format!("SELECT 1 FROM {} WHERE record_id = ?", quote(&table.name));

        let mut conn = self.conn.lock();
        let mut tx = conn.transaction()?;
        for record in records {
            let outcome = match record_values(&table, record) {
                Err(reason) => UpsertOutcome::Failed(reason),
                Ok(values) => {
                    let sp = tx.savepoint()?;
                    let existed = sp
                        .prepare_cached(&exists_sql)?
                        .exists([&record.record_id])?;
                    let result = sp
                        .prepare_cached(&upsert_sql)?
                        .execute(rusqlite::params_from_iter(values.iter()));
                    match result {
                        Ok(_) => {
                            sp.commit()?;
                            if existed {
                                UpsertOutcome::Updated
                            } else {
                                UpsertOutcome::Inserted
                            }
                        }
                        Err(e) if is_constraint(&e) => UpsertOutcome::Failed(e.to_string()),
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            match &outcome {
                UpsertOutcome::Inserted => stats.inserted += 1,
                UpsertOutcome::Updated => stats.updated += 1,
                UpsertOutcome::Failed(reason) => {
                    stats.failed += 1;
                    stats
                        .failures
                        .push((record.record_id.clone(), reason.clone()));
                }
            }
            outcomes.push(outcome);
        }
        tx.commit()?;
        Ok((stats, outcomes))
    }

    /// Loads reference rows into any catalog table. Fields are column name
    /// to raw value; unknown columns are an error.
    pub fn insert_rows(
        &self,
        table: &str,
        rows: &[BTreeMap<String, String>],
    ) -> Result<usize, StoreError> {
        let def = self
            .schema
            .table(table)
            .ok_or_else(|| StoreError::Schema(format!("unknown table `{table}`")))?
            .clone();
        let names: Vec<String> = def.columns.iter().map(|c| quote(&c.name)).collect();
        let sql = format!(
            "INSERT INTO {} ({}) VALUES ({})",
            quote(&def.name),
            names.join(", "),
            vec!["?"; names.len()].join(", ")
        );
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        for row in rows {
            if let Some(unknown) = row.keys().find(|k| def.column(k).is_none()) {
                return Err(StoreError::Schema(format!(
                    "table `{table}` has no column `{unknown}`"
                )));
            }
            let values = def
                .columns
                .iter()
                .map(|c| field_value(row.get(&c.name).map_or("", String::as_str), c.semantic_type))
                .collect::<Result<Vec<_>, _>>()
                .map_err(StoreError::Schema)?;
            tx.prepare_cached(&sql)?
                .execute(rusqlite::params_from_iter(values.iter()))?;
        }
        tx.commit()?;
        Ok(rows.len())
    }

    pub fn count(&self, table: &str) -> Result<usize, StoreError> {
        let def = self
            .schema
            .table(table)
            .ok_or_else(|| StoreError::Schema(format!("unknown table `{table}`")))?;
        let conn = self.conn.lock();
        let n: i64 = conn.query_row(
            &format!("SELECT COUNT(*) FROM {}", quote(&def.name)),
            [],
            |r| r.get(0),
        )?;
        Ok(n as usize)
    }

    /// Executes a guarded statement with bound parameters. `output` supplies
    /// header labels and types; `row_cap` cuts the result and sets
    /// `truncated`.
    pub fn execute(
        &self,
        stmt: &ParameterizedStatement,
        output: &[OutputColumn],
        row_cap: usize,
        timeout: Duration,
    ) -> Result<ResultTable, StoreError> {
        let conn = self.conn.lock();
        self.reads.fetch_add(1, Ordering::Relaxed);
        conn.pragma_update(None, "query_only", true)?;
        conn.authorizer(Some(read_only_authorizer));
        let deadline = Instant::now() + timeout;
        conn.progress_handler(1000, Some(move || Instant::now() >= deadline));
        let result = run_query(&conn, stmt, output, row_cap);
        conn.progress_handler(0, None::<fn() -> bool>);
        conn.authorizer(None::<fn(AuthContext<'_>) -> Authorization>);
        conn.pragma_update(None, "query_only", false)?;
        result.map_err(|e| match e {
            StoreError::Sqlite(ref err)
                if err.sqlite_error_code() == Some(ErrorCode::OperationInterrupted) =>
            {
                StoreError::Timeout
            }
            other => other,
        })
    }

    /// Every catalog table's rows, sorted, for equality checks.
    pub fn snapshot(&self) -> Result<StoreSnapshot, StoreError> {
        let conn = self.conn.lock();
        let mut out = BTreeMap::new();
        for table in &self.schema.tables {
            let order: Vec<String> = (1..=table.columns.len()).map(|i| i.to_string()).collect();
            let sql = format!(
                "SELECT * FROM {} ORDER BY {}",
                quote(&table.name),
                order.join(", ")
            );
            let mut stmt = conn.prepare(&sql)?;
            let n = stmt.column_count();
            let rows = stmt
                .query_map([], |row| {
                    (0..n)
                        .map(|i| row.get_ref(i).map(tagged))
                        .collect::<Result<Vec<_>, _>>()
                })?
                .collect::<Result<Vec<_>, _>>()?;
            out.insert(table.name.clone(), rows);
        }
        Ok(out)
    }

    /// SHA-256 over the snapshot; equal hashes mean equal contents.
    pub fn state_hash(&self) -> Result<String, StoreError> {
        let snap = self.snapshot()?;
        Ok(sha256_hex(
            &serde_json::to_string(&snap).expect("snapshot serializes"),
        ))
    }

    /// Record ids currently in the record table.
    pub fn record_ids(&self) -> Result<BTreeSet<String>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(&format!(
            "SELECT record_id FROM {}",
            quote(&self.record_table)
        ))?;
        let ids = stmt
            .query_map([], |r| r.get::<_, String>(0))?
            .collect::<Result<BTreeSet<_>, _>>()?;
        Ok(ids)
    }
}

fn is_constraint(e: &rusqlite::Error) -> bool {
    e.sqlite_error_code() == Some(ErrorCode::ConstraintViolation)
}

fn record_values(table: &TableDef, record: &CleanRecord) -> Result<Vec<Value>, String> {
    if let Some(unknown) = record
        .fields
        .keys()
        .find(|k| table.column(k).is_none() && k.as_str() != "record_id")
    {
        return Err(format!("table `{}` has no column `{unknown}`", table.name));
    }
    table
        .columns
        .iter()
        .map(|c| {
            if c.name == "record_id" {
                return Ok(Value::Text(record.record_id.clone()));
            }
            let raw = record.fields.get(&c.name).map_or("", String::as_str);
            field_value(raw, c.semantic_type).map_err(|e| format!("{}: {e}", c.name))
        })
        .collect()
}

fn run_query(
    conn: &Connection,
    stmt: &ParameterizedStatement,
    output: &[OutputColumn],
    row_cap: usize,
) -> Result<ResultTable, StoreError> {
    let mut prepared = conn.prepare(&stmt.sql)?;
    if !prepared.readonly() {
        return Err(StoreError::NotReadOnly);
    }
    let n = prepared.column_count();
    let headers: Vec<ColumnHeader> = (0..n)
        .map(|i| match output.get(i) {
            Some(o) => ColumnHeader {
                label: o.label.clone(),
                semantic_type: o.semantic_type,
            },
            None => ColumnHeader {
                label: prepared
                    .column_name(i)
                    .map(str::to_string)
                    .unwrap_or_default(),
                semantic_type: SemanticType::Text,
            },
        })
        .collect();
    let values: Vec<Value> = stmt.params.iter().map(|p| param_value(&p.value)).collect();
    let mut rows = prepared.query(rusqlite::params_from_iter(values.iter()))?;
    let mut out = Vec::new();
    let mut truncated = false;
    while let Some(row) = rows.next()? {
        if out.len() == row_cap {
            truncated = true;
            break;
        }
        out.push(
            (0..n)
                .map(|i| row.get_ref(i).map(cell))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok(ResultTable::new(headers, out, truncated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::sample_catalog;
    use crate::guard::Guard;
    use chrono::{TimeZone, Utc};

    fn record(id: &str, fields: &[(&str, &str)]) -> CleanRecord {
        CleanRecord {
            record_id: id.into(),
            modified_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            provenance: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    fn seeded() -> (AnalyticsStore, crate::catalog::Catalog) {
        let cat = sample_catalog();
        let store = AnalyticsStore::open_in_memory(&cat.schema).unwrap();
        let cities = [
            "Moscow", "Moscow", "Ankara", "Moscow", "Kazan", "Moscow", "Istanbul", "Ankara",
            "Mersin", "Kazan",
        ];
        let batch: Vec<CleanRecord> = cities
            .iter()
            .enumerate()
            .map(|(i, c)| {
                record(
                    &format!("r{i:02}"),
                    &[
                        ("actual_working_city", c),
                        ("is_payroll", "true"),
                        ("adines_number", &format!("4{i:010}")),
                    ],
                )
            })
            .collect();
        store.upsert(&batch).unwrap();
        (store, cat)
    }

    fn run(
        store: &AnalyticsStore,
        cat: &crate::catalog::Catalog,
        sql: &str,
        cap: usize,
    ) -> ResultTable {
        let g = Guard::new(cat).check(sql, None);
        assert!(g.verdict.is_pass(), "{}", g.verdict.summary());
        store
            .execute(
                g.statement.as_ref().unwrap(),
                &g.output,
                cap,
                DEFAULT_STATEMENT_TIMEOUT,
            )
            .unwrap()
    }

    #[test]
    fn upsert_twice_is_idempotent() {
        let (store, _) = seeded();
        let before = store.state_hash().unwrap();
        let batch = vec![record(
            "r00",
            &[
                ("actual_working_city", "Moscow"),
                ("is_payroll", "true"),
                ("adines_number", "40000000000"),
            ],
        )];
        let (stats, _) = store.upsert(&batch).unwrap();
        assert_eq!((stats.inserted, stats.updated, stats.failed), (0, 1, 0));
        assert_eq!(store.state_hash().unwrap(), before);
    }

    #[test]
    fn constraint_failure_is_per_record() {
        let cat = sample_catalog();
        let store = AnalyticsStore::open_in_memory(&cat.schema).unwrap();
        let batch = vec![
            record("a", &[("is_payroll", "true")]),
            record("b", &[("is_payroll", "maybe")]),
            record("c", &[("years_experience", "7")]),
            record("d", &[("years_experience", "seven")]),
        ];
        let (stats, outcomes) = store.upsert(&batch).unwrap();
        assert_eq!((stats.inserted, stats.failed), (2, 2));
        assert!(matches!(outcomes[1], UpsertOutcome::Failed(_)));
        assert_eq!(
            store.record_ids().unwrap(),
            ["a".to_string(), "c".to_string()].into()
        );
    }

    #[test]
    fn empty_batch_changes_nothing() {
        let (store, _) = seeded();
        let before = store.state_hash().unwrap();
        let (stats, outcomes) = store.upsert(&[]).unwrap();
        assert_eq!(stats, UpsertStats::default());
        assert!(outcomes.is_empty());
        assert_eq!(store.state_hash().unwrap(), before);
    }

    #[test]
    fn count_query_over_seed() {
        let (store, cat) = seeded();
        // Seed cities: Moscow at r00, r01, r03, r05.
        let t = run(
            &store,
            &cat,
            "SELECT COUNT(*) FROM employees WHERE actual_working_city = 'Moscow'",
            10,
        );
        assert_eq!(t.rows, vec![vec![Cell::Integer(4)]]);
        assert_eq!(t.headers[0].semantic_type, SemanticType::Integer);
    }

    #[test]
    fn row_cap_sets_truncated() {
        let (store, cat) = seeded();
        let t = run(
            &store,
            &cat,
            "SELECT record_id FROM employees ORDER BY record_id",
            3,
        );
        assert_eq!(t.row_count, 3);
        assert!(t.truncated);
        let t = run(&store, &cat, "SELECT record_id FROM employees", 10);
        assert!(!t.truncated);
    }

    #[test]
    fn writes_are_refused_on_the_read_path() {
        let (store, _) = seeded();
        let before = store.state_hash().unwrap();
        for sql in [
            "DELETE FROM employees",
            "UPDATE employees SET country = 'x'",
            "SELECT 1; DELETE FROM employees",
        ] {
            let stmt = ParameterizedStatement {
                sql: sql.into(),
                params: Vec::new(),
            };
            assert!(
                store
                    .execute(&stmt, &[], 10, DEFAULT_STATEMENT_TIMEOUT)
                    .is_err(),
                "{sql}"
            );
        }
        assert_eq!(store.state_hash().unwrap(), before);
        // The write path still works afterwards.
        let (stats, _) = store.upsert(&[record("zz", &[])]).unwrap();
        assert_eq!(stats.inserted, 1);
    }

    #[test]
    fn deadline_interrupts_long_queries() {
        let (store, _) = seeded();
        let stmt = ParameterizedStatement {
            sql: "SELECT COUNT(*) FROM employees a, employees b, employees c, employees d, employees e, employees f, employees g".into(),
            params: Vec::new(),
        };
        let err = store
            .execute(&stmt, &[], 10, Duration::from_millis(1))
            .unwrap_err();
        assert!(matches!(err, StoreError::Timeout), "{err}");
    }
}
