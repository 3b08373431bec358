//! Embedded SQLite engine used to execute generated SQL.
//!
//! The dialect is SQLite plus `YEAR`, `MONTH` and `QUARTER` scalar functions
//! over ISO-8601 date text, which warehouse-style SQL commonly uses.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::functions::FunctionFlags;
use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use crate::tables::{ColumnSpec, SchemaSource, TableSpec};
use crate::{Error, Result};

/// One result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Integer(i) => Some(*i as f64),
            Cell::Real(r) => Some(*r),
            Cell::Text(t) => t.trim().parse().ok(),
            Cell::Null => None,
        }
    }

    /// Grouping key used when cells act as dimension values.
    pub fn key(&self) -> String {
        match self {
            Cell::Null => "NULL".to_string(),
            Cell::Integer(i) => i.to_string(),
            Cell::Real(r) => r.to_string(),
            Cell::Text(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub struct Database {
    conn: Connection,
}

impl std::fmt::Debug for Database {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Database").finish_non_exhaustive()
    }
}

impl Database {
    pub fn open_in_memory() -> Result<Self> {
        Self::wrap(Connection::open_in_memory()?)
    }

    /// Opens a SQLite file, or loads a `.sql` script into memory.
    pub fn open(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "sql") {
            let db = Self::open_in_memory()?;
            db.execute_script(&std::fs::read_to_string(path)?)?;
            return Ok(db);
        }
        if !path.is_file() {
            return Err(Error::Validation(format!("database {} not found", path.display())));
        }
        Self::wrap(Connection::open(path)?)
    }

    /// Resolves `db_id` inside `dir` as `.sqlite`, `.db` or `.sql`.
    pub fn resolve(dir: &Path, db_id: &str) -> Option<PathBuf> {
        ["sqlite", "db", "sql"].iter().map(|ext| dir.join(format!("{db_id}.{ext}"))).find(|p| p.is_file())
    }

    pub fn open_id(dir: &Path, db_id: &str) -> Result<Self> {
        let path = Self::resolve(dir, db_id)
            .ok_or_else(|| Error::Validation(format!("no database `{db_id}` in {}", dir.display())))?;
        Self::open(&path)
    }

    fn wrap(conn: Connection) -> Result<Self> {
        register_date_functions(&conn)?;
        Ok(Self { conn })
    }

    pub fn execute_script(&self, sql: &str) -> Result<()> {
        Ok(self.conn.execute_batch(sql)?)
    }

    /// Runs a read-only statement and collects every row.
    pub fn query(&self, sql: &str) -> Result<ResultTable> {
        let mut stmt = self.conn.prepare(sql)?;
        if !stmt.readonly() {
            return Err(Error::Validation("only read-only statements may be executed".into()));
        }
        let columns: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
        let n = columns.len();
        let mut rows = Vec::new();
        let mut it = stmt.query([])?;
        while let Some(row) = it.next()? {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                out.push(match row.get_ref(i)? {
                    ValueRef::Null => Cell::Null,
                    ValueRef::Integer(v) => Cell::Integer(v),
                    ValueRef::Real(v) => Cell::Real(v),
                    ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Cell::Text(b.iter().map(|x| format!("{x:02x}")).collect()),
                });
            }
            rows.push(out);
        }
        Ok(ResultTable { columns, rows })
    }

    /// Wall time to prepare and fully step `sql`.
    pub fn time_query(&self, sql: &str) -> Result<Duration> {
        let start = Instant::now();
        let mut stmt = self.conn.prepare(sql)?;
        let mut it = stmt.query([])?;
        while it.next()?.is_some() {}
        Ok(start.elapsed())
    }

    /// Reads table and column catalogs; heat defaults to 0.
    pub fn introspect(&self) -> Result<SchemaSource> {
        let mut stmt = self.conn.prepare(
            "SELECT name FROM sqlite_master WHERE type IN ('table','view') AND name NOT LIKE 'sqlite_%' ORDER BY name",
        )?;
        let names: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        let mut tables = Vec::with_capacity(names.len());
        for name in names {
            let mut info = self.conn.prepare(&format!("PRAGMA table_info(\"{}\")", name.replace('"', "\"\"")))?;
            let columns = info
                .query_map([], |r| Ok(ColumnSpec { name: r.get(1)?, column_type: r.get(2)?, comment: None }))?
                .collect::<rusqlite::Result<Vec<_>>>()?;
            tables.push(TableSpec { name, heat: None, columns, tags: Vec::new() });
        }
        Ok(SchemaSource { tables })
    }
}

/// Picks a value from `(year, month)`.
type DatePart = fn(i64, i64) -> i64;

fn register_date_functions(conn: &Connection) -> Result<()> {
    let flags = FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC;
    let parts: [(&str, DatePart); 3] = [("YEAR", |y, _| y), ("MONTH", |_, m| m), ("QUARTER", |_, m| (m - 1) / 3 + 1)];
    for (name, pick) in parts {
        conn.create_scalar_function(name, 1, flags, move |ctx| {
            let ymd = match ctx.get_raw(0) {
                ValueRef::Text(t) => parse_year_month(&String::from_utf8_lossy(t)),
                _ => None,
            };
            Ok(ymd.map(|(y, m)| pick(y, m)))
        })?;
    }
    Ok(())
}

fn parse_year_month(s: &str) -> Option<(i64, i64)> {
    let s = s.trim();
    let year: i64 = s.get(0..4)?.parse().ok()?;
    let month = match s.get(4..5) {
        Some("-") | Some("/") => s.get(5..7)?.parse().ok()?,
        _ => match s.get(4..6) {
            Some(m) => m.parse().ok()?,
            None => 1,
        },
    };
    (1..=12).contains(&month).then_some((year, month))
}
