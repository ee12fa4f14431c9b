//! Database connectivity and the value model shared by every pipeline stage.
//!
//! Connections are opened from a URL. The embedded engine is SQLite; the
//! `Dialect` tag additionally covers MySQL-flavored SQL for parsing and for
//! final-query synthesis decisions, so pipelines written against this module
//! stay portable across the two.

use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

/// SQL dialect tag carried alongside generated statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    MySql,
    Sqlite,
    Generic,
}

impl Dialect {
    /// Parser dialect used when validating SQL text.
    pub fn parser(&self) -> Box<dyn sqlparser::dialect::Dialect> {
        match self {
            Dialect::MySql => Box::new(sqlparser::dialect::MySqlDialect {}),
            Dialect::Sqlite => Box::new(sqlparser::dialect::SQLiteDialect {}),
            Dialect::Generic => Box::new(sqlparser::dialect::GenericDialect {}),
        }
    }

    /// Whether `(a, b) IN ((1, 'x'), ...)` row-value syntax is available.
    pub fn supports_row_value_in(&self) -> bool {
        matches!(self, Dialect::MySql | Dialect::Sqlite)
    }

    /// Quote an identifier for this dialect.
    pub fn quote_ident(&self, name: &str) -> String {
        match self {
            Dialect::MySql => format!("`{}`", name.replace('`', "``")),
            Dialect::Sqlite | Dialect::Generic => format!("\"{}\"", name.replace('"', "\"\"")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dialect::MySql => "mysql",
            Dialect::Sqlite => "sqlite",
            Dialect::Generic => "generic",
        }
    }
}

/// A single cell of a query result.
///
/// Ordering is total (floats compare via `total_cmp`) so key tuples can live
/// in ordered sets; cross-variant order is by variant rank and only matters
/// for determinism, not semantics.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl CellValue {
    fn rank(&self) -> u8 {
        match self {
            CellValue::Null => 0,
            CellValue::Int(_) => 1,
            CellValue::Float(_) => 2,
            CellValue::Text(_) => 3,
            CellValue::Blob(_) => 4,
        }
    }

    /// Render as a SQL literal, for synthesized key-membership queries.
    pub fn to_sql_literal(&self) -> String {
        match self {
            CellValue::Null => "NULL".to_string(),
            CellValue::Int(v) => v.to_string(),
            CellValue::Float(v) => {
                let s = v.to_string();
                // bare integers written by f64 Display would re-read as INTEGER
                if s.contains(['.', 'e', 'E']) {
                    s
                } else {
                    format!("{s}.0")
                }
            }
            CellValue::Text(s) => format!("'{}'", s.replace('\'', "''")),
            CellValue::Blob(b) => format!("X'{}'", hex::encode(b)),
        }
    }
}

impl Eq for CellValue {}

impl Ord for CellValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use CellValue::*;
        match (self, other) {
            (Int(a), Int(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            (Text(a), Text(b)) => a.cmp(b),
            (Blob(a), Blob(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for CellValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Null => write!(f, "NULL"),
            CellValue::Int(v) => write!(f, "{v}"),
            CellValue::Float(v) => write!(f, "{v}"),
            CellValue::Text(s) => write!(f, "{s}"),
            CellValue::Blob(b) => write!(f, "<blob {} bytes>", b.len()),
        }
    }
}

impl Serialize for CellValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CellValue::Null => serializer.serialize_unit(),
            CellValue::Int(v) => serializer.serialize_i64(*v),
            CellValue::Float(v) => serializer.serialize_f64(*v),
            CellValue::Text(s) => serializer.serialize_str(s),
            CellValue::Blob(b) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("blob_hex", &hex::encode(b))?;
                map.end()
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("unsupported database url scheme `{0}`: this build embeds SQLite only")]
    UnsupportedScheme(String),
    #[error("failed to open database at `{target}`: {source}")]
    Connect {
        target: String,
        #[source]
        source: rusqlite::Error,
    },
    #[error("sql execution failed: {0}")]
    Execute(String),
    #[error("query exceeded the {0:?} execution timeout")]
    Timeout(Duration),
}

/// Raw rows as they came off the wire, before any pipeline interpretation.
#[derive(Debug, Clone)]
pub struct RawRows {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
}

/// A live database handle, safe to share across threads.
///
/// The embedded connection is serialized behind a mutex; read-only pipelines
/// never hold it across a model call, so contention stays negligible.
pub struct Db {
    conn: Mutex<rusqlite::Connection>,
    dialect: Dialect,
    url: String,
}

impl fmt::Debug for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Db")
            .field("url", &self.url)
            .field("dialect", &self.dialect)
            .finish_non_exhaustive()
    }
}

impl Db {
    /// Open from a connection URL.
    ///
    /// Accepted forms: `sqlite::memory:`, `sqlite:PATH`, `sqlite://PATH`,
    /// or a bare filesystem path. Other schemes are rejected rather than
    /// half-supported.
    pub fn open(url: &str) -> Result<Db, DbError> {
        let trimmed = url.trim();
        if let Some((scheme, rest)) = trimmed.split_once(':') {
            let known_scheme = scheme
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '+')
                && !scheme.is_empty()
                && !Path::new(trimmed).exists();
            if known_scheme && !scheme.eq_ignore_ascii_case("sqlite") {
                // bare windows-style or relative paths with colons fall through above
                return Err(DbError::UnsupportedScheme(scheme.to_string()));
            }
            if scheme.eq_ignore_ascii_case("sqlite") {
                let path = rest.trim_start_matches("//");
                if path == ":memory:" || path.is_empty() {
                    return Self::open_in_memory();
                }
                return Self::open_file(path, trimmed);
            }
        }
        if trimmed == ":memory:" {
            return Self::open_in_memory();
        }
        Self::open_file(trimmed, trimmed)
    }

    pub fn open_in_memory() -> Result<Db, DbError> {
        let conn = rusqlite::Connection::open_in_memory().map_err(|source| DbError::Connect {
            target: ":memory:".to_string(),
            source,
        })?;
        Ok(Db {
            conn: Mutex::new(conn),
            dialect: Dialect::Sqlite,
            url: "sqlite::memory:".to_string(),
        })
    }

    fn open_file(path: &str, url: &str) -> Result<Db, DbError> {
        let conn = rusqlite::Connection::open(path).map_err(|source| DbError::Connect {
            target: path.to_string(),
            source,
        })?;
        Ok(Db {
            conn: Mutex::new(conn),
            dialect: Dialect::Sqlite,
            url: url.to_string(),
        })
    }

    pub fn dialect(&self) -> Dialect {
        self.dialect
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Logical database name used as the schema cache key.
    pub fn database_name(&self) -> String {
        let path = self
            .url
            .trim_start_matches("sqlite:")
            .trim_start_matches("//");
        if path == ":memory:" || path.is_empty() {
            return "memory".to_string();
        }
        Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string())
    }

    /// Run a closure with the raw connection. Used by introspection and by
    /// test fixtures that need DDL; pipeline code goes through `query`.
    pub fn with_conn<T>(
        &self,
        f: impl FnOnce(&rusqlite::Connection) -> rusqlite::Result<T>,
    ) -> Result<T, DbError> {
        let conn = self.conn.lock().expect("db mutex");
        f(&conn).map_err(|e| DbError::Execute(e.to_string()))
    }

    /// Execute a query and collect all rows, aborting past `timeout`.
    pub fn query(&self, sql: &str, timeout: Duration) -> Result<RawRows, DbError> {
        let conn = self.conn.lock().expect("db mutex");
        let started = Instant::now();
        // checked every ~5k vm instructions; returning true interrupts
        conn.progress_handler(5_000, Some(move || started.elapsed() > timeout))
            .map_err(|e| DbError::Execute(e.to_string()))?;
        let result = Self::collect_rows(&conn, sql);
        let _ = conn.progress_handler(0, None::<fn() -> bool>);
        result.map_err(|e| {
            if e.sqlite_error_code() == Some(rusqlite::ErrorCode::OperationInterrupted) {
                DbError::Timeout(timeout)
            } else {
                DbError::Execute(e.to_string())
            }
        })
    }

    fn collect_rows(conn: &rusqlite::Connection, sql: &str) -> rusqlite::Result<RawRows> {
        let mut stmt = conn.prepare(sql)?;
        let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let ncols = columns.len();
        let mut rows_out = Vec::new();
        let mut rows = stmt.query([])?;
        while let Some(row) = rows.next()? {
            let mut out = Vec::with_capacity(ncols);
            for i in 0..ncols {
                out.push(match row.get_ref(i)? {
                    rusqlite::types::ValueRef::Null => CellValue::Null,
                    rusqlite::types::ValueRef::Integer(v) => CellValue::Int(v),
                    rusqlite::types::ValueRef::Real(v) => CellValue::Float(v),
                    rusqlite::types::ValueRef::Text(t) => {
                        CellValue::Text(String::from_utf8_lossy(t).into_owned())
                    }
                    rusqlite::types::ValueRef::Blob(b) => CellValue::Blob(b.to_vec()),
                });
            }
            rows_out.push(out);
        }
        Ok(RawRows {
            columns,
            rows: rows_out,
        })
    }
}
