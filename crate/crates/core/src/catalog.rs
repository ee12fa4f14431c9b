//! Catalog introspection: turn a live database into an immutable
//! [`SchemaModel`], cache it per database, and optionally merge a
//! human-authored semantic description file into the table and column
//! comments.
//!
//! The model is metadata only (names, types, keys, comments). Sampled data
//! values are deliberately not part of it; anything data-dependent, such as
//! multimodal column discovery, happens downstream against the live handle.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{Db, DbError};

/// What a column's values point at, when they point at anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ImageUrl,
    DocumentPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data_type: String,
    pub nullable: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub modality: Option<Modality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub local_columns: Vec<String>,
    pub referenced_table: String,
    pub referenced_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comment: Option<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

/// Typed image of a database catalog. Immutable after construction; share
/// freely across threads via `Arc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaModel {
    pub database_name: String,
    pub tables: Vec<Table>,
}

impl SchemaModel {
    /// Case-insensitive table lookup, preserving catalog casing.
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_names(&self) -> Vec<&str> {
        self.tables.iter().map(|t| t.name.as_str()).collect()
    }

    /// Structural invariant check. Empty result means the model is sound:
    /// unique table names, unique column names per table, PK columns exist,
    /// FK endpoints resolve on both sides with equal arity.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = HashMap::new();
        for t in &self.tables {
            if let Some(prev) = seen.insert(t.name.to_lowercase(), &t.name) {
                problems.push(format!("duplicate table name `{}` / `{}`", prev, t.name));
            }
            let mut cols = HashMap::new();
            for c in &t.columns {
                if cols.insert(c.name.to_lowercase(), ()).is_some() {
                    problems.push(format!("duplicate column `{}.{}`", t.name, c.name));
                }
            }
            for pk in &t.primary_key {
                if t.column(pk).is_none() {
                    problems.push(format!("primary key column `{}.{}` missing", t.name, pk));
                }
            }
            for fk in &t.foreign_keys {
                if fk.local_columns.is_empty() || fk.local_columns.len() != fk.referenced_columns.len()
                {
                    problems.push(format!(
                        "foreign key on `{}` has mismatched column lists",
                        t.name
                    ));
                    continue;
                }
                for lc in &fk.local_columns {
                    if t.column(lc).is_none() {
                        problems.push(format!("fk local column `{}.{}` missing", t.name, lc));
                    }
                }
                match self.table(&fk.referenced_table) {
                    None => problems.push(format!(
                        "fk on `{}` references missing table `{}`",
                        t.name, fk.referenced_table
                    )),
                    Some(rt) => {
                        for rc in &fk.referenced_columns {
                            if rt.column(rc).is_none() {
                                problems.push(format!(
                                    "fk on `{}` references missing column `{}.{}`",
                                    t.name, rt.name, rc
                                ));
                            }
                        }
                    }
                }
            }
        }
        problems
    }
}

/// Human-authored descriptions to merge into a schema.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemanticEnrichment {
    pub table_descriptions: BTreeMap<String, String>,
    pub column_descriptions: BTreeMap<(String, String), String>,
}

#[derive(Deserialize)]
struct EnrichmentFile {
    tables: BTreeMap<String, EnrichmentFileTable>,
}

#[derive(Deserialize)]
struct EnrichmentFileTable {
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    columns: BTreeMap<String, String>,
}

impl SemanticEnrichment {
    /// Parse the description file format:
    /// `{"tables": {NAME: {"description": TEXT, "columns": {NAME: TEXT}}}}`.
    pub fn from_json_str(text: &str) -> Result<SemanticEnrichment, CatalogError> {
        let file: EnrichmentFile = serde_json::from_str(text)
            .map_err(|e| CatalogError::EnrichmentParse(e.to_string()))?;
        let mut out = SemanticEnrichment::default();
        for (table, spec) in file.tables {
            if let Some(d) = spec.description {
                out.table_descriptions.insert(table.clone(), d);
            }
            for (col, d) in spec.columns {
                out.column_descriptions.insert((table.clone(), col), d);
            }
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.table_descriptions.is_empty() && self.column_descriptions.is_empty()
    }
}

/// An enrichment key that did not resolve against the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnrichmentDiagnostic {
    pub key: String,
    pub kind: &'static str,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog query over `{object}` failed: {source}")]
    Catalog {
        object: String,
        #[source]
        source: DbError,
    },
    #[error("introspected catalog violates schema invariants: {0}")]
    Invariants(String),
    #[error("semantic description file is malformed: {0}")]
    EnrichmentParse(String),
}

/// Read the catalog of `db` into a fresh [`SchemaModel`].
///
/// Views are included as tables without keys. Table order follows the
/// catalog (creation order), which keeps every downstream rendering stable.
pub fn introspect(db: &Db) -> Result<SchemaModel, CatalogError> {
    let object_list = db
        .with_conn(|c| {
            let mut stmt = c.prepare(
                "SELECT name, type FROM sqlite_master
                 WHERE type IN ('table', 'view') AND name NOT LIKE 'sqlite_%'",
            )?;
            let rows = stmt.query_map([], |r| {
                Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?))
            })?;
            rows.collect::<rusqlite::Result<Vec<_>>>()
        })
        .map_err(|source| CatalogError::Catalog {
            object: "sqlite_master".to_string(),
            source,
        })?;

    let mut tables = Vec::with_capacity(object_list.len());
    for (name, kind) in &object_list {
        let is_view = kind == "view";
        let columns_raw = db
            .with_conn(|c| {
                let mut stmt = c.prepare(
                    "SELECT name, type, \"notnull\", pk FROM pragma_table_info(?1) ORDER BY cid",
                )?;
                let rows = stmt.query_map([name], |r| {
                    Ok((
                        r.get::<_, String>(0)?,
                        r.get::<_, String>(1)?,
                        r.get::<_, i64>(2)?,
                        r.get::<_, i64>(3)?,
                    ))
                })?;
                rows.collect::<rusqlite::Result<Vec<_>>>()
            })
            .map_err(|source| CatalogError::Catalog {
                object: format!("table_info({name})"),
                source,
            })?;

        let mut columns = Vec::with_capacity(columns_raw.len());
        let mut pk_positions: Vec<(i64, String)> = Vec::new();
        for (cname, ctype, notnull, pk) in columns_raw {
            if pk > 0 && !is_view {
                pk_positions.push((pk, cname.clone()));
            }
            columns.push(Column {
                name: cname,
                data_type: if ctype.is_empty() {
                    "ANY".to_string()
                } else {
                    ctype
                },
                nullable: notnull == 0 && pk == 0,
                comment: None,
                modality: None,
            });
        }
        pk_positions.sort();
        let primary_key = pk_positions.into_iter().map(|(_, n)| n).collect();

        let foreign_keys = if is_view {
            Vec::new()
        } else {
            let raw = db
                .with_conn(|c| {
                    let mut stmt = c.prepare(
                        "SELECT id, seq, \"table\", \"from\", \"to\"
                         FROM pragma_foreign_key_list(?1) ORDER BY id, seq",
                    )?;
                    let rows = stmt.query_map([name], |r| {
                        Ok((
                            r.get::<_, i64>(0)?,
                            r.get::<_, String>(2)?,
                            r.get::<_, String>(3)?,
                            r.get::<_, Option<String>>(4)?,
                        ))
                    })?;
                    rows.collect::<rusqlite::Result<Vec<_>>>()
                })
                .map_err(|source| CatalogError::Catalog {
                    object: format!("foreign_key_list({name})"),
                    source,
                })?;
            let mut fks: Vec<(i64, ForeignKey)> = Vec::new();
            for (id, ref_table, from, to) in raw {
                match fks.last_mut() {
                    Some((last_id, fk)) if *last_id == id => {
                        fk.local_columns.push(from);
                        if let Some(to) = to {
                            fk.referenced_columns.push(to);
                        }
                    }
                    _ => fks.push((
                        id,
                        ForeignKey {
                            local_columns: vec![from],
                            referenced_table: ref_table,
                            referenced_columns: to.into_iter().collect(),
                        },
                    )),
                }
            }
            fks.into_iter().map(|(_, fk)| fk).collect()
        };

        tables.push(Table {
            name: name.clone(),
            columns,
            primary_key,
            foreign_keys,
            comment: None,
        });
    }

    let mut model = SchemaModel {
        database_name: db.database_name(),
        tables,
    };

    // a fk declared without explicit target columns references the pk
    let pk_by_table: HashMap<String, Vec<String>> = model
        .tables
        .iter()
        .map(|t| (t.name.to_lowercase(), t.primary_key.clone()))
        .collect();
    for t in &mut model.tables {
        for fk in &mut t.foreign_keys {
            if fk.referenced_columns.is_empty() {
                if let Some(pk) = pk_by_table.get(&fk.referenced_table.to_lowercase()) {
                    fk.referenced_columns = pk.clone();
                }
            }
        }
    }

    let problems = model.invariant_violations();
    if !problems.is_empty() {
        return Err(CatalogError::Invariants(problems.join("; ")));
    }
    Ok(model)
}

/// Merge descriptions into comments. Structure is untouched; keys that do
/// not resolve are returned as diagnostics instead of failing the merge.
pub fn apply_enrichment(
    schema: &SchemaModel,
    enrichment: &SemanticEnrichment,
) -> (SchemaModel, Vec<EnrichmentDiagnostic>) {
    let mut out = schema.clone();
    let mut diagnostics = Vec::new();

    for (table, desc) in &enrichment.table_descriptions {
        match out
            .tables
            .iter_mut()
            .find(|t| t.name.eq_ignore_ascii_case(table))
        {
            Some(t) => t.comment = Some(desc.clone()),
            None => diagnostics.push(EnrichmentDiagnostic {
                key: table.clone(),
                kind: "unknown_table",
            }),
        }
    }
    for ((table, column), desc) in &enrichment.column_descriptions {
        let target = out
            .tables
            .iter_mut()
            .find(|t| t.name.eq_ignore_ascii_case(table))
            .and_then(|t| {
                t.columns
                    .iter_mut()
                    .find(|c| c.name.eq_ignore_ascii_case(column))
            });
        match target {
            Some(c) => c.comment = Some(desc.clone()),
            None => diagnostics.push(EnrichmentDiagnostic {
                key: format!("{table}.{column}"),
                kind: "unknown_column",
            }),
        }
    }
    (out, diagnostics)
}

/// How much of the schema to put into rendered text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderStyle {
    /// Names, types, and key structure only.
    Compact,
    /// Everything, with comments rendered verbatim.
    Full,
}

/// Render one table as a self-contained block. The per-table chunking used
/// by retrieval reuses this, so a chunk is exactly the table's share of the
/// full rendering.
pub fn render_table_block(table: &Table, style: RenderStyle) -> String {
    let mut out = String::new();
    out.push_str(&format!("TABLE {}", table.name));
    if style == RenderStyle::Full {
        if let Some(c) = &table.comment {
            out.push_str(&format!(" -- {c}"));
        }
    }
    out.push('\n');
    for col in &table.columns {
        out.push_str(&format!("  {} {}", col.name, col.data_type));
        if !col.nullable {
            out.push_str(" NOT NULL");
        }
        if table.primary_key.len() == 1 && table.primary_key[0] == col.name {
            out.push_str(" PRIMARY KEY");
        }
        for fk in &table.foreign_keys {
            if fk.local_columns.len() == 1 && fk.local_columns[0] == col.name {
                out.push_str(&format!(
                    " references {}({})",
                    fk.referenced_table,
                    fk.referenced_columns.join(", ")
                ));
            }
        }
        if style == RenderStyle::Full {
            if let Some(c) = &col.comment {
                out.push_str(&format!(" -- {c}"));
            }
        }
        out.push('\n');
    }
    if table.primary_key.len() > 1 {
        out.push_str(&format!("  PRIMARY KEY ({})\n", table.primary_key.join(", ")));
    }
    for fk in &table.foreign_keys {
        if fk.local_columns.len() > 1 {
            out.push_str(&format!(
                "  FOREIGN KEY ({}) references {}({})\n",
                fk.local_columns.join(", "),
                fk.referenced_table,
                fk.referenced_columns.join(", ")
            ));
        }
    }
    out
}

/// Deterministic text rendering of the whole schema, one block per table in
/// catalog order. Pure function of (schema, style).
pub fn render_schema_context(schema: &SchemaModel, style: RenderStyle) -> String {
    let mut out = format!("DATABASE {}\n", schema.database_name);
    for table in &schema.tables {
        out.push('\n');
        out.push_str(&render_table_block(table, style));
    }
    out
}

/// Process-wide schema cache keyed by database name.
///
/// Introspection is single-flight: concurrent callers for the same key block
/// on one catalog scan. There is no TTL; call [`SchemaCache::invalidate`]
/// after known DDL.
#[derive(Default)]
pub struct SchemaCache {
    entries: Mutex<HashMap<String, Arc<OnceCell<Arc<SchemaModel>>>>>,
}

impl SchemaCache {
    pub fn new() -> SchemaCache {
        SchemaCache::default()
    }

    pub fn get_or_introspect(&self, db: &Db) -> Result<Arc<SchemaModel>, CatalogError> {
        let cell = {
            let mut entries = self.entries.lock().expect("cache mutex");
            entries
                .entry(db.database_name())
                .or_insert_with(|| Arc::new(OnceCell::new()))
                .clone()
        };
        // lock released; the cell serializes the actual scan
        cell.get_or_try_init(|| introspect(db).map(Arc::new))
            .cloned()
    }

    pub fn invalidate(&self, database_name: &str) {
        self.entries
            .lock()
            .expect("cache mutex")
            .remove(database_name);
    }
}
