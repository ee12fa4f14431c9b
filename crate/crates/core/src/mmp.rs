//! The multimodal pipeline: discover asset columns, assemble a maximally
//! filtered candidate query, reason over each candidate's linked assets,
//! decide, and synthesize the final answer.
//!
//! The expensive per-record model calls only ever run against rows that
//! already passed every structured filter, so cost scales with the
//! candidate set, not the table.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Modality, SchemaModel};
use crate::db::{CellValue, Db, DbError, Dialect};
use crate::decision::{DecisionLabel, Decider};
use crate::modelgate::{GatewayError, MediaKind, ModelGateway};
use crate::prompt;
use crate::sile::{self, NLQuery, PrunedSchema, QueryPlan};
use crate::sqp::{self, PipelineError, ResultSet, SanitizedSql, Stage};

/// A column holding references to external assets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultimodalColumn {
    pub table: String,
    pub column: String,
    pub kind: Modality,
}

/// All asset columns discovered in the pruned schema.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MultimodalColumnSet {
    pub entries: Vec<MultimodalColumn>,
}

impl MultimodalColumnSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    // the result column may arrive bare or qualified as table.column
    fn kind_of(&self, result_column: &str) -> Option<Modality> {
        self.entries.iter().find_map(|e| {
            let qualified = format!("{}.{}", e.table, e.column);
            if result_column == qualified || result_column == e.column {
                Some(e.kind)
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentRole {
    Where,
    Join,
    NotNull,
}

/// One composable piece of the candidate query. Empty text means the
/// fragment contributes nothing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SqlFragment {
    pub role: FragmentRole,
    pub text: String,
}

impl SqlFragment {
    pub fn empty(role: FragmentRole) -> SqlFragment {
        SqlFragment {
            role,
            text: String::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// One row that passed the structured filters, with its key and the asset
/// references pulled from its multimodal columns.
#[derive(Debug, Clone)]
pub struct CandidateRecord {
    pub columns: Vec<String>,
    pub values: Vec<CellValue>,
    pub primary_key: Vec<CellValue>,
    /// result column name -> asset reference
    pub asset_refs: Vec<(String, String)>,
}

/// Model-produced evidence for one record.
#[derive(Debug, Clone)]
pub struct Rationale {
    pub text: String,
    pub record_key: Vec<CellValue>,
}

pub type AcceptedKeySet = BTreeSet<Vec<CellValue>>;

#[derive(Debug, Error)]
pub enum MmpError {
    #[error("record has no resolvable assets")]
    NoAssets,
    #[error("model produced an empty rationale")]
    EmptyRationale,
    #[error("filter fragment rejected: {0}")]
    BadFragment(String),
    #[error("no foreign-key path joins `{from}` to `{to}`")]
    NoJoinPath { from: String, to: String },
    #[error("table `{table}` has no primary key to identify candidates by")]
    MissingPrimaryKey { table: String },
    #[error("column `{column}` missing from candidate result")]
    MissingColumn { column: String },
    #[error(transparent)]
    Sanitize(#[from] sqp::SanitizeError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

// discovery -------------------------------------------------------------

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "gif", "webp", "bmp", "svg"];
const DOCUMENT_EXTENSIONS: &[&str] = &["pdf", "txt", "md", "doc", "docx", "rtf", "html", "htm"];

#[derive(Debug, Clone)]
pub struct DiscoverOptions {
    /// lowercase substrings a column name must contain to be considered
    pub patterns: Vec<String>,
    pub sample_limit: usize,
}

impl Default for DiscoverOptions {
    fn default() -> Self {
        DiscoverOptions {
            patterns: ["image", "img", "photo", "url", "doc", "path"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            sample_limit: 20,
        }
    }
}

fn extension_kind(value: &str) -> Option<Modality> {
    // strip URL query strings and fragments before looking at the suffix
    let clean = value.split(['?', '#']).next().unwrap_or(value);
    let ext = clean.rsplit('.').next()?;
    if ext.len() > 5 || ext.is_empty() || !ext.chars().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    let ext = ext.to_ascii_lowercase();
    if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
        Some(Modality::ImageUrl)
    } else if DOCUMENT_EXTENSIONS.contains(&ext.as_str()) {
        Some(Modality::DocumentPath)
    } else {
        None
    }
}

/// Tag asset columns in the pruned schema. A column qualifies only when
/// its name matches the pattern list AND every sampled non-null value
/// carries a recognized file extension of a single kind; either signal
/// alone is not enough.
pub fn discover_multimodal_columns(
    pruned: &PrunedSchema,
    db: &Db,
) -> Result<MultimodalColumnSet, MmpError> {
    discover_with(pruned, db, &DiscoverOptions::default())
}

pub fn discover_with(
    pruned: &PrunedSchema,
    db: &Db,
    options: &DiscoverOptions,
) -> Result<MultimodalColumnSet, MmpError> {
    let dialect = db.dialect();
    let mut entries = Vec::new();
    for table in &pruned.model.tables {
        for column in &table.columns {
            let lowered = column.name.to_lowercase();
            if !options.patterns.iter().any(|p| lowered.contains(p.as_str())) {
                continue;
            }
            let sample_sql = format!(
                "SELECT {col} FROM {tbl} WHERE {col} IS NOT NULL LIMIT {n}",
                col = dialect.quote_ident(&column.name),
                tbl = dialect.quote_ident(&table.name),
                n = options.sample_limit,
            );
            let sample = db.query(&sample_sql, Duration::from_secs(30))?;
            if sample.rows.is_empty() {
                continue;
            }
            let mut kinds = sample.rows.iter().map(|row| match &row[0] {
                CellValue::Text(text) => extension_kind(text),
                _ => None,
            });
            let first = match kinds.next().flatten() {
                Some(kind) => kind,
                None => continue,
            };
            if kinds.all(|k| k.as_ref() == Some(&first)) {
                entries.push(MultimodalColumn {
                    table: table.name.clone(),
                    column: column.name.clone(),
                    kind: first,
                });
            }
        }
    }
    Ok(MultimodalColumnSet { entries })
}

// fragments -------------------------------------------------------------

/// One completion extracting only the structured constraints of the
/// question; anything needing eyes on the asset stays out of the filter.
pub fn build_where_clause(
    query: &NLQuery,
    pruned: &PrunedSchema,
    dialect: Dialect,
    gateway: &ModelGateway,
) -> Result<SqlFragment, MmpError> {
    let rendered = crate::catalog::render_schema_context(&pruned.model, crate::catalog::RenderStyle::Full);
    let request = prompt::WHERE.request(
        gateway.model_id(),
        &[
            ("schema", &rendered),
            ("base_table", &pruned.base_table),
            ("question", &query.text),
        ],
    );
    let first = gateway.complete(&request)?.text;
    let problem = match interpret_where(&first, &pruned.base_table, dialect) {
        Ok(fragment) => return Ok(fragment),
        Err(problem) => problem,
    };

    let repair = prompt::WHERE_REPAIR.request(
        gateway.model_id(),
        &[
            ("schema", &rendered),
            ("base_table", &pruned.base_table),
            ("question", &query.text),
            ("previous", &first),
            ("error", &problem),
        ],
    );
    let second = gateway.complete(&repair)?.text;
    interpret_where(&second, &pruned.base_table, dialect).map_err(MmpError::BadFragment)
}

fn interpret_where(raw: &str, base_table: &str, dialect: Dialect) -> Result<SqlFragment, String> {
    let (_, content) = prompt::extract_fenced(raw, "where")
        .ok_or_else(|| "no fenced where block in output".to_string())?;
    let text = content.trim();
    if text.is_empty() || text.eq_ignore_ascii_case("none") {
        return Ok(SqlFragment::empty(FragmentRole::Where));
    }
    let probe = format!("SELECT * FROM {base_table} WHERE {text}");
    crate::sqlast::parse_one(dialect, &probe)
        .map_err(|e| format!("fragment does not parse as a boolean filter: {e}"))?;
    Ok(SqlFragment {
        role: FragmentRole::Where,
        text: text.to_string(),
    })
}

/// Deterministic join chain from the base table through every planned
/// join table, following foreign-key edges retained in the pruned schema.
pub fn build_join_clause(pruned: &PrunedSchema) -> Result<SqlFragment, MmpError> {
    if pruned.join_tables.is_empty() {
        return Ok(SqlFragment::empty(FragmentRole::Join));
    }

    // undirected FK adjacency: table -> sorted (neighbor, on-pairs)
    type Adjacency<'a> = std::collections::BTreeMap<&'a str, Vec<(&'a str, Vec<(String, String)>)>>;
    let mut edges: Adjacency = std::collections::BTreeMap::new();
    for table in &pruned.model.tables {
        for fk in &table.foreign_keys {
            let pairs: Vec<(String, String)> = fk
                .local_columns
                .iter()
                .zip(&fk.referenced_columns)
                .map(|(l, r)| (l.clone(), r.clone()))
                .collect();
            let reversed: Vec<(String, String)> =
                pairs.iter().map(|(l, r)| (r.clone(), l.clone())).collect();
            edges
                .entry(table.name.as_str())
                .or_default()
                .push((fk.referenced_table.as_str(), pairs));
            edges
                .entry(fk.referenced_table.as_str())
                .or_default()
                .push((table.name.as_str(), reversed));
        }
    }
    for neighbors in edges.values_mut() {
        neighbors.sort_by(|a, b| a.0.cmp(b.0));
    }

    let mut joined: BTreeSet<&str> = BTreeSet::new();
    joined.insert(pruned.base_table.as_str());
    let mut queue: Vec<&str> = vec![pruned.base_table.as_str()];
    let mut clauses: Vec<String> = Vec::new();
    while let Some(current) = queue.pop() {
        let Some(neighbors) = edges.get(current) else {
            continue;
        };
        for (neighbor, pairs) in neighbors {
            if joined.contains(neighbor) {
                continue;
            }
            joined.insert(neighbor);
            queue.insert(0, neighbor);
            let on = pairs
                .iter()
                .map(|(local, remote)| format!("{current}.{local} = {neighbor}.{remote}"))
                .collect::<Vec<_>>()
                .join(" AND ");
            clauses.push(format!("INNER JOIN {neighbor} ON {on}"));
        }
    }

    if let Some(missing) = pruned
        .join_tables
        .iter()
        .find(|t| !joined.contains(t.as_str()))
    {
        return Err(MmpError::NoJoinPath {
            from: pruned.base_table.clone(),
            to: missing.clone(),
        });
    }
    Ok(SqlFragment {
        role: FragmentRole::Join,
        text: clauses.join(" "),
    })
}

/// `col IS NOT NULL` over every discovered asset column, in (table,
/// column) order. Records with missing assets never become candidates.
pub fn build_not_null_clause(cmulti: &MultimodalColumnSet) -> SqlFragment {
    let mut entries: Vec<&MultimodalColumn> = cmulti.entries.iter().collect();
    entries.sort_by(|a, b| (&a.table, &a.column).cmp(&(&b.table, &b.column)));
    let text = entries
        .iter()
        .map(|e| format!("{}.{} IS NOT NULL", e.table, e.column))
        .collect::<Vec<_>>()
        .join(" AND ");
    SqlFragment {
        role: FragmentRole::NotNull,
        text,
    }
}

/// Compose the candidate query and pass it through the read-only
/// guardrail. Boolean fragments are parenthesized before conjunction so
/// OR-bearing filters keep their meaning.
pub fn assemble_sql(
    projection: &str,
    join: &SqlFragment,
    where_clause: &SqlFragment,
    not_null: &SqlFragment,
    base_table: &str,
    dialect: Dialect,
) -> Result<SanitizedSql, MmpError> {
    let mut sql = format!("SELECT {projection} FROM {base_table}");
    if !join.is_empty() {
        sql.push(' ');
        sql.push_str(&join.text);
    }
    let conditions: Vec<String> = [where_clause, not_null]
        .iter()
        .filter(|f| !f.is_empty())
        .map(|f| format!("({})", f.text))
        .collect();
    if !conditions.is_empty() {
        sql.push_str(" WHERE ");
        sql.push_str(&conditions.join(" AND "));
    }
    Ok(sqp::sanitize(&sql, dialect)?)
}

// per-record reasoning ---------------------------------------------------

fn render_record(record: &CandidateRecord) -> String {
    record
        .columns
        .iter()
        .zip(&record.values)
        .map(|(col, val)| {
            let shown = match val {
                CellValue::Text(s) => s.clone(),
                other => other.to_sql_literal(),
            };
            format!("{col}: {shown}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One multimodal completion: the question, the record's structured
/// values, and every linked asset as a content part.
pub fn generate_rationale(
    query: &NLQuery,
    record: &CandidateRecord,
    cmulti: &MultimodalColumnSet,
    gateway: &ModelGateway,
) -> Result<Rationale, MmpError> {
    if record.asset_refs.is_empty() {
        return Err(MmpError::NoAssets);
    }
    let rendered = render_record(record);
    let mut request = prompt::RATIONALE.request(
        gateway.model_id(),
        &[("question", &query.text), ("record", &rendered)],
    );
    for (column, reference) in &record.asset_refs {
        let kind = match cmulti.kind_of(column) {
            Some(Modality::DocumentPath) => MediaKind::Document,
            // image by default: an unmapped asset column can only have
            // come from a caller-built record
            _ => MediaKind::Image,
        };
        request = request.with_asset(reference.clone(), kind);
    }
    let response = gateway.complete(&request)?;
    if response.text.trim().is_empty() {
        return Err(MmpError::EmptyRationale);
    }
    Ok(Rationale {
        text: response.text,
        record_key: record.primary_key.clone(),
    })
}

// end to end -------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct MmpOptions {
    pub timeout: Option<Duration>,
    pub discover: DiscoverOptions,
    /// permutes record-processing order; the outcome must not depend on it
    pub shuffle_seed: Option<u64>,
}

/// Fate of one candidate record.
#[derive(Debug, Clone, Serialize)]
pub struct RecordReport {
    pub index: usize,
    pub key: Vec<CellValue>,
    pub label: Option<DecisionLabel>,
    pub rationale_digest: Option<String>,
    pub skipped: Option<String>,
}

/// Full provenance for one pipeline run. Content is deterministic for a
/// given transcript: no clocks, no iteration-order artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct MmpReport {
    pub question: String,
    pub plan: QueryPlan,
    pub pruned_tables: Vec<String>,
    pub multimodal_columns: Vec<MultimodalColumn>,
    pub where_clause: String,
    pub join_clause: String,
    pub not_null_clause: String,
    pub assembled_sql: String,
    pub candidate_count: usize,
    pub records: Vec<RecordReport>,
    pub accepted_keys: Vec<Vec<CellValue>>,
    pub recommended_keys: Vec<Vec<CellValue>>,
    pub final_sql: Option<String>,
    pub final_row_count: usize,
    pub rationale_calls: usize,
    pub decision_calls: usize,
    pub skipped_count: usize,
}

#[derive(Debug)]
pub struct MmpOutcome {
    pub rows: ResultSet,
    pub report: MmpReport,
}

pub fn run(
    query: &NLQuery,
    schema: &SchemaModel,
    db: &Db,
    gateway: &ModelGateway,
    decider: &dyn Decider,
) -> Result<MmpOutcome, PipelineError> {
    run_with(query, schema, db, gateway, decider, &MmpOptions::default())
}

struct RecordOutcome {
    label: Option<DecisionLabel>,
    rationale_digest: Option<String>,
    skipped: Option<String>,
}

pub fn run_with(
    query: &NLQuery,
    schema: &SchemaModel,
    db: &Db,
    gateway: &ModelGateway,
    decider: &dyn Decider,
    options: &MmpOptions,
) -> Result<MmpOutcome, PipelineError> {
    let timeout = options.timeout.unwrap_or(sqp::DEFAULT_QUERY_TIMEOUT);
    let dialect = db.dialect();

    // phase 1: structured narrowing, sequential
    let plan = sile::plan(query, schema, gateway).map_err(|e| PipelineError::new(Stage::Plan, e))?;
    let pruned =
        sile::prune_schema(schema, &plan).map_err(|e| PipelineError::new(Stage::Prune, e))?;
    let cmulti = discover_with(&pruned, db, &options.discover)
        .map_err(|e| PipelineError::new(Stage::Discover, e))?;
    let where_clause = build_where_clause(query, &pruned, dialect, gateway)
        .map_err(|e| PipelineError::new(Stage::Fragments, e))?;
    let join_clause =
        build_join_clause(&pruned).map_err(|e| PipelineError::new(Stage::Fragments, e))?;
    let not_null = build_not_null_clause(&cmulti);

    let projection = candidate_projection(&pruned, dialect);
    let assembled = assemble_sql(
        &projection,
        &join_clause,
        &where_clause,
        &not_null,
        &pruned.base_table,
        dialect,
    )
    .map_err(|e| PipelineError::new(Stage::Assemble, e))?;

    let rows = sqp::execute(&assembled, db, timeout)
        .map_err(|e| PipelineError::new(Stage::Candidates, e))?;
    let records = build_candidates(&rows, &pruned, &cmulti, schema)
        .map_err(|e| PipelineError::new(Stage::Candidates, e))?;

    // phase 2: per-record reasoning, fanned out; the gateway's permit
    // limit bounds real concurrency
    let rationale_calls = AtomicUsize::new(0);
    let decision_calls = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Option<RecordOutcome>>> =
        Mutex::new((0..records.len()).map(|_| None).collect());

    let mut order: Vec<usize> = (0..records.len()).collect();
    if let Some(seed) = options.shuffle_seed {
        shuffle(&mut order, seed);
    }

    std::thread::scope(|scope| {
        for &index in &order {
            let record = &records[index];
            let outcomes = &outcomes;
            let rationale_calls = &rationale_calls;
            let decision_calls = &decision_calls;
            let cmulti = &cmulti;
            scope.spawn(move || {
                let outcome = process_record(
                    query,
                    record,
                    cmulti,
                    gateway,
                    decider,
                    rationale_calls,
                    decision_calls,
                );
                outcomes.lock().unwrap()[index] = Some(outcome);
            });
        }
    });

    let outcomes = outcomes.into_inner().unwrap();
    let mut record_reports = Vec::with_capacity(records.len());
    let mut accepted: AcceptedKeySet = BTreeSet::new();
    let mut recommended: AcceptedKeySet = BTreeSet::new();
    for (index, (record, outcome)) in records.iter().zip(outcomes).enumerate() {
        let outcome = outcome.expect("record worker completed");
        match outcome.label {
            Some(DecisionLabel::Accept) => {
                accepted.insert(record.primary_key.clone());
            }
            Some(DecisionLabel::Recommend) => {
                recommended.insert(record.primary_key.clone());
            }
            _ => {}
        }
        record_reports.push(RecordReport {
            index,
            key: record.primary_key.clone(),
            label: outcome.label,
            rationale_digest: outcome.rationale_digest,
            skipped: outcome.skipped,
        });
    }

    // synthesis: fetch exactly the accepted records; an empty set issues
    // no query at all
    let (final_rows, final_sql) = if accepted.is_empty() {
        (ResultSet::empty(), None)
    } else {
        let base = schema
            .table(&pruned.base_table)
            .expect("base table validated by prune");
        let sql = synthesis_sql(&pruned.base_table, &base.primary_key, &accepted, dialect);
        let sanitized =
            sqp::sanitize(&sql, dialect).map_err(|e| PipelineError::new(Stage::Synthesize, e))?;
        let rows = sqp::execute(&sanitized, db, timeout)
            .map_err(|e| PipelineError::new(Stage::Synthesize, e))?;
        (rows, Some(sanitized.text))
    };

    let skipped_count = record_reports.iter().filter(|r| r.skipped.is_some()).count();
    let report = MmpReport {
        question: query.text.clone(),
        pruned_tables: pruned.table_names().iter().map(|s| s.to_string()).collect(),
        plan,
        multimodal_columns: cmulti.entries.clone(),
        where_clause: where_clause.text,
        join_clause: join_clause.text,
        not_null_clause: not_null.text,
        assembled_sql: assembled.text,
        candidate_count: records.len(),
        records: record_reports,
        accepted_keys: accepted.into_iter().collect(),
        recommended_keys: recommended.into_iter().collect(),
        final_sql,
        final_row_count: final_rows.len(),
        rationale_calls: rationale_calls.into_inner(),
        decision_calls: decision_calls.into_inner(),
        skipped_count,
    };
    Ok(MmpOutcome {
        rows: final_rows,
        report,
    })
}

fn process_record(
    query: &NLQuery,
    record: &CandidateRecord,
    cmulti: &MultimodalColumnSet,
    gateway: &ModelGateway,
    decider: &dyn Decider,
    rationale_calls: &AtomicUsize,
    decision_calls: &AtomicUsize,
) -> RecordOutcome {
    if record.asset_refs.is_empty() {
        return RecordOutcome {
            label: None,
            rationale_digest: None,
            skipped: Some("no linked assets".to_string()),
        };
    }
    rationale_calls.fetch_add(1, Ordering::SeqCst);
    let rationale = match generate_rationale(query, record, cmulti, gateway) {
        Ok(r) => r,
        Err(e) => {
            return RecordOutcome {
                label: None,
                rationale_digest: None,
                skipped: Some(format!("rationale failed: {e}")),
            };
        }
    };
    let digest = hex::encode(Sha256::digest(rationale.text.as_bytes()));
    decision_calls.fetch_add(1, Ordering::SeqCst);
    match decider.decide(&query.text, &rationale.text) {
        Ok(label) => RecordOutcome {
            label: Some(label),
            rationale_digest: Some(digest),
            skipped: None,
        },
        Err(e) => RecordOutcome {
            label: None,
            rationale_digest: Some(digest),
            skipped: Some(format!("decision failed: {e}")),
        },
    }
}

// joins make bare column names ambiguous, so project every column
// qualified and alias it back to a stable table.column label
fn candidate_projection(pruned: &PrunedSchema, dialect: Dialect) -> String {
    if pruned.join_tables.is_empty() {
        return "*".to_string();
    }
    let mut items = Vec::new();
    for table in &pruned.model.tables {
        for column in &table.columns {
            items.push(format!(
                "{t}.{c} AS {alias}",
                t = table.name,
                c = column.name,
                alias = dialect.quote_ident(&format!("{}.{}", table.name, column.name)),
            ));
        }
    }
    items.join(", ")
}

fn build_candidates(
    rows: &ResultSet,
    pruned: &PrunedSchema,
    cmulti: &MultimodalColumnSet,
    schema: &SchemaModel,
) -> Result<Vec<CandidateRecord>, MmpError> {
    let base = schema
        .table(&pruned.base_table)
        .expect("base table validated by prune");
    if base.primary_key.is_empty() {
        return Err(MmpError::MissingPrimaryKey {
            table: base.name.clone(),
        });
    }
    let qualified = !pruned.join_tables.is_empty();
    let pk_indices: Vec<usize> = base
        .primary_key
        .iter()
        .map(|pk| {
            let wanted = if qualified {
                format!("{}.{}", base.name, pk)
            } else {
                pk.clone()
            };
            rows.columns
                .iter()
                .position(|c| c == &wanted)
                .ok_or(MmpError::MissingColumn { column: wanted })
        })
        .collect::<Result<_, _>>()?;
    let asset_indices: Vec<(usize, &str)> = cmulti
        .entries
        .iter()
        .filter_map(|entry| {
            let wanted = if qualified {
                format!("{}.{}", entry.table, entry.column)
            } else {
                entry.column.clone()
            };
            rows.columns
                .iter()
                .position(|c| c == &wanted)
                .map(|i| (i, rows.columns[i].as_str()))
        })
        .collect();

    Ok(rows
        .rows
        .iter()
        .map(|row| {
            let asset_refs = asset_indices
                .iter()
                .filter_map(|(i, name)| match &row[*i] {
                    CellValue::Text(s) => Some((name.to_string(), s.clone())),
                    _ => None,
                })
                .collect();
            CandidateRecord {
                columns: rows.columns.clone(),
                values: row.clone(),
                primary_key: pk_indices.iter().map(|i| row[*i].clone()).collect(),
                asset_refs,
            }
        })
        .collect())
}

fn synthesis_sql(
    base_table: &str,
    pk_columns: &[String],
    accepted: &AcceptedKeySet,
    dialect: Dialect,
) -> String {
    if pk_columns.len() == 1 {
        let values = accepted
            .iter()
            .map(|key| key[0].to_sql_literal())
            .collect::<Vec<_>>()
            .join(", ");
        return format!(
            "SELECT * FROM {base_table} WHERE {base_table}.{pk} IN ({values})",
            pk = pk_columns[0]
        );
    }
    if dialect.supports_row_value_in() {
        let columns = pk_columns
            .iter()
            .map(|c| format!("{base_table}.{c}"))
            .collect::<Vec<_>>()
            .join(", ");
        let tuples = accepted
            .iter()
            .map(|key| {
                let vals = key
                    .iter()
                    .map(|v| v.to_sql_literal())
                    .collect::<Vec<_>>()
                    .join(", ");
                format!("({vals})")
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("SELECT * FROM {base_table} WHERE ({columns}) IN ({tuples})")
    } else {
        let disjuncts = accepted
            .iter()
            .map(|key| {
                let conj = pk_columns
                    .iter()
                    .zip(key)
                    .map(|(c, v)| format!("{base_table}.{c} = {}", v.to_sql_literal()))
                    .collect::<Vec<_>>()
                    .join(" AND ");
                format!("({conj})")
            })
            .collect::<Vec<_>>()
            .join(" OR ");
        format!("SELECT * FROM {base_table} WHERE {disjuncts}")
    }
}

// fisher-yates with a fixed-seed generator; avoids depending on slice
// extension traits that move between rand releases
fn shuffle(order: &mut [usize], seed: u64) {
    use rand::RngExt;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::introspect;
    use crate::decision::DecisionError;
    use crate::modelgate::{AssetResolver, Backend, ModelResponse, ResolvedRequest};
    use std::sync::Arc;

    fn products_db() -> Db {
        let db = Db::open_in_memory().unwrap();
        db.with_conn(|conn| {
            conn.execute_batch(
                "CREATE TABLE products (
                     product_id INTEGER PRIMARY KEY,
                     name TEXT NOT NULL,
                     price REAL,
                     bio_text TEXT,
                     image_url TEXT
                 );
                 INSERT INTO products VALUES
                     (1, 'kettle', 35.0, 'a fine kettle', 'kettle.jpg'),
                     (2, 'teapot', 22.5, 'classic teapot', 'teapot.jpg'),
                     (3, 'mug', 8.0, 'sturdy mug', 'mug.jpg'),
                     (4, 'tray', 14.0, 'wooden tray', NULL);",
            )
        })
        .unwrap();
        db
    }

    fn pruned_products(db: &Db) -> PrunedSchema {
        let schema = introspect(db).unwrap();
        sile::prune_schema(&schema, &QueryPlan::manual("products", &[])).unwrap()
    }

    #[test]
    fn discovery_tags_image_columns_and_skips_prose() {
        let db = products_db();
        let pruned = pruned_products(&db);
        let cmulti = discover_multimodal_columns(&pruned, &db).unwrap();
        assert_eq!(
            cmulti.entries,
            vec![MultimodalColumn {
                table: "products".to_string(),
                column: "image_url".to_string(),
                kind: Modality::ImageUrl,
            }]
        );
    }

    #[test]
    fn discovery_requires_both_name_and_value_signals() {
        let db = Db::open_in_memory().unwrap();
        db.with_conn(|conn| {
            conn.execute_batch(
                "CREATE TABLE posts (
                     post_id INTEGER PRIMARY KEY,
                     profile_url TEXT,   -- name matches, values are prose
                     thumbnail TEXT      -- values match, name does not
                 );
                 INSERT INTO posts VALUES
                     (1, 'see my profile for details', 'a.png'),
                     (2, 'another prose value', 'b.png');",
            )
        })
        .unwrap();
        let schema = introspect(&db).unwrap();
        let pruned = sile::prune_schema(&schema, &QueryPlan::manual("posts", &[])).unwrap();

        let cmulti = discover_multimodal_columns(&pruned, &db).unwrap();
        assert!(cmulti.is_empty(), "{:?}", cmulti.entries);

        // extending the pattern list supplies the missing name signal
        let mut options = DiscoverOptions::default();
        options.patterns.push("thumb".to_string());
        let cmulti = discover_with(&pruned, &db, &options).unwrap();
        assert_eq!(cmulti.entries.len(), 1);
        assert_eq!(cmulti.entries[0].column, "thumbnail");
    }

    #[test]
    fn discovery_classifies_documents_by_extension() {
        let db = Db::open_in_memory().unwrap();
        db.with_conn(|conn| {
            conn.execute_batch(
                "CREATE TABLE claims (
                     claim_id INTEGER PRIMARY KEY,
                     report_doc TEXT
                 );
                 INSERT INTO claims VALUES (1, 'claims/1.pdf'), (2, 'claims/2.pdf');",
            )
        })
        .unwrap();
        let schema = introspect(&db).unwrap();
        let pruned = sile::prune_schema(&schema, &QueryPlan::manual("claims", &[])).unwrap();
        let cmulti = discover_multimodal_columns(&pruned, &db).unwrap();
        assert_eq!(cmulti.entries[0].kind, Modality::DocumentPath);
    }

    #[test]
    fn not_null_clause_is_a_deterministic_conjunction() {
        assert!(build_not_null_clause(&MultimodalColumnSet::default()).is_empty());

        let one = MultimodalColumnSet {
            entries: vec![MultimodalColumn {
                table: "t".into(),
                column: "image_url".into(),
                kind: Modality::ImageUrl,
            }],
        };
        assert_eq!(build_not_null_clause(&one).text, "t.image_url IS NOT NULL");

        let two = MultimodalColumnSet {
            entries: vec![
                MultimodalColumn {
                    table: "z".into(),
                    column: "doc_path".into(),
                    kind: Modality::DocumentPath,
                },
                MultimodalColumn {
                    table: "a".into(),
                    column: "img".into(),
                    kind: Modality::ImageUrl,
                },
            ],
        };
        assert_eq!(
            build_not_null_clause(&two).text,
            "a.img IS NOT NULL AND z.doc_path IS NOT NULL"
        );
    }

    fn shop_db() -> Db {
        let db = Db::open_in_memory().unwrap();
        db.with_conn(|conn| {
            conn.execute_batch(
                "CREATE TABLE categories (
                     category_id INTEGER PRIMARY KEY,
                     label TEXT
                 );
                 CREATE TABLE products (
                     product_id INTEGER PRIMARY KEY,
                     category_id INTEGER REFERENCES categories(category_id),
                     name TEXT,
                     price REAL,
                     image_url TEXT
                 );
                 CREATE TABLE reviews (
                     review_id INTEGER PRIMARY KEY,
                     product_id INTEGER REFERENCES products(product_id),
                     stars INTEGER
                 );
                 INSERT INTO categories VALUES (1, 'kitchen'), (2, 'office');
                 INSERT INTO products VALUES
                     (10, 1, 'kettle', 35.0, 'kettle.jpg'),
                     (11, 1, 'teapot', 22.5, 'teapot.jpg'),
                     (12, 2, 'stapler', 9.0, 'stapler.jpg');
                 INSERT INTO reviews VALUES (100, 10, 5), (101, 11, 3);",
            )
        })
        .unwrap();
        db
    }

    #[test]
    fn join_clause_walks_fk_edges_in_dependency_order() {
        let db = shop_db();
        let schema = introspect(&db).unwrap();

        let none = sile::prune_schema(&schema, &QueryPlan::manual("products", &[])).unwrap();
        assert!(build_join_clause(&none).unwrap().is_empty());

        let direct =
            sile::prune_schema(&schema, &QueryPlan::manual("products", &["categories"])).unwrap();
        assert_eq!(
            build_join_clause(&direct).unwrap().text,
            "INNER JOIN categories ON products.category_id = categories.category_id"
        );

        let chain = sile::prune_schema(
            &schema,
            &QueryPlan::manual("reviews", &["products", "categories"]),
        )
        .unwrap();
        let text = build_join_clause(&chain).unwrap().text;
        let products_at = text.find("INNER JOIN products").unwrap();
        let categories_at = text.find("INNER JOIN categories").unwrap();
        assert!(products_at < categories_at, "{text}");
        assert!(text.contains("reviews.product_id = products.product_id"));
        assert!(text.contains("products.category_id = categories.category_id"));
    }

    #[test]
    fn join_clause_reports_the_disconnected_pair() {
        let db = Db::open_in_memory().unwrap();
        db.with_conn(|conn| {
            conn.execute_batch(
                "CREATE TABLE island_a (id INTEGER PRIMARY KEY);
                 CREATE TABLE island_b (id INTEGER PRIMARY KEY);",
            )
        })
        .unwrap();
        let schema = introspect(&db).unwrap();
        let pruned =
            sile::prune_schema(&schema, &QueryPlan::manual("island_a", &["island_b"])).unwrap();
        match build_join_clause(&pruned) {
            Err(MmpError::NoJoinPath { from, to }) => {
                assert_eq!(from, "island_a");
                assert_eq!(to, "island_b");
            }
            other => panic!("expected NoJoinPath, got {other:?}"),
        }
    }

    // a backend that routes by prompt content, so concurrent phase-2
    // calls each get the right canned answer
    struct Router {
        route: Box<dyn Fn(&str) -> String + Send + Sync>,
    }

    impl Backend for Router {
        fn complete(&self, request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
            Ok(ModelResponse {
                text: (self.route)(&request.joined_text()),
                usage: None,
                backend_id: self.id(),
            })
        }
        fn id(&self) -> String {
            "router".to_string()
        }
    }

    fn script_gateway(route: impl Fn(&str) -> String + Send + Sync + 'static) -> ModelGateway {
        ModelGateway::live(
            Box::new(Router {
                route: Box::new(route),
            }),
            AssetResolver::default(),
        )
    }

    #[test]
    fn where_clause_keeps_structure_and_drops_visual_constraints() {
        let db = products_db();
        let pruned = pruned_products(&db);
        let gw = script_gateway(|_| {
            "The price bound is structured; the lid color needs the image.\n```where\nprice < 50\n```"
                .to_string()
        });
        let fragment = build_where_clause(
            &NLQuery::new("products under $50 with a green lid").unwrap(),
            &pruned,
            Dialect::Sqlite,
            &gw,
        )
        .unwrap();
        assert_eq!(fragment.text, "price < 50");
        assert!(!fragment.text.contains("green"));
    }

    #[test]
    fn purely_visual_questions_yield_an_empty_where() {
        let db = products_db();
        let pruned = pruned_products(&db);
        let gw = script_gateway(|_| "```where\nnone\n```".to_string());
        let fragment = build_where_clause(
            &NLQuery::new("products with a green lid").unwrap(),
            &pruned,
            Dialect::Sqlite,
            &gw,
        )
        .unwrap();
        assert!(fragment.is_empty());
    }

    #[test]
    fn where_clause_gets_one_repair_round_trip() {
        let db = products_db();
        let pruned = pruned_products(&db);
        let calls = Arc::new(AtomicUsize::new(0));
        let calls_in = calls.clone();
        let gw = script_gateway(move |prompt| {
            if calls_in.fetch_add(1, Ordering::SeqCst) == 0 {
                assert!(!prompt.contains("previous attempt"));
                "```where\nprice <<< 50\n```".to_string()
            } else {
                "```where\nprice < 50\n```".to_string()
            }
        });
        let fragment = build_where_clause(
            &NLQuery::new("cheap products").unwrap(),
            &pruned,
            Dialect::Sqlite,
            &gw,
        )
        .unwrap();
        assert_eq!(fragment.text, "price < 50");
        assert_eq!(calls.load(Ordering::SeqCst), 2);

        let gw = script_gateway(|_| "no fence at all".to_string());
        let err = build_where_clause(
            &NLQuery::new("cheap products").unwrap(),
            &pruned,
            Dialect::Sqlite,
            &gw,
        )
        .unwrap_err();
        assert!(matches!(err, MmpError::BadFragment(_)));
    }

    #[test]
    fn assembly_composes_fragments_and_passes_the_guardrail() {
        let empty_where = SqlFragment::empty(FragmentRole::Where);
        let empty_join = SqlFragment::empty(FragmentRole::Join);
        let empty_nn = SqlFragment::empty(FragmentRole::NotNull);
        let bare = assemble_sql(
            "*",
            &empty_join,
            &empty_where,
            &empty_nn,
            "products",
            Dialect::Sqlite,
        )
        .unwrap();
        assert_eq!(bare.text, "SELECT * FROM products");

        let where_frag = SqlFragment {
            role: FragmentRole::Where,
            text: "name = 'tray' OR name = 'mug'".to_string(),
        };
        let nn_frag = SqlFragment {
            role: FragmentRole::NotNull,
            text: "products.image_url IS NOT NULL".to_string(),
        };
        let full = assemble_sql(
            "*",
            &empty_join,
            &where_frag,
            &nn_frag,
            "products",
            Dialect::Sqlite,
        )
        .unwrap();
        // the OR must stay grouped when conjoined with the not-null
        // filter; ungrouped, the null-image tray would leak through
        assert!(
            full.text.contains("(name = 'tray' OR name = 'mug') AND"),
            "{}",
            full.text
        );

        let db = products_db();
        let rows = sqp::execute(&full, &db, Duration::from_secs(5)).unwrap();
        assert_eq!(rows.len(), 1, "only the mug has an image");
    }

    fn asset_dir(names: &[&str]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for name in names {
            std::fs::write(dir.path().join(name), b"not really a jpeg").unwrap();
        }
        dir
    }

    fn sample_record(name: &str, image: &str) -> CandidateRecord {
        CandidateRecord {
            columns: vec!["product_id".into(), "name".into(), "image_url".into()],
            values: vec![
                CellValue::Int(1),
                CellValue::Text(name.to_string()),
                CellValue::Text(image.to_string()),
            ],
            primary_key: vec![CellValue::Int(1)],
            asset_refs: vec![("image_url".to_string(), image.to_string())],
        }
    }

    #[test]
    fn rationale_requests_carry_record_values_and_assets() {
        let dir = asset_dir(&["kettle.jpg", "manual.pdf"]);
        let seen: Arc<Mutex<Vec<ResolvedRequest>>> = Arc::new(Mutex::new(Vec::new()));
        let seen_in = seen.clone();
        struct Capture {
            seen: Arc<Mutex<Vec<ResolvedRequest>>>,
        }
        impl Backend for Capture {
            fn complete(&self, request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
                self.seen.lock().unwrap().push(request.clone());
                Ok(ModelResponse {
                    text: "The lid is green, matching the constraint".to_string(),
                    usage: None,
                    backend_id: self.id(),
                })
            }
            fn id(&self) -> String {
                "capture".to_string()
            }
        }
        let gw = ModelGateway::live(
            Box::new(Capture { seen: seen_in }),
            AssetResolver::with_root(dir.path()),
        );

        let mut record = sample_record("kettle", "kettle.jpg");
        record
            .asset_refs
            .push(("manual_doc".to_string(), "manual.pdf".to_string()));
        let cmulti = MultimodalColumnSet {
            entries: vec![
                MultimodalColumn {
                    table: "products".into(),
                    column: "image_url".into(),
                    kind: Modality::ImageUrl,
                },
                MultimodalColumn {
                    table: "products".into(),
                    column: "manual_doc".into(),
                    kind: Modality::DocumentPath,
                },
            ],
        };
        let rationale = generate_rationale(
            &NLQuery::new("green lid?").unwrap(),
            &record,
            &cmulti,
            &gw,
        )
        .unwrap();
        assert_eq!(rationale.text, "The lid is green, matching the constraint");
        assert_eq!(rationale.record_key, vec![CellValue::Int(1)]);

        let requests = seen.lock().unwrap();
        assert_eq!(requests.len(), 1);
        let assets: Vec<_> = requests[0]
            .parts
            .iter()
            .filter(|p| matches!(p, crate::modelgate::ResolvedPart::Asset { .. }))
            .collect();
        assert_eq!(assets.len(), 2, "one part per linked asset");
        assert!(requests[0].joined_text().contains("name: kettle"));
    }

    #[test]
    fn records_without_assets_are_rejected_up_front() {
        let gw = script_gateway(|_| "unused".to_string());
        let mut record = sample_record("kettle", "kettle.jpg");
        record.asset_refs.clear();
        let err = generate_rationale(
            &NLQuery::new("q").unwrap(),
            &record,
            &MultimodalColumnSet::default(),
            &gw,
        )
        .unwrap_err();
        assert!(matches!(err, MmpError::NoAssets));
    }

    // deciders for end-to-end runs ------------------------------------

    struct KeywordDecider;
    impl Decider for KeywordDecider {
        fn decide(&self, _q: &str, rationale: &str) -> Result<DecisionLabel, DecisionError> {
            if rationale.contains("clearly green") {
                Ok(DecisionLabel::Accept)
            } else if rationale.contains("possibly green") {
                Ok(DecisionLabel::Recommend)
            } else {
                Ok(DecisionLabel::Reject)
            }
        }
        fn name(&self) -> &'static str {
            "keyword"
        }
    }

    struct RejectAll;
    impl Decider for RejectAll {
        fn decide(&self, _q: &str, _r: &str) -> Result<DecisionLabel, DecisionError> {
            Ok(DecisionLabel::Reject)
        }
        fn name(&self) -> &'static str {
            "reject-all"
        }
    }

    fn pipeline_route(prompt: &str) -> String {
        if prompt.contains("base_table:") {
            // plan request
            "```plan\nbase_table: products\njoin_tables: none\n```".to_string()
        } else if prompt.contains("```where") {
            "```where\nprice < 50\n```".to_string()
        } else if prompt.contains("name: kettle") {
            "The kettle lid is clearly green.".to_string()
        } else if prompt.contains("name: teapot") {
            "The teapot lid is possibly green.".to_string()
        } else {
            "No green anywhere.".to_string()
        }
    }

    fn run_fixture(
        db: &Db,
        decider: &dyn Decider,
        options: &MmpOptions,
    ) -> (MmpOutcome, ModelGateway) {
        let dir = asset_dir(&["kettle.jpg", "teapot.jpg", "mug.jpg", "stapler.jpg"]);
        let gw = ModelGateway::live(
            Box::new(Router {
                route: Box::new(pipeline_route),
            }),
            AssetResolver::with_root(dir.path()),
        );
        let schema = introspect(db).unwrap();
        let outcome = run_with(
            &NLQuery::new("products under $50 with a green lid").unwrap(),
            &schema,
            db,
            &gw,
            decider,
            options,
        )
        .unwrap();
        // tempdir dropped here; assets were already consumed
        (outcome, gw)
    }

    #[test]
    fn full_run_accepts_one_record_and_synthesizes_it() {
        let db = products_db();
        let (outcome, _gw) = run_fixture(&db, &KeywordDecider, &MmpOptions::default());

        // the null-image tray never became a candidate
        assert_eq!(outcome.report.candidate_count, 3);
        assert_eq!(outcome.report.rationale_calls, 3);
        assert_eq!(outcome.report.decision_calls, 3);

        assert_eq!(outcome.report.accepted_keys, vec![vec![CellValue::Int(1)]]);
        assert_eq!(
            outcome.report.recommended_keys,
            vec![vec![CellValue::Int(2)]]
        );
        assert_eq!(outcome.rows.len(), 1);
        let name_col = outcome.rows.columns.iter().position(|c| c == "name").unwrap();
        assert_eq!(outcome.rows.rows[0][name_col], CellValue::Text("kettle".into()));

        let final_sql = outcome.report.final_sql.as_deref().unwrap();
        assert!(final_sql.contains("IN (1)"), "{final_sql}");
        assert_eq!(outcome.report.final_row_count, 1);
        assert!(outcome.report.not_null_clause.contains("image_url IS NOT NULL"));
    }

    #[test]
    fn rejecting_every_record_issues_no_final_query() {
        let db = products_db();
        let (outcome, _gw) = run_fixture(&db, &RejectAll, &MmpOptions::default());
        assert!(outcome.rows.is_empty());
        assert!(outcome.report.final_sql.is_none());
        assert_eq!(outcome.report.final_row_count, 0);
        assert_eq!(outcome.report.accepted_keys.len(), 0);
    }

    #[test]
    fn outcome_is_independent_of_record_processing_order() {
        let db = products_db();
        let (baseline, _gw) = run_fixture(&db, &KeywordDecider, &MmpOptions::default());
        let baseline_json = serde_json::to_string(&baseline.report).unwrap();
        for seed in [7u64, 8, 9] {
            let options = MmpOptions {
                shuffle_seed: Some(seed),
                ..Default::default()
            };
            let (shuffled, _gw) = run_fixture(&db, &KeywordDecider, &options);
            assert_eq!(
                serde_json::to_string(&shuffled.report).unwrap(),
                baseline_json
            );
        }
    }

    #[test]
    fn missing_assets_mark_records_skipped_not_failed() {
        let db = products_db();
        let dir = asset_dir(&["kettle.jpg", "teapot.jpg"]); // mug.jpg absent
        let gw = ModelGateway::live(
            Box::new(Router {
                route: Box::new(pipeline_route),
            }),
            AssetResolver::with_root(dir.path()),
        );
        let schema = introspect(&db).unwrap();
        let outcome = run_with(
            &NLQuery::new("products under $50 with a green lid").unwrap(),
            &schema,
            &db,
            &gw,
            &KeywordDecider,
            &MmpOptions::default(),
        )
        .unwrap();

        assert_eq!(outcome.report.candidate_count, 3);
        assert_eq!(outcome.report.skipped_count, 1);
        let skipped: Vec<_> = outcome
            .report
            .records
            .iter()
            .filter(|r| r.skipped.is_some())
            .collect();
        assert_eq!(skipped.len(), 1);
        assert_eq!(skipped[0].key, vec![CellValue::Int(3)]);
        assert!(skipped[0].skipped.as_deref().unwrap().contains("rationale failed"));
        // the accepted kettle still came through
        assert_eq!(outcome.report.accepted_keys, vec![vec![CellValue::Int(1)]]);
    }

    #[test]
    fn joined_run_qualifies_columns_and_keeps_keys_straight() {
        let db = shop_db();
        let dir = asset_dir(&["kettle.jpg", "teapot.jpg", "stapler.jpg"]);
        let gw = ModelGateway::live(
            Box::new(Router {
                route: Box::new(|prompt: &str| {
                    if prompt.contains("base_table:") {
                        "```plan\nbase_table: products\njoin_tables: categories\n```".to_string()
                    } else if prompt.contains("```where") {
                        "```where\ncategories.label = 'kitchen'\n```".to_string()
                    } else if prompt.contains("products.name: kettle") {
                        "The kettle lid is clearly green.".to_string()
                    } else {
                        "No green anywhere.".to_string()
                    }
                }),
            }),
            AssetResolver::with_root(dir.path()),
        );
        let schema = introspect(&db).unwrap();
        let outcome = run_with(
            &NLQuery::new("kitchen products with a green lid").unwrap(),
            &schema,
            &db,
            &gw,
            &KeywordDecider,
            &MmpOptions::default(),
        )
        .unwrap();

        // two kitchen products were candidates; the office stapler was not
        assert_eq!(outcome.report.candidate_count, 2);
        assert!(outcome.report.join_clause.contains("INNER JOIN"));
        assert_eq!(outcome.report.accepted_keys, vec![vec![CellValue::Int(10)]]);
        assert_eq!(outcome.rows.len(), 1);
        // final synthesis returns base-table rows with plain columns
        assert!(outcome.rows.columns.contains(&"product_id".to_string()));
    }

    #[test]
    fn synthesis_handles_composite_keys_both_ways() {
        let mut accepted = AcceptedKeySet::new();
        accepted.insert(vec![CellValue::Int(1), CellValue::Text("a".into())]);
        accepted.insert(vec![CellValue::Int(2), CellValue::Text("b".into())]);
        let cols = vec!["x".to_string(), "y".to_string()];

        let row_value = synthesis_sql("t", &cols, &accepted, Dialect::Sqlite);
        assert_eq!(
            row_value,
            "SELECT * FROM t WHERE (t.x, t.y) IN ((1, 'a'), (2, 'b'))"
        );

        let fallback = synthesis_sql("t", &cols, &accepted, Dialect::Generic);
        assert_eq!(
            fallback,
            "SELECT * FROM t WHERE (t.x = 1 AND t.y = 'a') OR (t.x = 2 AND t.y = 'b')"
        );

        // both shapes must clear the guardrail
        assert!(sqp::sanitize(&row_value, Dialect::Sqlite).is_ok());
        assert!(sqp::sanitize(&fallback, Dialect::Generic).is_ok());
    }
}
