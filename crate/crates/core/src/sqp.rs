//! The structured query pipeline: plan, prune, generate SQL, sanitize,
//! execute.
//!
//! The sanitizer doubles as the safety guardrail. Whatever the model
//! produced, only a single read-only statement survives: markdown and
//! prose are stripped, the first statement is parsed, and the syntax tree
//! is walked so that no write operation hides anywhere inside it, CTEs
//! and nested set expressions included.

use std::ops::ControlFlow;
use std::time::Duration;

use serde::Serialize;
use sqlparser::ast::{Query, Select, SetExpr, Statement, Visit, Visitor};
use sqlparser::ast::OrderByKind;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::Token;
use thiserror::Error;

use crate::catalog::{render_schema_context, RenderStyle, SchemaModel};
use crate::db::{CellValue, Db, DbError, Dialect};
use crate::modelgate::{GatewayError, ModelGateway};
use crate::prompt;
use crate::sile::{self, NLQuery, PruneDiagnostic, PrunedSchema, QueryPlan};
use crate::sqlast::statement_verb;

/// A single statement that survived the guardrail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SanitizedSql {
    /// Normalized rendering of the parsed statement.
    pub text: String,
    pub dialect: Dialect,
    /// The model output the statement was extracted from.
    pub source_raw: String,
}

/// Tabular query result. `ordered` records whether the producing query
/// carried a top-level ORDER BY, which downstream comparison respects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
    pub ordered: bool,
}

impl ResultSet {
    pub fn empty() -> ResultSet {
        ResultSet {
            columns: Vec::new(),
            rows: Vec::new(),
            ordered: false,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SanitizeError {
    #[error("NO_SELECT_FOUND: no SQL statement detected in model output")]
    NoSelectFound,
    #[error("PARSE_FAILURE: {0}")]
    ParseFailure(String),
    #[error("MULTI_STATEMENT: output contains more than one SQL statement")]
    MultiStatement,
    #[error("FORBIDDEN_STATEMENT: {verb} is not allowed; only read-only SELECT statements pass")]
    ForbiddenStatement { verb: String },
}

/// Pipeline stages, used to tag which stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    Prune,
    Generate,
    Sanitize,
    Execute,
    Discover,
    Fragments,
    Assemble,
    Candidates,
    Decide,
    Synthesize,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Plan => "plan",
            Stage::Prune => "prune",
            Stage::Generate => "generate",
            Stage::Sanitize => "sanitize",
            Stage::Execute => "execute",
            Stage::Discover => "discover",
            Stage::Fragments => "fragments",
            Stage::Assemble => "assemble",
            Stage::Candidates => "candidates",
            Stage::Decide => "decide",
            Stage::Synthesize => "synthesize",
        }
    }
}

/// An error wrapped with the pipeline stage that produced it.
#[derive(Debug, Error)]
#[error("{stage} stage: {source}", stage = .stage.as_str())]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl PipelineError {
    pub fn new(
        stage: Stage,
        source: impl std::error::Error + Send + Sync + 'static,
    ) -> PipelineError {
        PipelineError {
            stage,
            source: Box::new(source),
        }
    }
}

// sanitization --------------------------------------------------------------

// words that can begin a SQL statement; used both to find where SQL
// starts inside prose and to spot a second statement after the first
const STATEMENT_HEADS: &[&str] = &[
    "SELECT", "WITH", "VALUES", "INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER",
    "TRUNCATE", "REPLACE", "MERGE", "GRANT", "REVOKE", "CALL", "PRAGMA", "ATTACH", "DETACH",
    "VACUUM", "EXPLAIN", "BEGIN", "COMMIT", "ROLLBACK", "SHOW", "USE",
];

fn first_fence(raw: &str) -> Option<&str> {
    let start = raw.find("```")?;
    let rest = &raw[start + 3..];
    let nl = rest.find('\n')?;
    let content = &rest[nl + 1..];
    match content.find("```") {
        Some(end) => Some(&content[..end]),
        None => Some(content),
    }
}

fn candidate_text(raw: &str) -> &str {
    if let Some((_, content)) = prompt::extract_fenced(raw, "sql") {
        return content;
    }
    first_fence(raw).unwrap_or(raw)
}

fn find_statement_start(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut i = 0;
    while i < bytes.len() {
        if is_word(bytes[i]) && (i == 0 || !is_word(bytes[i - 1])) {
            let mut j = i;
            while j < bytes.len() && is_word(bytes[j]) {
                j += 1;
            }
            if STATEMENT_HEADS.contains(&text[i..j].to_uppercase().as_str()) {
                // pull wrapping parens into the statement: `(SELECT ...)`
                let mut start = i;
                loop {
                    let before = text[..start].trim_end();
                    if before.ends_with('(') {
                        start = before.len() - 1;
                    } else {
                        break;
                    }
                }
                return Some(start);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    None
}

// every Select reachable inside one query body without crossing into a
// nested Query node (those get their own visit)
fn direct_selects<'a>(body: &'a SetExpr, out: &mut Vec<&'a Select>) {
    match body {
        SetExpr::Select(select) => out.push(select),
        SetExpr::SetOperation { left, right, .. } => {
            direct_selects(left, out);
            direct_selects(right, out);
        }
        _ => {}
    }
}

struct ReadOnlyCheck;

impl Visitor for ReadOnlyCheck {
    type Break = String;

    fn pre_visit_statement(&mut self, statement: &Statement) -> ControlFlow<String> {
        match statement {
            Statement::Query(_) => ControlFlow::Continue(()),
            forbidden => ControlFlow::Break(statement_verb(forbidden)),
        }
    }

    fn pre_visit_query(&mut self, query: &Query) -> ControlFlow<String> {
        if !query.locks.is_empty() {
            return ControlFlow::Break("SELECT FOR UPDATE".to_string());
        }
        let mut selects = Vec::new();
        direct_selects(&query.body, &mut selects);
        for select in selects {
            if select.into.is_some() {
                return ControlFlow::Break("SELECT INTO".to_string());
            }
        }
        ControlFlow::Continue(())
    }
}

// the statement head must be a SELECT, possibly wrapped in WITH, parens,
// or set operations; a bare VALUES or TABLE body is not a SELECT
fn body_is_select(body: &SetExpr) -> bool {
    match body {
        SetExpr::Select(_) => true,
        SetExpr::Query(inner) => body_is_select(&inner.body),
        SetExpr::SetOperation { left, right, .. } => body_is_select(left) && body_is_select(right),
        _ => false,
    }
}

/// Extract and vet one read-only statement from raw model output.
///
/// Fenced blocks are preferred over surrounding prose; the first statement
/// is parsed with the dialect's SQL grammar; anything that is not a pure
/// SELECT (data modification, definition, VALUES constructors, SELECT
/// INTO, locking reads) is rejected, as is any payload carrying a second
/// statement. The sanitized text is the parser's rendering, so sanitizing
/// twice is a fixed point.
pub fn sanitize(raw: &str, dialect: Dialect) -> Result<SanitizedSql, SanitizeError> {
    let candidate = candidate_text(raw);
    let start = find_statement_start(candidate).ok_or(SanitizeError::NoSelectFound)?;
    let stmt_text = candidate[start..].trim();

    let dialect_impl = dialect.parser();
    let mut parser = Parser::new(dialect_impl.as_ref())
        .try_with_sql(stmt_text)
        .map_err(|e| SanitizeError::ParseFailure(e.to_string()))?;
    let statement = parser
        .parse_statement()
        .map_err(|e| SanitizeError::ParseFailure(e.to_string()))?;

    let mut saw_semicolon = false;
    while parser.consume_token(&Token::SemiColon) {
        saw_semicolon = true;
    }
    match parser.peek_token().token {
        Token::EOF => {}
        Token::Word(word)
            if STATEMENT_HEADS.contains(&word.value.to_uppercase().as_str()) =>
        {
            return Err(SanitizeError::MultiStatement);
        }
        // trailing prose after a terminated statement is ignored; without
        // a terminator the parser would have failed above
        _ if saw_semicolon => {}
        other => {
            return Err(SanitizeError::ParseFailure(format!(
                "unexpected trailing token `{other}`"
            )));
        }
    }

    if let ControlFlow::Break(verb) = statement.visit(&mut ReadOnlyCheck) {
        return Err(SanitizeError::ForbiddenStatement { verb });
    }
    match &statement {
        Statement::Query(query) if body_is_select(&query.body) => {}
        Statement::Query(query) => {
            return Err(SanitizeError::ForbiddenStatement {
                verb: statement_verb_of_body(&query.body),
            });
        }
        // unreachable: the visitor already rejected non-queries
        other => {
            return Err(SanitizeError::ForbiddenStatement {
                verb: statement_verb(other),
            });
        }
    }

    // strip redundant parenthesization: engines reject a statement whose
    // first token is `(` even though the parser accepts it
    let statement = match statement {
        Statement::Query(query) => Statement::Query(unwrap_trivial_nesting(query)),
        other => other,
    };

    Ok(SanitizedSql {
        text: statement.to_string(),
        dialect,
        source_raw: raw.to_string(),
    })
}

fn unwrap_trivial_nesting(mut query: Box<Query>) -> Box<Query> {
    loop {
        let plain = query.with.is_none()
            && query.order_by.is_none()
            && query.limit_clause.is_none()
            && query.fetch.is_none()
            && query.locks.is_empty()
            && query.pipe_operators.is_empty();
        if plain && matches!(*query.body, SetExpr::Query(_)) {
            match *query.body {
                SetExpr::Query(inner) => query = inner,
                _ => unreachable!(),
            }
        } else {
            return query;
        }
    }
}

fn statement_verb_of_body(body: &SetExpr) -> String {
    body.to_string()
        .split_whitespace()
        .next()
        .unwrap_or("UNKNOWN")
        .to_uppercase()
}

// execution -----------------------------------------------------------------

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(30);

pub(crate) fn query_is_ordered(query: &Query) -> bool {
    if let Some(order_by) = &query.order_by {
        match &order_by.kind {
            OrderByKind::Expressions(exprs) => !exprs.is_empty(),
            OrderByKind::All(_) => true,
        }
    } else if let SetExpr::Query(inner) = &*query.body {
        query_is_ordered(inner)
    } else {
        false
    }
}

/// Run a sanitized statement and collect the rows. The ordered flag comes
/// from inspecting the statement for a top-level ORDER BY.
pub fn execute(sql: &SanitizedSql, db: &Db, timeout: Duration) -> Result<ResultSet, DbError> {
    let ordered = match crate::sqlast::parse_one(sql.dialect, &sql.text) {
        Ok(Statement::Query(query)) => query_is_ordered(&query),
        _ => false,
    };
    let raw = db.query(&sql.text, timeout)?;
    Ok(ResultSet {
        columns: raw.columns,
        rows: raw.rows,
        ordered,
    })
}

// generation ----------------------------------------------------------------

/// One zero-shot completion over the pruned schema. The raw output comes
/// back untouched; extraction is the sanitizer's job.
pub fn generate_sql(
    query: &NLQuery,
    pruned: &PrunedSchema,
    dialect: Dialect,
    gateway: &ModelGateway,
) -> Result<String, GatewayError> {
    let rendered = render_schema_context(&pruned.model, RenderStyle::Full);
    let request = prompt::SQL_ZEROSHOT.request(
        gateway.model_id(),
        &[
            ("schema", &rendered),
            ("question", &query.text),
            ("dialect", dialect.name()),
        ],
    );
    Ok(gateway.complete(&request)?.text)
}

// end to end ----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SqpOptions {
    pub timeout: Duration,
}

impl Default for SqpOptions {
    fn default() -> Self {
        SqpOptions {
            timeout: DEFAULT_QUERY_TIMEOUT,
        }
    }
}

/// Per-stage provenance for one pipeline run.
#[derive(Debug, Clone, Serialize)]
pub struct SqpReport {
    pub question: String,
    pub plan: QueryPlan,
    pub pruned_tables: Vec<String>,
    pub prune_diagnostics: Vec<PruneDiagnostic>,
    pub raw_sql: String,
    pub sanitized_sql: String,
    pub row_count: usize,
    pub model_calls: usize,
}

#[derive(Debug)]
pub struct SqpOutcome {
    pub rows: ResultSet,
    pub report: SqpReport,
}

/// Full pipeline: plan over the full schema, prune to the plan, generate
/// SQL over the pruned schema only, sanitize, execute. Fails with the
/// first failing stage's error, tagged with that stage.
pub fn run(
    query: &NLQuery,
    schema: &SchemaModel,
    db: &Db,
    gateway: &ModelGateway,
) -> Result<SqpOutcome, PipelineError> {
    run_with(query, schema, db, gateway, &SqpOptions::default())
}

pub fn run_with(
    query: &NLQuery,
    schema: &SchemaModel,
    db: &Db,
    gateway: &ModelGateway,
    options: &SqpOptions,
) -> Result<SqpOutcome, PipelineError> {
    let calls_before = gateway.completions_served();

    let plan = sile::plan(query, schema, gateway).map_err(|e| PipelineError::new(Stage::Plan, e))?;
    let pruned =
        sile::prune_schema(schema, &plan).map_err(|e| PipelineError::new(Stage::Prune, e))?;
    let raw_sql = generate_sql(query, &pruned, db.dialect(), gateway)
        .map_err(|e| PipelineError::new(Stage::Generate, e))?;
    let sanitized =
        sanitize(&raw_sql, db.dialect()).map_err(|e| PipelineError::new(Stage::Sanitize, e))?;
    let rows = execute(&sanitized, db, options.timeout)
        .map_err(|e| PipelineError::new(Stage::Execute, e))?;

    let report = SqpReport {
        question: query.text.clone(),
        pruned_tables: pruned.table_names().iter().map(|s| s.to_string()).collect(),
        prune_diagnostics: pruned.diagnostics.clone(),
        plan,
        raw_sql,
        sanitized_sql: sanitized.text.clone(),
        row_count: rows.len(),
        model_calls: gateway.completions_served() - calls_before,
    };
    Ok(SqpOutcome { rows, report })
}
