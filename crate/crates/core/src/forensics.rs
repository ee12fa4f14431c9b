//! Failure forensics: parse predicted and gold SQL, extract the
//! identifiers each references, and sort incorrect predictions into a
//! fixed taxonomy with supporting evidence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::ControlFlow;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    BinaryOperator, Expr, Query, Select, SelectItem, SetExpr, Statement, TableFactor, Visit,
    Visitor,
};
use thiserror::Error;

use crate::catalog::SchemaModel;
use crate::db::Dialect;

#[derive(Debug, Error)]
pub enum ForensicsError {
    #[error("sql does not parse: {0}")]
    Parse(String),
    #[error("gold query `{query_id}` does not parse: {message}")]
    GoldParse { query_id: String, message: String },
    #[error("no findings to aggregate")]
    NoFindings,
}

/// Closed taxonomy; precedence order is the declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureCategory {
    SchemaHallucination,
    JoinTableMismatch,
    SelectColumnMismatch,
    WhereOrLogicError,
    Other,
}

impl FailureCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::SchemaHallucination => "SCHEMA_HALLUCINATION",
            FailureCategory::JoinTableMismatch => "JOIN_TABLE_MISMATCH",
            FailureCategory::SelectColumnMismatch => "SELECT_COLUMN_MISMATCH",
            FailureCategory::WhereOrLogicError => "WHERE_OR_LOGIC_ERROR",
            FailureCategory::Other => "OTHER",
        }
    }

    pub const ALL: [FailureCategory; 5] = [
        FailureCategory::SchemaHallucination,
        FailureCategory::JoinTableMismatch,
        FailureCategory::SelectColumnMismatch,
        FailureCategory::WhereOrLogicError,
        FailureCategory::Other,
    ];
}

/// One classified failure. Evidence is empty only for OTHER.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureFinding {
    pub query_id: String,
    pub category: FailureCategory,
    pub evidence: Vec<String>,
}

// identifier extraction ----------------------------------------------------

/// Tables and columns a query references, aliases resolved. Columns are
/// `table.column` where the owning table is determinable, bare names
/// otherwise; wildcard projections are flagged rather than expanded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryIdentifiers {
    pub tables: BTreeSet<String>,
    pub columns: BTreeSet<String>,
    pub has_star: bool,
}

#[derive(Default)]
struct IdentifierScan {
    tables: BTreeSet<String>,
    // alias -> real table; derived-table aliases tracked separately so a
    // qualifier through one is not mistaken for a table name
    aliases: BTreeMap<String, String>,
    derived_aliases: BTreeSet<String>,
    bare_columns: BTreeSet<String>,
    qualified_columns: BTreeSet<(String, String)>,
    has_star: bool,
}

impl Visitor for IdentifierScan {
    type Break = ();

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<()> {
        match factor {
            TableFactor::Table { name, alias, .. } => {
                if let Some(table) = crate::sqlast::object_name_text(name) {
                    let table = table.to_lowercase();
                    if let Some(alias) = alias {
                        self.aliases
                            .insert(alias.name.value.to_lowercase(), table.clone());
                    }
                    self.tables.insert(table);
                }
            }
            TableFactor::Derived { alias: Some(alias), .. } => {
                self.derived_aliases.insert(alias.name.value.to_lowercase());
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, select: &Select) -> ControlFlow<()> {
        for item in &select.projection {
            if matches!(
                item,
                SelectItem::Wildcard(_) | SelectItem::QualifiedWildcard(_, _)
            ) {
                self.has_star = true;
            }
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        match expr {
            Expr::Identifier(ident) => {
                self.bare_columns.insert(ident.value.to_lowercase());
            }
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let column = parts[parts.len() - 1].value.to_lowercase();
                let qualifier = parts[parts.len() - 2].value.to_lowercase();
                self.qualified_columns.insert((qualifier, column));
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// All tables and columns a statement references. Works on any parseable
/// statement; the classifier only feeds it queries.
pub fn extract_identifiers(sql: &str) -> Result<QueryIdentifiers, ForensicsError> {
    let statement =
        crate::sqlast::parse_one(Dialect::Generic, sql).map_err(ForensicsError::Parse)?;
    let mut scan = IdentifierScan::default();
    let _ = statement.visit(&mut scan);

    let mut columns = BTreeSet::new();
    for (qualifier, column) in &scan.qualified_columns {
        if let Some(table) = scan.aliases.get(qualifier) {
            columns.insert(format!("{table}.{column}"));
        } else if scan.tables.contains(qualifier) {
            columns.insert(format!("{qualifier}.{column}"));
        } else if scan.derived_aliases.contains(qualifier) {
            // the owning relation is synthetic; keep the column bare
            columns.insert(column.clone());
        } else {
            columns.insert(format!("{qualifier}.{column}"));
        }
    }
    // a bare column is attributable only when a single real table is in
    // scope and nothing synthetic competes for it
    let single_table = scan.tables.len() == 1 && scan.derived_aliases.is_empty();
    for column in &scan.bare_columns {
        if single_table {
            let table = scan.tables.iter().next().expect("single table");
            columns.insert(format!("{table}.{column}"));
        } else {
            columns.insert(column.clone());
        }
    }

    Ok(QueryIdentifiers {
        tables: scan.tables,
        columns,
        has_star: scan.has_star,
    })
}

// execution engines phrase unknown-identifier errors differently; these
// cover the sqlite and mysql families
static UNKNOWN_IDENT_PATTERNS: Lazy<Vec<Regex>> = Lazy::new(|| {
    vec![
        Regex::new(r"(?i)no such (?:table|column):\s*([A-Za-z_][A-Za-z0-9_.]*)").unwrap(),
        Regex::new(r#"(?i)(?:table|column)\s+[`'"]?([A-Za-z_][A-Za-z0-9_.]*)[`'"]?\s+(?:does ?n.t exist|not found)"#)
            .unwrap(),
        Regex::new(r"(?i)unknown (?:table|column)\s+[`'\x22]?([A-Za-z_][A-Za-z0-9_.]*)").unwrap(),
    ]
});

fn schema_index(schema: &SchemaModel) -> (BTreeSet<String>, BTreeMap<String, BTreeSet<String>>) {
    let mut tables = BTreeSet::new();
    let mut columns_by_table = BTreeMap::new();
    for table in &schema.tables {
        let name = table.name.to_lowercase();
        let columns = table
            .columns
            .iter()
            .map(|c| c.name.to_lowercase())
            .collect();
        columns_by_table.insert(name.clone(), columns);
        tables.insert(name);
    }
    (tables, columns_by_table)
}

/// Identifier named by an engine error message that the schema does not
/// contain, if any. Lets execution errors feed the hallucination rule
/// even when the SQL text itself never parsed.
pub fn unknown_identifier_in(message: &str, schema: &SchemaModel) -> Option<String> {
    let (tables, columns_by_table) = schema_index(schema);
    let all_columns: BTreeSet<&String> = columns_by_table.values().flatten().collect();
    for pattern in UNKNOWN_IDENT_PATTERNS.iter() {
        if let Some(captures) = pattern.captures(message) {
            let ident = captures[1].to_lowercase();
            let bare = ident.rsplit('.').next().unwrap_or(&ident).to_string();
            if !tables.contains(&bare) && !all_columns.contains(&bare) {
                return Some(ident);
            }
        }
    }
    None
}

// classification -------------------------------------------------------------

fn main_select(query: &Query) -> Option<&Select> {
    fn of_body(body: &SetExpr) -> Option<&Select> {
        match body {
            SetExpr::Select(select) => Some(select),
            SetExpr::Query(inner) => of_body(&inner.body),
            SetExpr::SetOperation { left, .. } => of_body(left),
            _ => None,
        }
    }
    of_body(&query.body)
}

// projection items with aliases stripped and case folded, as a sorted
// multiset, so styling differences cannot register as a mismatch
fn normalized_projection(select: &Select) -> Vec<String> {
    let mut items: Vec<String> = select
        .projection
        .iter()
        .map(|item| match item {
            SelectItem::UnnamedExpr(expr)
            | SelectItem::ExprWithAlias { expr, .. }
            | SelectItem::ExprWithAliases { expr, .. } => expr.to_string().to_lowercase(),
            SelectItem::Wildcard(_) => "*".to_string(),
            SelectItem::QualifiedWildcard(kind, _) => format!("{kind}.*").to_lowercase(),
        })
        .collect();
    items.sort();
    items
}

fn gather_operands<'a>(expr: &'a Expr, op: &BinaryOperator, out: &mut Vec<&'a Expr>) {
    match expr {
        Expr::BinaryOp { left, op: o, right } if o == op => {
            gather_operands(left, op, out);
            gather_operands(right, op, out);
        }
        Expr::Nested(inner) => gather_operands(inner, op, out),
        other => out.push(other),
    }
}

// canonical form of a predicate tree: AND/OR chains flattened and their
// operands sorted, so operand order and redundant parentheses vanish
// while AND-vs-OR structure stays visible
fn canonical_predicate(expr: &Expr) -> String {
    match expr {
        Expr::BinaryOp { op, .. }
            if matches!(op, BinaryOperator::And | BinaryOperator::Or) =>
        {
            let mut operands = Vec::new();
            gather_operands(expr, op, &mut operands);
            let mut parts: Vec<String> =
                operands.iter().map(|e| canonical_predicate(e)).collect();
            parts.sort();
            let joiner = if matches!(op, BinaryOperator::And) {
                " AND "
            } else {
                " OR "
            };
            format!("({})", parts.join(joiner))
        }
        Expr::Nested(inner) => canonical_predicate(inner),
        leaf => leaf.to_string().to_lowercase(),
    }
}

fn canonical_filters(select: &Select) -> String {
    let where_part = select
        .selection
        .as_ref()
        .map(canonical_predicate)
        .unwrap_or_else(|| "<none>".to_string());
    let having_part = select
        .having
        .as_ref()
        .map(canonical_predicate)
        .unwrap_or_else(|| "<none>".to_string());
    format!("where={where_part} having={having_part}")
}

fn hallucinated_identifiers(pred: &QueryIdentifiers, schema: &SchemaModel) -> Vec<String> {
    let (tables, columns_by_table) = schema_index(schema);
    let all_columns: BTreeSet<&String> = columns_by_table.values().flatten().collect();
    let mut evidence = BTreeSet::new();
    for table in &pred.tables {
        if !tables.contains(table) {
            evidence.insert(table.clone());
        }
    }
    for column in &pred.columns {
        match column.split_once('.') {
            Some((table, name)) => match columns_by_table.get(table) {
                Some(columns) => {
                    if !columns.contains(name) {
                        evidence.insert(column.clone());
                    }
                }
                None => {
                    if pred.tables.contains(table) {
                        // the table itself is hallucinated; already flagged
                    } else if !all_columns.contains(&name.to_string()) {
                        // qualifier is synthetic, judge the column alone
                        evidence.insert(name.to_string());
                    }
                }
            },
            None => {
                if !all_columns.contains(column) {
                    evidence.insert(column.clone());
                }
            }
        }
    }
    evidence.into_iter().collect()
}

/// Assign one category to a known-incorrect pair by the fixed precedence
/// ladder: hallucination, then table set, then projection, then filter
/// logic, then OTHER. A gold query that does not parse is an input-data
/// error, not a classification.
pub fn classify_failure(
    query_id: &str,
    pred_sql: &str,
    gold_sql: &str,
    schema: &SchemaModel,
) -> Result<FailureFinding, ForensicsError> {
    let finding = |category, evidence| FailureFinding {
        query_id: query_id.to_string(),
        category,
        evidence,
    };

    let gold_statement = crate::sqlast::parse_one(Dialect::Generic, gold_sql).map_err(|e| {
        ForensicsError::GoldParse {
            query_id: query_id.to_string(),
            message: e,
        }
    })?;

    let pred_statement = match crate::sqlast::parse_one(Dialect::Generic, pred_sql) {
        Ok(statement) => statement,
        Err(message) => {
            // a pure syntax error carries no grounding signal; only an
            // unknown-identifier mention upgrades it to hallucination
            return Ok(match unknown_identifier_in(&message, schema) {
                Some(ident) => {
                    finding(FailureCategory::SchemaHallucination, vec![ident])
                }
                None => finding(FailureCategory::Other, Vec::new()),
            });
        }
    };

    let pred_idents = extract_identifiers(pred_sql).map_err(|_| unreachable_parse())?;
    let gold_idents = extract_identifiers(gold_sql).map_err(|_| unreachable_parse())?;

    let hallucinated = hallucinated_identifiers(&pred_idents, schema);
    if !hallucinated.is_empty() {
        return Ok(finding(FailureCategory::SchemaHallucination, hallucinated));
    }

    if pred_idents.tables != gold_idents.tables {
        let mut evidence = Vec::new();
        for table in gold_idents.tables.difference(&pred_idents.tables) {
            evidence.push(format!("missing: {table}"));
        }
        for table in pred_idents.tables.difference(&gold_idents.tables) {
            evidence.push(format!("extra: {table}"));
        }
        return Ok(finding(FailureCategory::JoinTableMismatch, evidence));
    }

    let pred_select = statement_select(&pred_statement);
    let gold_select = statement_select(&gold_statement);
    if let (Some(pred_select), Some(gold_select)) = (pred_select, gold_select) {
        let pred_projection = normalized_projection(pred_select);
        let gold_projection = normalized_projection(gold_select);
        if pred_projection != gold_projection {
            return Ok(finding(
                FailureCategory::SelectColumnMismatch,
                vec![
                    format!("pred: {}", pred_projection.join(", ")),
                    format!("gold: {}", gold_projection.join(", ")),
                ],
            ));
        }

        let pred_filters = canonical_filters(pred_select);
        let gold_filters = canonical_filters(gold_select);
        if pred_filters != gold_filters {
            return Ok(finding(
                FailureCategory::WhereOrLogicError,
                vec![
                    format!("pred: {pred_filters}"),
                    format!("gold: {gold_filters}"),
                ],
            ));
        }
    }

    Ok(finding(FailureCategory::Other, Vec::new()))
}

fn statement_select(statement: &Statement) -> Option<&Select> {
    match statement {
        Statement::Query(query) => main_select(query),
        _ => None,
    }
}

fn unreachable_parse() -> ForensicsError {
    // both inputs were parsed a moment ago
    ForensicsError::Parse("statement reparse failed".to_string())
}

// aggregation -----------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CategoryShare {
    pub category: FailureCategory,
    pub count: usize,
    pub percent: f64,
}

/// Distribution of findings over the full taxonomy; every category gets a
/// row even at zero so reports line up across corpora.
#[derive(Debug, Clone, Serialize)]
pub struct FailureReport {
    pub total: usize,
    pub rows: Vec<CategoryShare>,
}

pub fn failure_report(findings: &[FailureFinding]) -> Result<FailureReport, ForensicsError> {
    if findings.is_empty() {
        return Err(ForensicsError::NoFindings);
    }
    let total = findings.len();
    let rows = FailureCategory::ALL
        .iter()
        .map(|&category| {
            let count = findings.iter().filter(|f| f.category == category).count();
            CategoryShare {
                category,
                count,
                percent: count as f64 / total as f64 * 100.0,
            }
        })
        .collect();
    Ok(FailureReport { total, rows })
}

impl fmt::Display for FailureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>6} {:>8}", "category", "count", "percent")?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<24} {:>6} {:>7.2}%",
                row.category.as_str(),
                row.count,
                row.percent
            )?;
        }
        writeln!(f, "{:<24} {:>6}", "total", self.total)
    }
}
