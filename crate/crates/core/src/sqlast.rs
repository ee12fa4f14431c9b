//! Small shared helpers over the SQL syntax tree.

use sqlparser::ast::{Ident, ObjectName, ObjectNamePart, Query, Select, SetExpr, Statement};
use sqlparser::parser::{Parser, ParserError};

use crate::db::Dialect;

/// Parse all statements in `sql` under the given dialect.
pub fn parse_statements(dialect: Dialect, sql: &str) -> Result<Vec<Statement>, ParserError> {
    Parser::parse_sql(dialect.parser().as_ref(), sql)
}

/// Parse exactly one statement.
pub fn parse_one(dialect: Dialect, sql: &str) -> Result<Statement, String> {
    let mut stmts = parse_statements(dialect, sql).map_err(|e| e.to_string())?;
    match stmts.len() {
        1 => Ok(stmts.remove(0)),
        0 => Err("no statement found".to_string()),
        n => Err(format!("expected one statement, found {n}")),
    }
}

/// Unquoted text of an identifier.
pub fn ident_text(ident: &Ident) -> String {
    ident.value.clone()
}

/// Last identifier of a possibly qualified object name (`db.t` gives `t`).
pub fn object_name_text(name: &ObjectName) -> Option<String> {
    name.0.iter().rev().find_map(|part| match part {
        ObjectNamePart::Identifier(ident) => Some(ident.value.clone()),
        _ => None,
    })
}

/// The uppercase leading keyword of a statement, e.g. `DROP` or `INSERT`.
pub fn statement_verb(stmt: &Statement) -> String {
    stmt.to_string()
        .split_whitespace()
        .next()
        .unwrap_or("UNKNOWN")
        .to_uppercase()
}

/// The SELECT at the top of a query body, unwrapping parenthesized nesting.
/// Set operations and VALUES bodies give none.
pub fn query_select(query: &Query) -> Option<&Select> {
    fn descend(body: &SetExpr) -> Option<&Select> {
        match body {
            SetExpr::Select(select) => Some(select),
            SetExpr::Query(inner) => descend(&inner.body),
            _ => None,
        }
    }
    descend(&query.body)
}
