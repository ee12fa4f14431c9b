//! Evaluation toolkit: execution accuracy, efficiency scoring, schema
//! linking metrics, difficulty classification, stratified sampling, and
//! the representativeness check that keeps a sample honest.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    Expr, GroupByExpr, OrderByKind, Select, SelectItem, SetExpr, Statement, TableFactor, Visit,
    Visitor,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::db::{CellValue, Db, DbError, Dialect};
use crate::sqp::ResultSet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("record `{0}` is marked correct but lacks runtimes")]
    MissingRuntime(String),
    #[error("record `{0}` is marked incorrect but carries runtimes")]
    UnexpectedRuntime(String),
    #[error("measured a nonpositive runtime twice for `{0}`")]
    NonPositiveRuntime(String),
    #[error("gold query `{query_id}` failed: {message}")]
    GoldQuery { query_id: String, message: String },
    #[error("gold table set is empty")]
    EmptyGold,
    #[error("sample size {n} exceeds population {population}")]
    SampleTooLarge { n: usize, population: usize },
    #[error("category sets differ: {0}")]
    CategoryMismatch(String),
    #[error("representativeness needs at least two categories")]
    TooFewCategories,
    #[error("sql does not parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Db(#[from] DbError),
}

// records and aggregates --------------------------------------------------

/// One evaluated query pair. Runtimes are present exactly when the
/// prediction was correct; that is what makes the efficiency score well
/// defined.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub difficulty: Option<String>,
    pub predicted_sql: String,
    pub gold_sql: String,
    pub correct: bool,
    pub pred_runtime: Option<f64>,
    pub gold_runtime: Option<f64>,
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn correct(
        query_id: impl Into<String>,
        difficulty: Option<String>,
        predicted_sql: impl Into<String>,
        gold_sql: impl Into<String>,
        pred_runtime: f64,
        gold_runtime: f64,
    ) -> EvalRecord {
        EvalRecord {
            query_id: query_id.into(),
            difficulty,
            predicted_sql: predicted_sql.into(),
            gold_sql: gold_sql.into(),
            correct: true,
            pred_runtime: Some(pred_runtime),
            gold_runtime: Some(gold_runtime),
            error: None,
        }
    }

    pub fn incorrect(
        query_id: impl Into<String>,
        difficulty: Option<String>,
        predicted_sql: impl Into<String>,
        gold_sql: impl Into<String>,
        error: Option<String>,
    ) -> EvalRecord {
        EvalRecord {
            query_id: query_id.into(),
            difficulty,
            predicted_sql: predicted_sql.into(),
            gold_sql: gold_sql.into(),
            correct: false,
            pred_runtime: None,
            gold_runtime: None,
            error,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let has_runtimes = self.pred_runtime.is_some() && self.gold_runtime.is_some();
        let has_any = self.pred_runtime.is_some() || self.gold_runtime.is_some();
        if self.correct && !has_runtimes {
            return Err(EvalError::MissingRuntime(self.query_id.clone()));
        }
        if !self.correct && has_any {
            return Err(EvalError::UnexpectedRuntime(self.query_id.clone()));
        }
        Ok(())
    }
}

/// Aggregate view over a record set. Every number here is recomputable
/// from `records`; nothing is carried that cannot be re-derived.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub ea_overall: f64,
    pub ea_by_stratum: BTreeMap<String, f64>,
    pub ves_overall: f64,
    pub ves_by_stratum: BTreeMap<String, f64>,
}

const UNLABELED: &str = "unlabeled";

impl EvalReport {
    pub fn from_records(records: Vec<EvalRecord>) -> Result<EvalReport, EvalError> {
        let ea_overall = execution_accuracy(&records)?;
        let ves_overall = valid_efficiency_score(&records)?;
        let mut strata: BTreeMap<String, Vec<&EvalRecord>> = BTreeMap::new();
        for record in &records {
            let label = record.difficulty.clone().unwrap_or_else(|| UNLABELED.to_string());
            strata.entry(label).or_default().push(record);
        }
        let mut ea_by_stratum = BTreeMap::new();
        let mut ves_by_stratum = BTreeMap::new();
        for (label, group) in &strata {
            ea_by_stratum.insert(label.clone(), ea_of(group.iter().copied()));
            ves_by_stratum.insert(label.clone(), ves_of(group.iter().copied()));
        }
        Ok(EvalReport {
            records,
            ea_overall,
            ea_by_stratum,
            ves_overall,
            ves_by_stratum,
        })
    }
}

/// Plain-text by-difficulty table, one row per stratum plus an overall
/// row.
pub fn render_report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>6} {:>8} {:>8}\n",
        "stratum", "n", "EA", "VES"
    ));
    for (label, ea) in &report.ea_by_stratum {
        let n = report
            .records
            .iter()
            .filter(|r| r.difficulty.as_deref().unwrap_or(UNLABELED) == label)
            .count();
        let ves = report.ves_by_stratum[label];
        out.push_str(&format!("{label:<12} {n:>6} {ea:>8.3} {ves:>8.2}\n"));
    }
    out.push_str(&format!(
        "{:<12} {:>6} {:>8.3} {:>8.2}\n",
        "overall",
        report.records.len(),
        report.ea_overall,
        report.ves_overall
    ));
    out
}

// result comparison --------------------------------------------------------

const NUMERIC_TOLERANCE: f64 = 1e-6;

fn cell_matches(a: &CellValue, b: &CellValue) -> bool {
    let numeric = |v: &CellValue| match v {
        CellValue::Int(i) => Some(*i as f64),
        CellValue::Float(f) => Some(*f),
        _ => None,
    };
    match (numeric(a), numeric(b)) {
        (Some(x), Some(y)) => (x - y).abs() <= NUMERIC_TOLERANCE,
        _ => a == b,
    }
}

fn row_matches(a: &[CellValue], b: &[CellValue]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cell_matches(x, y))
}

/// Result-set equivalence: sequence equality when the gold query imposed
/// an order, multiset equality otherwise. Columns compare positionally;
/// numbers within an absolute tolerance of 1e-6.
pub fn execution_match(pred: &ResultSet, gold: &ResultSet) -> bool {
    if pred.rows.len() != gold.rows.len() {
        return false;
    }
    if gold.ordered {
        pred.rows
            .iter()
            .zip(&gold.rows)
            .all(|(a, b)| row_matches(a, b))
    } else {
        let mut pred_sorted: Vec<&Vec<CellValue>> = pred.rows.iter().collect();
        let mut gold_sorted: Vec<&Vec<CellValue>> = gold.rows.iter().collect();
        pred_sorted.sort();
        gold_sorted.sort();
        pred_sorted
            .iter()
            .zip(&gold_sorted)
            .all(|(a, b)| row_matches(a, b))
    }
}

fn ea_of<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for record in records {
        total += 1;
        if record.correct {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Mean of correctness indicators; failed predictions already carry
/// correct = false and so count against the score.
pub fn execution_accuracy(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    for record in records {
        record.validate()?;
    }
    Ok(ea_of(records.iter()))
}

fn ves_of<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> f64 {
    let mut total = 0f64;
    let mut n = 0usize;
    for record in records {
        n += 1;
        if record.correct {
            let pred = record.pred_runtime.expect("validated");
            let gold = record.gold_runtime.expect("validated");
            total += (gold / pred).sqrt();
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64 * 100.0
    }
}

/// Efficiency-weighted accuracy: correct records contribute the square
/// root of the gold/pred runtime ratio, incorrect ones contribute zero.
/// Reported scaled by 100.
pub fn valid_efficiency_score(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    for record in records {
        record.validate()?;
    }
    Ok(ves_of(records.iter()))
}

// timing --------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TimingOptions {
    pub repeats: usize,
}

impl Default for TimingOptions {
    fn default() -> Self {
        TimingOptions { repeats: 5 }
    }
}

const MEASURE_TIMEOUT: Duration = Duration::from_secs(30);

fn median(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}

fn timed_run(db: &Db, sql: &str) -> Result<f64, EvalError> {
    let start = Instant::now();
    db.query(sql, MEASURE_TIMEOUT)?;
    Ok(start.elapsed().as_secs_f64())
}

/// Median of `repeats` warm runs, after one discarded warm-up. A
/// nonpositive median is re-measured once before giving up.
pub fn measure_runtime(db: &Db, sql: &str, timing: &TimingOptions) -> Result<f64, EvalError> {
    let measure = || -> Result<f64, EvalError> {
        timed_run(db, sql)?; // warm-up, discarded
        let samples: Result<Vec<f64>, EvalError> =
            (0..timing.repeats.max(1)).map(|_| timed_run(db, sql)).collect();
        Ok(median(samples?))
    };
    let first = measure()?;
    if first > 0.0 {
        return Ok(first);
    }
    let second = measure()?;
    if second > 0.0 {
        Ok(second)
    } else {
        Err(EvalError::NonPositiveRuntime(sql.to_string()))
    }
}

fn run_sql(db: &Db, sql: &str) -> Result<ResultSet, String> {
    let ordered = match crate::sqlast::parse_one(db.dialect(), sql) {
        Ok(Statement::Query(query)) => crate::sqp::query_is_ordered(&query),
        _ => false,
    };
    let raw = db.query(sql, MEASURE_TIMEOUT).map_err(|e| e.to_string())?;
    Ok(ResultSet {
        columns: raw.columns,
        rows: raw.rows,
        ordered,
    })
}

/// Execute one predicted/gold pair and produce its record. A failing
/// gold query is an input error; a failing prediction is just incorrect.
pub fn evaluate_pair(
    db: &Db,
    query_id: &str,
    difficulty: Option<&str>,
    pred_sql: &str,
    gold_sql: &str,
    timing: &TimingOptions,
) -> Result<EvalRecord, EvalError> {
    let difficulty = difficulty.map(|s| s.to_string());
    let gold_rows = run_sql(db, gold_sql).map_err(|message| EvalError::GoldQuery {
        query_id: query_id.to_string(),
        message,
    })?;
    let pred_rows = match run_sql(db, pred_sql) {
        Ok(rows) => rows,
        Err(message) => {
            return Ok(EvalRecord::incorrect(
                query_id,
                difficulty,
                pred_sql,
                gold_sql,
                Some(message),
            ));
        }
    };
    if !execution_match(&pred_rows, &gold_rows) {
        return Ok(EvalRecord::incorrect(
            query_id, difficulty, pred_sql, gold_sql, None,
        ));
    }
    let pred_runtime = measure_runtime(db, pred_sql, timing)?;
    let gold_runtime = measure_runtime(db, gold_sql, timing)?;
    Ok(EvalRecord::correct(
        query_id,
        difficulty,
        pred_sql,
        gold_sql,
        pred_runtime,
        gold_runtime,
    ))
}

// classification metrics -----------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ClassScore {
    pub label: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub classes: Vec<ClassScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

// 0/0 is defined as 0 throughout, so empty classes cannot poison the
// macro means with NaN
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn score(label: &str, tp: usize, fp: usize, fn_: usize) -> ClassScore {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScore {
        label: label.to_string(),
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
    }
}

fn with_macros(classes: Vec<ClassScore>) -> ClassMetrics {
    let n = classes.len() as f64;
    let macro_precision = classes.iter().map(|c| c.precision).sum::<f64>() / n;
    let macro_recall = classes.iter().map(|c| c.recall).sum::<f64>() / n;
    let macro_f1 = classes.iter().map(|c| c.f1).sum::<f64>() / n;
    ClassMetrics {
        classes,
        macro_precision,
        macro_recall,
        macro_f1,
    }
}

/// Set-overlap precision/recall/F1 for schema linking, as a single-class
/// metric.
pub fn linking_prf(
    predicted: &BTreeSet<String>,
    gold: &BTreeSet<String>,
) -> Result<ClassMetrics, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let tp = predicted.intersection(gold).count();
    let fp = predicted.difference(gold).count();
    let fn_ = gold.difference(predicted).count();
    Ok(with_macros(vec![score("tables", tp, fp, fn_)]))
}

/// Label confusion counts, rows indexed by gold label and columns by
/// predicted label.
#[derive(Debug, Clone)]
pub struct Confusion {
    labels: Vec<String>,
    counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(labels: &[&str]) -> Confusion {
        Confusion {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            counts: vec![vec![0; labels.len()]; labels.len()],
        }
    }

    fn index_of(&self, label: &str) -> Result<usize, EvalError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| EvalError::CategoryMismatch(format!("unknown label `{label}`")))
    }

    pub fn record(&mut self, gold: &str, predicted: &str) -> Result<(), EvalError> {
        let g = self.index_of(gold)?;
        let p = self.index_of(predicted)?;
        self.counts[g][p] += 1;
        Ok(())
    }

    pub fn from_pairs(labels: &[&str], pairs: &[(&str, &str)]) -> Result<Confusion, EvalError> {
        let mut confusion = Confusion::new(labels);
        for (gold, predicted) in pairs {
            confusion.record(gold, predicted)?;
        }
        Ok(confusion)
    }

    pub fn count(&self, gold: &str, predicted: &str) -> usize {
        let g = self.labels.iter().position(|l| l == gold);
        let p = self.labels.iter().position(|l| l == predicted);
        match (g, p) {
            (Some(g), Some(p)) => self.counts[g][p],
            _ => 0,
        }
    }
}

/// Per-class precision/recall/F1 from a confusion matrix, plus their
/// unweighted means.
pub fn macro_f1(confusion: &Confusion) -> ClassMetrics {
    let k = confusion.labels.len();
    let classes = (0..k)
        .map(|c| {
            let tp = confusion.counts[c][c];
            let fp = (0..k).filter(|&g| g != c).map(|g| confusion.counts[g][c]).sum();
            let fn_ = (0..k).filter(|&p| p != c).map(|p| confusion.counts[c][p]).sum();
            score(&confusion.labels[c], tp, fp, fn_)
        })
        .collect();
    with_macros(classes)
}

// hardness classification -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HardnessLabel {
    Easy,
    Medium,
    Hard,
    Extra,
}

impl HardnessLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            HardnessLabel::Easy => "easy",
            HardnessLabel::Medium => "medium",
            HardnessLabel::Hard => "hard",
            HardnessLabel::Extra => "extra",
        }
    }

    pub const ALL: [HardnessLabel; 4] = [
        HardnessLabel::Easy,
        HardnessLabel::Medium,
        HardnessLabel::Hard,
        HardnessLabel::Extra,
    ];
}

/// The three component counts the difficulty ladder is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HardnessComponents {
    /// surface complexity: clause presence, extra tables, ORs, LIKEs
    pub comp1: u32,
    /// nesting: value subqueries, set operations, derived tables
    pub comp2: u32,
    /// width: multiple aggregates, select items, conditions, group keys
    pub others: u32,
}

#[derive(Debug, Deserialize)]
struct RuleTable {
    rules: Vec<Rule>,
}

#[derive(Debug, Deserialize)]
struct Rule {
    label: HardnessLabel,
    any: Vec<Bounds>,
}

#[derive(Debug, Default, Deserialize)]
struct Bounds {
    comp1_min: Option<u32>,
    comp1_max: Option<u32>,
    comp2_min: Option<u32>,
    comp2_max: Option<u32>,
    others_min: Option<u32>,
    others_max: Option<u32>,
}

impl Bounds {
    fn admits(&self, c: &HardnessComponents) -> bool {
        self.comp1_min.is_none_or(|m| c.comp1 >= m)
            && self.comp1_max.is_none_or(|m| c.comp1 <= m)
            && self.comp2_min.is_none_or(|m| c.comp2 >= m)
            && self.comp2_max.is_none_or(|m| c.comp2 <= m)
            && self.others_min.is_none_or(|m| c.others >= m)
            && self.others_max.is_none_or(|m| c.others <= m)
    }
}

static HARDNESS_RULES: Lazy<RuleTable> = Lazy::new(|| {
    serde_json::from_str(include_str!("../resources/hardness_rules.json"))
        .expect("hardness rule table is valid JSON")
});

// counts aggregates, LIKEs, and nested query blocks within one expression
#[derive(Default)]
struct ExprScan {
    aggs: u32,
    likes: u32,
    subqueries: u32,
}

const AGG_FUNCTIONS: &[&str] = &["count", "sum", "avg", "min", "max"];

impl Visitor for ExprScan {
    type Break = ();

    fn pre_visit_expr(&mut self, expr: &Expr) -> ControlFlow<()> {
        match expr {
            Expr::Function(function) => {
                if let Some(name) = crate::sqlast::object_name_text(&function.name) {
                    if AGG_FUNCTIONS.contains(&name.to_lowercase().as_str()) {
                        self.aggs += 1;
                    }
                }
            }
            Expr::Like { .. } | Expr::ILike { .. } => self.likes += 1,
            _ => {}
        }
        ControlFlow::Continue(())
    }

    fn pre_visit_query(&mut self, _query: &sqlparser::ast::Query) -> ControlFlow<()> {
        self.subqueries += 1;
        ControlFlow::Continue(())
    }
}

fn scan_expr(expr: &Expr) -> ExprScan {
    let mut scan = ExprScan::default();
    let _ = expr.visit(&mut scan);
    scan
}

// leaves and OR count of a boolean tree, treating AND/OR as connectives
// and everything else (subqueries included) as atomic conditions
fn flatten_bool<'a>(expr: &'a Expr, leaves: &mut Vec<&'a Expr>, or_count: &mut u32) {
    match expr {
        Expr::BinaryOp { left, op, right } if op == &sqlparser::ast::BinaryOperator::And => {
            flatten_bool(left, leaves, or_count);
            flatten_bool(right, leaves, or_count);
        }
        Expr::BinaryOp { left, op, right } if op == &sqlparser::ast::BinaryOperator::Or => {
            *or_count += 1;
            flatten_bool(left, leaves, or_count);
            flatten_bool(right, leaves, or_count);
        }
        Expr::Nested(inner) => flatten_bool(inner, leaves, or_count),
        leaf => leaves.push(leaf),
    }
}

fn leftmost_select<'a>(body: &'a SetExpr, setops: &mut u32) -> Option<&'a Select> {
    match body {
        SetExpr::Select(select) => Some(select),
        SetExpr::Query(inner) => leftmost_select(&inner.body, setops),
        SetExpr::SetOperation { left, .. } => {
            *setops += 1;
            leftmost_select(left, setops)
        }
        _ => None,
    }
}

/// Component counts for the difficulty ladder, derived from the parsed
/// statement.
pub fn hardness_components(sql: &str) -> Result<HardnessComponents, EvalError> {
    let statement = crate::sqlast::parse_one(Dialect::Generic, sql).map_err(EvalError::Parse)?;
    let Statement::Query(query) = &statement else {
        return Err(EvalError::Parse("not a query".to_string()));
    };

    let mut comp2 = 0u32;
    if let Some(with) = &query.with {
        comp2 += with.cte_tables.len() as u32;
    }
    let select = leftmost_select(&query.body, &mut comp2)
        .ok_or_else(|| EvalError::Parse("query has no SELECT body".to_string()))?;

    let mut comp1 = 0u32;
    let mut others = 0u32;
    let mut aggs = 0u32;

    // tables and derived subqueries
    let mut table_units = 0u32;
    for twj in &select.from {
        table_units += 1 + twj.joins.len() as u32;
        let factors =
            std::iter::once(&twj.relation).chain(twj.joins.iter().map(|j| &j.relation));
        for factor in factors {
            if matches!(factor, TableFactor::Derived { .. }) {
                comp2 += 1;
            }
        }
    }
    comp1 += table_units.saturating_sub(1);

    // where
    let mut where_conds = 0u32;
    if let Some(selection) = &select.selection {
        comp1 += 1;
        let mut leaves = Vec::new();
        let mut or_count = 0u32;
        flatten_bool(selection, &mut leaves, &mut or_count);
        where_conds = leaves.len() as u32;
        let scan = scan_expr(selection);
        comp1 += or_count + scan.likes;
        comp2 += scan.subqueries;
        aggs += scan.aggs;
    }

    // group by
    let group_len = match &select.group_by {
        GroupByExpr::Expressions(exprs, _) => {
            for expr in exprs {
                aggs += scan_expr(expr).aggs;
            }
            exprs.len() as u32
        }
        GroupByExpr::All(_) => 1,
    };
    if group_len > 0 {
        comp1 += 1;
    }
    if group_len > 1 {
        others += 1;
    }

    // having
    if let Some(having) = &select.having {
        let scan = scan_expr(having);
        comp2 += scan.subqueries;
        aggs += scan.aggs;
    }

    // order by and limit of the top query
    let ordered = query
        .order_by
        .as_ref()
        .map(|ob| match &ob.kind {
            OrderByKind::Expressions(exprs) => {
                for oe in exprs {
                    aggs += scan_expr(&oe.expr).aggs;
                }
                !exprs.is_empty()
            }
            OrderByKind::All(_) => true,
        })
        .unwrap_or(false);
    if ordered {
        comp1 += 1;
    }
    if query.limit_clause.is_some() || query.fetch.is_some() {
        comp1 += 1;
    }

    // projection
    for item in &select.projection {
        if let SelectItem::UnnamedExpr(expr) | SelectItem::ExprWithAlias { expr, .. } = item {
            let scan = scan_expr(expr);
            aggs += scan.aggs;
            comp2 += scan.subqueries;
        }
    }
    if select.projection.len() > 1 {
        others += 1;
    }
    if where_conds > 1 {
        others += 1;
    }
    if aggs > 1 {
        others += 1;
    }

    Ok(HardnessComponents {
        comp1,
        comp2,
        others,
    })
}

/// Difficulty label via the declarative rule ladder. First matching rule
/// wins; the table ends in a catch-all.
pub fn classify_hardness(sql: &str) -> Result<HardnessLabel, EvalError> {
    let components = hardness_components(sql)?;
    for rule in &HARDNESS_RULES.rules {
        if rule.any.iter().any(|bounds| bounds.admits(&components)) {
            return Ok(rule.label);
        }
    }
    // the shipped table ends in an unconditioned rule
    Ok(HardnessLabel::Extra)
}

// sampling ---------------------------------------------------------------------

fn fnv1a64(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for byte in text.bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Stratified sample of `n` indices: per-stratum counts by
/// largest-remainder rounding of the population proportions, selection
/// within each stratum by its own seeded generator. Output indices are in
/// population order.
pub fn stratified_sample(labels: &[&str], n: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    use rand::RngExt;
    use rand::SeedableRng;

    if n > labels.len() {
        return Err(EvalError::SampleTooLarge {
            n,
            population: labels.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (index, label) in labels.iter().enumerate() {
        strata.entry(label).or_default().push(index);
    }

    let population = labels.len() as f64;
    // base allocation plus remainders; leftover seats go to the largest
    // remainders, ties broken by label so the split is reproducible
    let mut allocations: BTreeMap<&str, usize> = BTreeMap::new();
    let mut remainders: Vec<(&str, f64)> = Vec::new();
    let mut assigned = 0usize;
    for (label, members) in &strata {
        let exact = n as f64 * members.len() as f64 / population;
        let base = exact.floor() as usize;
        allocations.insert(label, base);
        assigned += base;
        remainders.push((label, exact - base as f64));
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    for (label, _) in remainders.into_iter().take(n - assigned) {
        *allocations.get_mut(label).unwrap() += 1;
    }

    let mut selected = Vec::with_capacity(n);
    for (label, members) in &strata {
        let take = allocations[label];
        if take == 0 {
            continue;
        }
        // independent stream per stratum: adding a stratum elsewhere
        // cannot perturb this one's picks
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(label));
        let mut pool = members.clone();
        for i in 0..take {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        selected.extend_from_slice(&pool[..take]);
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Chi-square goodness-of-fit verdict on a sample against its
/// population's label proportions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Representativeness {
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

pub fn representativeness_check(
    sample: &BTreeMap<String, usize>,
    population: &BTreeMap<String, usize>,
) -> Result<Representativeness, EvalError> {
    let sample_keys: BTreeSet<&String> = sample.keys().collect();
    let population_keys: BTreeSet<&String> = population.keys().collect();
    if sample_keys != population_keys {
        let diff: Vec<&str> = sample_keys
            .symmetric_difference(&population_keys)
            .map(|s| s.as_str())
            .collect();
        return Err(EvalError::CategoryMismatch(diff.join(", ")));
    }
    if sample.len() < 2 {
        return Err(EvalError::TooFewCategories);
    }
    if population.values().any(|&c| c == 0) {
        return Err(EvalError::CategoryMismatch(
            "population category with zero count".to_string(),
        ));
    }

    let sample_total: usize = sample.values().sum();
    let population_total: usize = population.values().sum();
    let mut statistic = 0f64;
    for (label, &observed) in sample {
        let expected =
            sample_total as f64 * population[label] as f64 / population_total as f64;
        let diff = observed as f64 - expected;
        statistic += diff * diff / expected;
    }
    let df = (sample.len() - 1) as f64;
    let chi = ChiSquared::new(df).expect("df >= 1");
    let p_value = 1.0 - chi.cdf(statistic);
    Ok(Representativeness {
        statistic,
        p_value,
        pass: p_value > 0.05,
    })
}

// file formats -------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionLine {
    pub query_id: String,
    pub sql: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldLine {
    pub query_id: String,
    pub sql: String,
    #[serde(default)]
    pub difficulty: Option<String>,
    #[serde(default)]
    pub gold_tables: Option<Vec<String>>,
    /// natural-language question; needed only when predictions are to be
    /// generated rather than supplied
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, EvalError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| EvalError::Parse(e.to_string())))
        .collect()
}

pub fn parse_prediction_lines(text: &str) -> Result<Vec<PredictionLine>, EvalError> {
    parse_jsonl(text)
}

pub fn parse_gold_lines(text: &str) -> Result<Vec<GoldLine>, EvalError> {
    parse_jsonl(text)
}
