//! Query planning over an introspected schema.
//!
//! One chain-of-thought completion over the full rendered schema yields a
//! machine-readable plan block naming a base table and join tables. The
//! plan is validated against the schema, repaired at most once, and then
//! used to cut the schema down to exactly the planned tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{render_schema_context, RenderStyle, SchemaModel};
use crate::modelgate::{GatewayError, ModelGateway};
use crate::prompt;

/// Caller-supplied routing hint. Routing is never inferred from the text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentHint {
    Structured,
    Multimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NLQuery {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent_hint: Option<IntentHint>,
}

impl NLQuery {
    pub fn new(text: impl Into<String>) -> Result<NLQuery, PlanError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PlanError::EmptyQuery);
        }
        Ok(NLQuery {
            text,
            intent_hint: None,
        })
    }

    pub fn with_hint(mut self, hint: IntentHint) -> NLQuery {
        self.intent_hint = Some(hint);
        self
    }
}

/// A validated table selection: the base table whose rows form the answer,
/// plus the tables that must be joined in to reach the constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPlan {
    pub base_table: String,
    pub join_tables: Vec<String>,
    pub reasoning: String,
    pub raw_model_output: String,
    pub template_id: String,
    pub repaired: bool,
}

impl QueryPlan {
    /// Hand-built plan for tests and fixtures; skips the model entirely.
    pub fn manual(base_table: impl Into<String>, join_tables: &[&str]) -> QueryPlan {
        QueryPlan {
            base_table: base_table.into(),
            join_tables: join_tables.iter().map(|s| s.to_string()).collect(),
            reasoning: String::new(),
            raw_model_output: String::new(),
            template_id: "manual".to_string(),
            repaired: false,
        }
    }

    /// Base table first, then join tables in plan order.
    pub fn tables(&self) -> Vec<String> {
        let mut all = Vec::with_capacity(1 + self.join_tables.len());
        all.push(self.base_table.clone());
        all.extend(self.join_tables.iter().cloned());
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UnknownTable,
    Duplicate,
    BaseInJoins,
}

impl ViolationKind {
    fn as_str(self) -> &'static str {
        match self {
            ViolationKind::UnknownTable => "unknown_table",
            ViolationKind::Duplicate => "duplicate",
            ViolationKind::BaseInJoins => "base_in_joins",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanViolation {
    pub kind: ViolationKind,
    pub table: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.as_str(), self.table)
    }
}

fn violations_text(violations: &[PlanViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("question text is empty")]
    EmptyQuery,
    #[error("schema has no tables")]
    EmptySchema,
    #[error("model output has no usable plan block after repair: {0}")]
    Unparseable(String),
    #[error("plan rejected after repair: {}", violations_text(.0))]
    Rejected(Vec<PlanViolation>),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A schema restricted to exactly the plan's tables. Foreign keys survive
/// only when both endpoints are retained; everything dropped is noted.
#[derive(Debug, Clone, Serialize)]
pub struct PrunedSchema {
    pub model: SchemaModel,
    pub base_table: String,
    pub join_tables: Vec<String>,
    pub diagnostics: Vec<PruneDiagnostic>,
}

impl PrunedSchema {
    pub fn table_names(&self) -> Vec<&str> {
        self.model.table_names()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PruneDiagnostic {
    /// A foreign key on a retained table pointing outside the retained set.
    DroppedEdge {
        table: String,
        referenced: String,
        columns: Vec<String>,
    },
    /// An unretained table adjacent to two or more retained tables: the
    /// plan may be missing the link table that connects them.
    BridgeCandidate { table: String, connects: Vec<String> },
}

impl fmt::Display for PruneDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneDiagnostic::DroppedEdge {
                table,
                referenced,
                columns,
            } => write!(
                f,
                "dropped foreign key {}({}) -> {}",
                table,
                columns.join(", "),
                referenced
            ),
            PruneDiagnostic::BridgeCandidate { table, connects } => write!(
                f,
                "table {} connects retained tables {} and was not selected",
                table,
                connects.join(", ")
            ),
        }
    }
}

/// Check a plan against a schema. An empty list means the plan is valid.
pub fn validate_plan(plan: &QueryPlan, schema: &SchemaModel) -> Vec<PlanViolation> {
    let mut violations = Vec::new();
    if schema.table(&plan.base_table).is_none() {
        violations.push(PlanViolation {
            kind: ViolationKind::UnknownTable,
            table: plan.base_table.clone(),
        });
    }
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for join in &plan.join_tables {
        let lower = join.to_lowercase();
        if schema.table(join).is_none() {
            violations.push(PlanViolation {
                kind: ViolationKind::UnknownTable,
                table: join.clone(),
            });
        }
        if lower == plan.base_table.to_lowercase() {
            violations.push(PlanViolation {
                kind: ViolationKind::BaseInJoins,
                table: join.clone(),
            });
        }
        if !seen.insert(lower) {
            violations.push(PlanViolation {
                kind: ViolationKind::Duplicate,
                table: join.clone(),
            });
        }
    }
    violations
}

/// Restrict a schema to the plan's tables. Errors when the plan does not
/// validate against the schema.
pub fn prune_schema(schema: &SchemaModel, plan: &QueryPlan) -> Result<PrunedSchema, PlanError> {
    let violations = validate_plan(plan, schema);
    if !violations.is_empty() {
        return Err(PlanError::Rejected(violations));
    }

    // canonical casing comes from the catalog, not the plan text
    let canonical = |name: &str| schema.table(name).expect("validated").name.clone();
    let base_table = canonical(&plan.base_table);
    let join_tables: Vec<String> = plan.join_tables.iter().map(|j| canonical(j)).collect();
    let retained: BTreeSet<String> = plan
        .tables()
        .iter()
        .map(|t| canonical(t).to_lowercase())
        .collect();
    let is_retained = |name: &str| retained.contains(&name.to_lowercase());

    let mut diagnostics = Vec::new();
    let mut tables = Vec::new();
    for table in &schema.tables {
        if !is_retained(&table.name) {
            continue;
        }
        let mut kept = table.clone();
        kept.foreign_keys.retain(|fk| {
            if is_retained(&fk.referenced_table) {
                return true;
            }
            diagnostics.push(PruneDiagnostic::DroppedEdge {
                table: table.name.clone(),
                referenced: fk.referenced_table.clone(),
                columns: fk.local_columns.clone(),
            });
            false
        });
        tables.push(kept);
    }

    // an unretained table touching >= 2 retained tables is a plausible
    // missing link between them; worth surfacing, never fatal
    let mut adjacency: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for table in &schema.tables {
        for fk in &table.foreign_keys {
            let target = match schema.table(&fk.referenced_table) {
                Some(t) => t.name.clone(),
                None => continue,
            };
            match (is_retained(&table.name), is_retained(&target)) {
                (true, false) => {
                    adjacency.entry(target).or_default().insert(table.name.clone());
                }
                (false, true) => {
                    adjacency.entry(table.name.clone()).or_default().insert(target);
                }
                _ => {}
            }
        }
    }
    for (outside, connects) in adjacency {
        if connects.len() >= 2 {
            diagnostics.push(PruneDiagnostic::BridgeCandidate {
                table: outside,
                connects: connects.into_iter().collect(),
            });
        }
    }

    Ok(PrunedSchema {
        model: SchemaModel {
            database_name: schema.database_name.clone(),
            tables,
        },
        base_table,
        join_tables,
        diagnostics,
    })
}

// plan block parsing -------------------------------------------------------

enum Problem {
    Parse(String),
    Violations(Vec<PlanViolation>),
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Problem::Parse(msg) => write!(f, "{msg}"),
            Problem::Violations(v) => write!(f, "{}", violations_text(v)),
        }
    }
}

fn clean_name(raw: &str) -> String {
    raw.trim()
        .trim_matches(|c| c == '`' || c == '"' || c == '\'')
        .trim()
        .to_string()
}

fn parse_plan_block(text: &str) -> Result<(String, String, Vec<String>), String> {
    let (prefix, block) = prompt::extract_fenced(text, "plan")
        .ok_or_else(|| "no fenced plan block found".to_string())?;
    let mut base: Option<String> = None;
    let mut joins: Vec<String> = Vec::new();
    for line in block.lines() {
        let line = line.trim().trim_start_matches('-').trim();
        if let Some(value) = line.strip_prefix("base_table:") {
            base = Some(clean_name(value));
        } else if let Some(value) = line.strip_prefix("join_tables:") {
            joins = value
                .split(',')
                .map(clean_name)
                .filter(|name| !name.is_empty() && !name.eq_ignore_ascii_case("none"))
                .collect();
        }
    }
    let base = base
        .filter(|b| !b.is_empty())
        .ok_or_else(|| "plan block has no base_table line".to_string())?;
    Ok((prefix.trim().to_string(), base, joins))
}

fn interpret(text: &str, schema: &SchemaModel) -> Result<QueryPlan, Problem> {
    let (reasoning, raw_base, raw_joins) = parse_plan_block(text).map_err(Problem::Parse)?;
    // resolve to catalog casing where possible; unknown names survive
    // as-is so validation can report them
    let resolve = |name: &str| {
        schema
            .table(name)
            .map(|t| t.name.clone())
            .unwrap_or_else(|| name.to_string())
    };
    let base_table = resolve(&raw_base);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut join_tables = Vec::new();
    for raw in raw_joins {
        let join = resolve(&raw);
        if join.eq_ignore_ascii_case(&base_table) {
            continue; // base restated as a join is redundant, not wrong
        }
        if seen.insert(join.to_lowercase()) {
            join_tables.push(join);
        }
    }
    let plan = QueryPlan {
        base_table,
        join_tables,
        reasoning,
        raw_model_output: text.to_string(),
        template_id: String::new(),
        repaired: false,
    };
    let violations = validate_plan(&plan, schema);
    if violations.is_empty() {
        Ok(plan)
    } else {
        Err(Problem::Violations(violations))
    }
}

/// Produce a validated plan for the question over the full schema. The
/// model sees every table; narrowing happens afterwards in [`prune_schema`].
/// One repair round-trip is attempted when the first completion fails to
/// parse or validate.
pub fn plan(
    query: &NLQuery,
    schema: &SchemaModel,
    gateway: &ModelGateway,
) -> Result<QueryPlan, PlanError> {
    if query.text.trim().is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    if schema.tables.is_empty() {
        return Err(PlanError::EmptySchema);
    }
    let rendered = render_schema_context(schema, RenderStyle::Full);
    let request = prompt::PLAN.request(
        gateway.model_id(),
        &[("schema", &rendered), ("question", &query.text)],
    );
    let first = gateway.complete(&request)?.text;
    let problem = match interpret(&first, schema) {
        Ok(mut plan) => {
            plan.template_id = prompt::PLAN.id.to_string();
            return Ok(plan);
        }
        Err(problem) => problem,
    };

    let repair = prompt::PLAN_REPAIR.request(
        gateway.model_id(),
        &[
            ("schema", &rendered),
            ("question", &query.text),
            ("previous", &first),
            ("error", &problem.to_string()),
        ],
    );
    let second = gateway.complete(&repair)?.text;
    match interpret(&second, schema) {
        Ok(mut plan) => {
            plan.template_id = prompt::PLAN_REPAIR.id.to_string();
            plan.repaired = true;
            Ok(plan)
        }
        Err(Problem::Parse(msg)) => Err(PlanError::Unparseable(msg)),
        Err(Problem::Violations(violations)) => Err(PlanError::Rejected(violations)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Column, ForeignKey, Table};
    use crate::modelgate::{
        AssetResolver, Backend, ModelResponse, ResolvedRequest,
    };
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn col(name: &str, ty: &str) -> Column {
        Column {
            name: name.to_string(),
            data_type: ty.to_string(),
            nullable: true,
            comment: None,
            modality: None,
        }
    }

    fn table(name: &str, cols: &[(&str, &str)], pk: &[&str]) -> Table {
        Table {
            name: name.to_string(),
            columns: cols.iter().map(|(n, t)| col(n, t)).collect(),
            primary_key: pk.iter().map(|s| s.to_string()).collect(),
            foreign_keys: Vec::new(),
            comment: None,
        }
    }

    fn fk(local: &str, table: &str, referenced: &str) -> ForeignKey {
        ForeignKey {
            local_columns: vec![local.to_string()],
            referenced_table: table.to_string(),
            referenced_columns: vec![referenced.to_string()],
        }
    }

    fn sample_schema() -> SchemaModel {
        let customers = table(
            "customers",
            &[("customer_id", "INTEGER"), ("name", "TEXT"), ("city", "TEXT")],
            &["customer_id"],
        );
        let mut orders = table(
            "orders",
            &[("order_id", "INTEGER"), ("customer_id", "INTEGER"), ("status", "TEXT")],
            &["order_id"],
        );
        orders.foreign_keys.push(fk("customer_id", "customers", "customer_id"));
        let products = table(
            "products",
            &[("product_id", "INTEGER"), ("name", "TEXT"), ("price", "REAL")],
            &["product_id"],
        );
        let mut order_items = table(
            "order_items",
            &[("order_id", "INTEGER"), ("product_id", "INTEGER"), ("quantity", "INTEGER")],
            &["order_id", "product_id"],
        );
        order_items.foreign_keys.push(fk("order_id", "orders", "order_id"));
        order_items.foreign_keys.push(fk("product_id", "products", "product_id"));
        let mut reviews = table(
            "reviews",
            &[("review_id", "INTEGER"), ("order_id", "INTEGER"), ("score", "INTEGER")],
            &["review_id"],
        );
        reviews.foreign_keys.push(fk("order_id", "orders", "order_id"));
        SchemaModel {
            database_name: "shop".to_string(),
            tables: vec![customers, orders, products, order_items, reviews],
        }
    }

    struct Script {
        responses: Mutex<VecDeque<String>>,
        calls: AtomicUsize,
    }

    impl Script {
        fn new(responses: &[&str]) -> Script {
            Script {
                responses: Mutex::new(responses.iter().map(|s| s.to_string()).collect()),
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Backend for Script {
        fn complete(&self, _request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let text = self
                .responses
                .lock()
                .unwrap()
                .pop_front()
                .expect("script exhausted");
            Ok(ModelResponse {
                text,
                usage: None,
                backend_id: self.id(),
            })
        }
        fn id(&self) -> String {
            "script".to_string()
        }
    }

    fn gateway_with(responses: &[&str]) -> ModelGateway {
        ModelGateway::live(Box::new(Script::new(responses)), AssetResolver::default())
    }

    fn query(text: &str) -> NLQuery {
        NLQuery::new(text).unwrap()
    }

    #[test]
    fn plan_parses_reasoning_and_block() {
        let gw = gateway_with(&[
            "The question concerns orders and their customers.\n```plan\nbase_table: orders\njoin_tables: customers\n```",
        ]);
        let p = plan(&query("orders by customer city"), &sample_schema(), &gw).unwrap();
        assert_eq!(p.base_table, "orders");
        assert_eq!(p.join_tables, vec!["customers"]);
        assert!(p.reasoning.contains("concerns orders"));
        assert_eq!(p.template_id, "plan.v1");
        assert!(!p.repaired);
    }

    #[test]
    fn plan_none_joins_and_casing_normalized() {
        let gw = gateway_with(&["```plan\nbase_table: PRODUCTS\njoin_tables: none\n```"]);
        let p = plan(&query("list products"), &sample_schema(), &gw).unwrap();
        assert_eq!(p.base_table, "products");
        assert!(p.join_tables.is_empty());
    }

    #[test]
    fn plan_dedupes_joins_and_drops_restated_base() {
        let gw = gateway_with(&[
            "```plan\nbase_table: orders\njoin_tables: orders, customers, Customers, reviews\n```",
        ]);
        let p = plan(&query("q"), &sample_schema(), &gw).unwrap();
        assert_eq!(p.base_table, "orders");
        assert_eq!(p.join_tables, vec!["customers", "reviews"]);
        assert!(validate_plan(&p, &sample_schema()).is_empty());
    }

    #[test]
    fn plan_repairs_unknown_table_once() {
        let gw = gateway_with(&[
            "```plan\nbase_table: orderz\njoin_tables: none\n```",
            "Corrected.\n```plan\nbase_table: orders\njoin_tables: none\n```",
        ]);
        let p = plan(&query("q"), &sample_schema(), &gw).unwrap();
        assert_eq!(p.base_table, "orders");
        assert!(p.repaired);
        assert_eq!(p.template_id, "plan_repair.v1");
        assert_eq!(gw.completions_served(), 2);
    }

    #[test]
    fn plan_gives_up_after_one_repair() {
        let gw = gateway_with(&[
            "```plan\nbase_table: orderz\njoin_tables: none\n```",
            "```plan\nbase_table: still_wrong\njoin_tables: none\n```",
        ]);
        let err = plan(&query("q"), &sample_schema(), &gw).unwrap_err();
        match err {
            PlanError::Rejected(violations) => {
                assert_eq!(violations[0].kind, ViolationKind::UnknownTable);
                assert_eq!(violations[0].table, "still_wrong");
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        assert_eq!(gw.completions_served(), 2);
    }

    #[test]
    fn plan_unparseable_after_repair() {
        let gw = gateway_with(&["no block at all", "still no block"]);
        let err = plan(&query("q"), &sample_schema(), &gw).unwrap_err();
        assert!(matches!(err, PlanError::Unparseable(_)));
    }

    #[test]
    fn plan_rejects_empty_schema() {
        let empty = SchemaModel {
            database_name: "void".into(),
            tables: vec![],
        };
        let gw = gateway_with(&[]);
        assert!(matches!(
            plan(&query("q"), &empty, &gw),
            Err(PlanError::EmptySchema)
        ));
    }

    #[test]
    fn plan_prompt_carries_the_full_schema() {
        use std::sync::Arc;
        struct Capture {
            prompt: Arc<Mutex<String>>,
        }
        impl Backend for Capture {
            fn complete(&self, request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
                *self.prompt.lock().unwrap() = request.joined_text();
                Ok(ModelResponse {
                    text: "```plan\nbase_table: orders\njoin_tables: none\n```".into(),
                    usage: None,
                    backend_id: self.id(),
                })
            }
            fn id(&self) -> String {
                "capture".into()
            }
        }
        let seen = Arc::new(Mutex::new(String::new()));
        let gw = ModelGateway::live(
            Box::new(Capture { prompt: seen.clone() }),
            AssetResolver::default(),
        );
        plan(&query("how many orders"), &sample_schema(), &gw).unwrap();
        let prompt_text = seen.lock().unwrap().clone();
        for name in ["customers", "orders", "products", "order_items", "reviews"] {
            assert!(prompt_text.contains(name), "schema table {name} missing");
        }
        assert!(prompt_text.contains("how many orders"));
    }

    #[test]
    fn validate_reports_each_violation_kind() {
        let p = QueryPlan::manual("orderz", &["orders", "orders", "orderz"]);
        let kinds: Vec<ViolationKind> = validate_plan(&p, &sample_schema())
            .iter()
            .map(|v| v.kind)
            .collect();
        assert!(kinds.contains(&ViolationKind::UnknownTable));
        assert!(kinds.contains(&ViolationKind::Duplicate));
        let p = QueryPlan::manual("orders", &["orders"]);
        let kinds: Vec<ViolationKind> = validate_plan(&p, &sample_schema())
            .iter()
            .map(|v| v.kind)
            .collect();
        assert_eq!(kinds, vec![ViolationKind::BaseInJoins]);
    }

    #[test]
    fn prune_keeps_only_plan_tables_and_inner_fks() {
        let plan = QueryPlan::manual("orders", &["customers"]);
        let pruned = prune_schema(&sample_schema(), &plan).unwrap();
        assert_eq!(pruned.table_names(), vec!["customers", "orders"]);
        let orders = pruned.model.table("orders").unwrap();
        assert_eq!(orders.foreign_keys.len(), 1);
        assert_eq!(orders.foreign_keys[0].referenced_table, "customers");
    }

    #[test]
    fn prune_with_all_tables_is_identity() {
        let schema = sample_schema();
        let plan = QueryPlan::manual(
            "orders",
            &["customers", "products", "order_items", "reviews"],
        );
        let pruned = prune_schema(&schema, &plan).unwrap();
        assert_eq!(pruned.model, schema);
        assert!(pruned.diagnostics.is_empty());
    }

    #[test]
    fn prune_drops_dangling_edge_and_flags_bridge() {
        // chain: shipments -> warehouses -> regions; plan skips the middle
        let regions = table("regions", &[("region_id", "INTEGER")], &["region_id"]);
        let mut warehouses = table(
            "warehouses",
            &[("warehouse_id", "INTEGER"), ("region_id", "INTEGER")],
            &["warehouse_id"],
        );
        warehouses.foreign_keys.push(fk("region_id", "regions", "region_id"));
        let mut shipments = table(
            "shipments",
            &[("shipment_id", "INTEGER"), ("warehouse_id", "INTEGER")],
            &["shipment_id"],
        );
        shipments.foreign_keys.push(fk("warehouse_id", "warehouses", "warehouse_id"));
        let schema = SchemaModel {
            database_name: "logistics".into(),
            tables: vec![regions, warehouses, shipments],
        };
        let plan = QueryPlan::manual("shipments", &["regions"]);
        let pruned = prune_schema(&schema, &plan).unwrap();
        assert_eq!(pruned.table_names(), vec!["regions", "shipments"]);
        for t in &pruned.model.tables {
            assert!(t.foreign_keys.is_empty(), "{} kept a dangling fk", t.name);
        }
        assert!(pruned.diagnostics.iter().any(|d| matches!(
            d,
            PruneDiagnostic::DroppedEdge { referenced, .. } if referenced == "warehouses"
        )));
        assert!(pruned.diagnostics.iter().any(|d| matches!(
            d,
            PruneDiagnostic::BridgeCandidate { table, connects }
                if table == "warehouses" && connects == &vec!["regions".to_string(), "shipments".to_string()]
        )));
    }

    #[test]
    fn prune_flags_unselected_link_table() {
        // order_items references both retained tables but was not planned
        let plan = QueryPlan::manual("orders", &["products"]);
        let pruned = prune_schema(&sample_schema(), &plan).unwrap();
        assert!(pruned.diagnostics.iter().any(|d| matches!(
            d,
            PruneDiagnostic::BridgeCandidate { table, .. } if table == "order_items"
        )));
    }

    #[test]
    fn prune_rejects_unvalidated_plan() {
        let plan = QueryPlan::manual("nope", &[]);
        assert!(matches!(
            prune_schema(&sample_schema(), &plan),
            Err(PlanError::Rejected(_))
        ));
    }

    #[test]
    fn prune_matches_independent_restriction() {
        // oracle: restrict tables and fks by hand, then compare renderings
        fn restrict(schema: &SchemaModel, keep: &[&str]) -> SchemaModel {
            let keep: BTreeSet<String> = keep.iter().map(|s| s.to_lowercase()).collect();
            SchemaModel {
                database_name: schema.database_name.clone(),
                tables: schema
                    .tables
                    .iter()
                    .filter(|t| keep.contains(&t.name.to_lowercase()))
                    .map(|t| {
                        let mut t = t.clone();
                        t.foreign_keys
                            .retain(|fk| keep.contains(&fk.referenced_table.to_lowercase()));
                        t
                    })
                    .collect(),
            }
        }
        let schema = sample_schema();
        let plan = QueryPlan::manual("order_items", &["orders", "products"]);
        let pruned = prune_schema(&schema, &plan).unwrap();
        let oracle = restrict(&schema, &["order_items", "orders", "products"]);
        assert_eq!(
            render_schema_context(&pruned.model, RenderStyle::Full),
            render_schema_context(&oracle, RenderStyle::Full)
        );
    }
}
