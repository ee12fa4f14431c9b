//! One function per subcommand. Commands print their primary result to
//! stdout, side notes to stderr, and drop artifact files into the run
//! directory.

use std::collections::BTreeMap;
use std::fs;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use dynaquery::catalog::{render_schema_context, RenderStyle};
use dynaquery::db::CellValue;
use dynaquery::decision::{Decider, DescriptiveDecider, RemoteDecider, RuleBasedDecider};
use dynaquery::evalkit::{
    self, EvalRecord, EvalReport, TimingOptions,
};
use dynaquery::forensics::{
    classify_failure, failure_report, unknown_identifier_in, FailureCategory, FailureFinding,
};
use dynaquery::mmp;
use dynaquery::ragbase::{self, EmbedderChoice, HttpEmbedder};
use dynaquery::sile::{self, IntentHint, NLQuery};
use dynaquery::sqp::{self, ResultSet};

use crate::config::Settings;
use crate::{AskArgs, DeciderKind, EvalArgs, ForensicsArgs, IntrospectArgs, Pipeline, PlanArgs, SampleArgs};

pub fn introspect(settings: &Settings, args: &IntrospectArgs) -> Result<()> {
    let db = settings.open_db()?;
    let schema = settings.schema(&db)?;
    for violation in schema.invariant_violations() {
        eprintln!("warning: {violation}");
    }
    print!("{}", render_schema_context(&schema, RenderStyle::Full));
    if let Some(path) = &args.cache {
        fs::write(path, serde_json::to_string_pretty(&schema)?)
            .with_context(|| format!("write schema cache {}", path.display()))?;
        eprintln!("cache: {}", path.display());
    }
    Ok(())
}

pub fn plan(settings: &Settings, args: &PlanArgs) -> Result<()> {
    let db = settings.open_db()?;
    let schema = settings.schema(&db)?;
    let gateway = settings.gateway()?;
    let query = NLQuery::new(&args.question)?;
    let plan = sile::plan(&query, &schema, &gateway)?;
    let pruned = sile::prune_schema(&schema, &plan)?;

    let baseline = if args.baseline {
        let embedder = match &settings.embed_url {
            Some(url) => EmbedderChoice::Http(HttpEmbedder::new(url, None)),
            None => EmbedderChoice::Lexical,
        };
        let index = ragbase::index_schema(&schema, embedder)?;
        let retrieved = ragbase::retrieve(&query, &index, settings.retrieval_k)?;
        Some(retrieved.tables().iter().map(|t| t.to_string()).collect::<Vec<_>>())
    } else {
        None
    };

    let mut summary = serde_json::json!({
        "plan": plan,
        "pruned_tables": pruned.table_names(),
        "diagnostics": pruned.diagnostics,
    });
    if let Some(tables) = baseline {
        summary["retrieval_baseline"] = serde_json::json!(tables);
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

pub fn ask(settings: &Settings, args: &AskArgs) -> Result<()> {
    let db = settings.open_db()?;
    let schema = settings.schema(&db)?;
    let gateway = settings.gateway()?;
    let run_dir = settings.ensure_run_dir()?;

    match args.pipeline {
        Pipeline::Sql => {
            let query = NLQuery::new(&args.question)?.with_hint(IntentHint::Structured);
            let options = sqp::SqpOptions {
                timeout: settings.timeout,
            };
            let outcome = sqp::run_with(&query, &schema, &db, &gateway, &options)?;
            print!("{}", render_rows(&outcome.rows));
            println!("{} rows", outcome.rows.len());
            let path = run_dir.join("sql_report.json");
            fs::write(&path, serde_json::to_string_pretty(&outcome.report)?)?;
            eprintln!("report: {}", path.display());
        }
        Pipeline::Mm => {
            let query = NLQuery::new(&args.question)?.with_hint(IntentHint::Multimodal);
            let decider: Box<dyn Decider + '_> = match args.decider {
                DeciderKind::Rule => Box::new(RuleBasedDecider { gateway: &gateway }),
                DeciderKind::Descriptive => Box::new(DescriptiveDecider { gateway: &gateway }),
                DeciderKind::Remote => Box::new(RemoteDecider {
                    endpoint: settings.classifier_url.clone().context(
                        "remote decider needs --classifier-url or DQ_CLASSIFIER_URL",
                    )?,
                }),
            };
            let options = mmp::MmpOptions {
                timeout: Some(settings.timeout),
                shuffle_seed: Some(settings.seed),
                ..Default::default()
            };
            let outcome = mmp::run_with(&query, &schema, &db, &gateway, decider.as_ref(), &options)?;
            print!("{}", render_rows(&outcome.rows));
            println!("{} rows", outcome.rows.len());
            let path = run_dir.join("mm_report.json");
            fs::write(&path, serde_json::to_string_pretty(&outcome.report)?)?;
            eprintln!("report: {}", path.display());
        }
    }
    Ok(())
}

// difficulty for stratification: the label on the line, else the
// classifier's, else a shared bucket
fn difficulty_labels(gold: &[evalkit::GoldLine]) -> Vec<String> {
    gold.iter()
        .map(|line| match &line.difficulty {
            Some(label) => label.clone(),
            None => evalkit::classify_hardness(&line.sql)
                .map(|l| l.as_str().to_string())
                .unwrap_or_else(|_| "unlabeled".to_string()),
        })
        .collect()
}

fn write_manifest(
    settings: &Settings,
    gold: &[evalkit::GoldLine],
    labels: &[String],
    picked: &[usize],
) -> Result<()> {
    let run_dir = settings.ensure_run_dir()?;
    let mut manifest = String::new();
    for &index in picked {
        manifest.push_str(
            &serde_json::json!({
                "query_id": gold[index].query_id,
                "difficulty": labels[index],
            })
            .to_string(),
        );
        manifest.push('\n');
    }
    let path = run_dir.join("sample_manifest.jsonl");
    fs::write(&path, manifest)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

pub fn eval(settings: &Settings, args: &EvalArgs) -> Result<()> {
    if args.pred.is_none() && !args.generate {
        bail!("eval needs --pred <file> or --generate");
    }
    let db = settings.open_db()?;
    let gold_text = fs::read_to_string(&args.gold)
        .with_context(|| format!("read gold file {}", args.gold.display()))?;
    let gold = evalkit::parse_gold_lines(&gold_text)?;
    if gold.is_empty() {
        bail!("gold file has no entries");
    }
    let labels = difficulty_labels(&gold);

    let chosen: Vec<usize> = match args.sample {
        Some(n) => {
            let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            let picked = evalkit::stratified_sample(&refs, n, settings.seed)?;
            write_manifest(settings, &gold, &labels, &picked)?;
            picked
        }
        None => (0..gold.len()).collect(),
    };

    // predictions arrive from a file, or the structured pipeline makes
    // them; a per-query failure is a recorded miss, never fatal
    let mut predictions: BTreeMap<String, Result<String, String>> = BTreeMap::new();
    if let Some(path) = &args.pred {
        let text = fs::read_to_string(path)
            .with_context(|| format!("read predictions file {}", path.display()))?;
        for line in evalkit::parse_prediction_lines(&text)? {
            predictions.insert(line.query_id, Ok(line.sql));
        }
    } else {
        let schema = settings.schema(&db)?;
        let gateway = settings.gateway()?;
        let options = sqp::SqpOptions {
            timeout: settings.timeout,
        };
        for &index in &chosen {
            let line = &gold[index];
            let question = line.question.as_deref().with_context(|| {
                format!("gold line `{}` has no question; generate mode needs one", line.query_id)
            })?;
            let query = NLQuery::new(question)?.with_hint(IntentHint::Structured);
            let produced = match sqp::run_with(&query, &schema, &db, &gateway, &options) {
                Ok(outcome) => Ok(outcome.report.sanitized_sql),
                Err(error) => Err(error.to_string()),
            };
            predictions.insert(line.query_id.clone(), produced);
        }
    }

    let timing = TimingOptions {
        repeats: if args.ves { 5 } else { 1 },
    };
    let dialect = db.dialect();
    let mut records = Vec::with_capacity(chosen.len());
    for &index in &chosen {
        let line = &gold[index];
        let difficulty = Some(labels[index].clone());
        // the read-only guard extends to the harness: nothing reaches the
        // engine unsanitized, gold queries included
        let gold_sql = sqp::sanitize(&line.sql, dialect)
            .map_err(|e| anyhow!("gold query `{}` rejected: {e}", line.query_id))?;
        let record = match predictions.get(&line.query_id) {
            None => EvalRecord::incorrect(
                &line.query_id,
                difficulty,
                "",
                &gold_sql.text,
                Some("no prediction".to_string()),
            ),
            Some(Err(message)) => EvalRecord::incorrect(
                &line.query_id,
                difficulty,
                "",
                &gold_sql.text,
                Some(message.clone()),
            ),
            Some(Ok(pred)) => match sqp::sanitize(pred, dialect) {
                Err(e) => EvalRecord::incorrect(
                    &line.query_id,
                    difficulty,
                    pred,
                    &gold_sql.text,
                    Some(e.to_string()),
                ),
                Ok(pred_sql) => evalkit::evaluate_pair(
                    &db,
                    &line.query_id,
                    difficulty.as_deref(),
                    &pred_sql.text,
                    &gold_sql.text,
                    &timing,
                )?,
            },
        };
        records.push(record);
    }

    let report = EvalReport::from_records(records)?;
    let table = evalkit::render_report_table(&report);
    print!("{table}");

    let run_dir = settings.ensure_run_dir()?;
    let json_path = run_dir.join("eval_report.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    fs::write(run_dir.join("eval_report.txt"), &table)?;
    eprintln!("report: {}", json_path.display());
    Ok(())
}

pub fn sample(settings: &Settings, args: &SampleArgs) -> Result<()> {
    let gold_text = fs::read_to_string(&args.gold)
        .with_context(|| format!("read gold file {}", args.gold.display()))?;
    let gold = evalkit::parse_gold_lines(&gold_text)?;
    if gold.is_empty() {
        bail!("gold file has no entries");
    }
    let labels = difficulty_labels(&gold);
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let picked = evalkit::stratified_sample(&refs, args.size, settings.seed)?;
    write_manifest(settings, &gold, &labels, &picked)?;
    for &index in &picked {
        println!("{}", gold[index].query_id);
    }

    if args.check {
        let mut population: BTreeMap<String, usize> = BTreeMap::new();
        for label in &labels {
            *population.entry(label.clone()).or_default() += 1;
        }
        // zero-filled so the category sets line up even when a stratum
        // drew no seats
        let mut sample_counts: BTreeMap<String, usize> =
            population.keys().map(|k| (k.clone(), 0)).collect();
        for &index in &picked {
            *sample_counts.get_mut(&labels[index]).expect("same labels") += 1;
        }
        let verdict = evalkit::representativeness_check(&sample_counts, &population)?;
        println!(
            "representativeness: statistic {:.6}, p {:.4}, {}",
            verdict.statistic,
            verdict.p_value,
            if verdict.pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct StoredReport {
    records: Vec<EvalRecord>,
}

pub fn forensics(settings: &Settings, args: &ForensicsArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report)
        .with_context(|| format!("read eval report {}", args.report.display()))?;
    let stored: StoredReport =
        serde_json::from_str(&text).context("parse eval report JSON")?;
    let failures: Vec<&EvalRecord> = stored.records.iter().filter(|r| !r.correct).collect();
    if failures.is_empty() {
        println!("no failures");
        return Ok(());
    }

    let db = settings.open_db()?;
    let schema = settings.schema(&db)?;
    let mut findings = Vec::with_capacity(failures.len());
    for record in failures {
        // an engine error naming an unknown identifier is the strongest
        // hallucination signal; otherwise classify from the ASTs
        let from_error = record
            .error
            .as_deref()
            .and_then(|message| unknown_identifier_in(message, &schema));
        let finding = match from_error {
            Some(ident) => FailureFinding {
                query_id: record.query_id.clone(),
                category: FailureCategory::SchemaHallucination,
                evidence: vec![ident],
            },
            None => classify_failure(
                &record.query_id,
                &record.predicted_sql,
                &record.gold_sql,
                &schema,
            )?,
        };
        findings.push(finding);
    }

    let distribution = failure_report(&findings)?;
    print!("{distribution}");

    let run_dir = settings.ensure_run_dir()?;
    let mut lines = String::new();
    for finding in &findings {
        lines.push_str(&serde_json::to_string(finding)?);
        lines.push('\n');
    }
    fs::write(run_dir.join("findings.jsonl"), lines)?;
    fs::write(
        run_dir.join("failure_distribution.json"),
        serde_json::to_string_pretty(&distribution)?,
    )?;
    eprintln!("findings: {}", run_dir.join("findings.jsonl").display());
    Ok(())
}

fn cell_text(value: &CellValue) -> String {
    match value {
        CellValue::Null => String::new(),
        CellValue::Int(i) => i.to_string(),
        CellValue::Float(f) => f.to_string(),
        CellValue::Text(t) => t.clone(),
        CellValue::Blob(b) => format!("<blob {} bytes>", b.len()),
    }
}

fn render_rows(rows: &ResultSet) -> String {
    if rows.columns.is_empty() {
        return String::new();
    }
    let body: Vec<Vec<String>> = rows
        .rows
        .iter()
        .map(|row| row.iter().map(cell_text).collect())
        .collect();
    let mut widths: Vec<usize> = rows.columns.iter().map(|c| c.chars().count()).collect();
    for row in &body {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let render_line = |cells: &[String], out: &mut String| {
        let mut first = true;
        for (cell, width) in cells.iter().zip(&widths) {
            if !first {
                out.push_str("  ");
            }
            out.push_str(&format!("{cell:<width$}"));
            first = false;
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    let header: Vec<String> = rows.columns.clone();
    render_line(&header, &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    render_line(&rule, &mut out);
    for row in &body {
        render_line(row, &mut out);
    }
    out
}
