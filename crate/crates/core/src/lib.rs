//! A self-adapting natural-language interface over relational databases,
//! including databases whose rows link out to multimodal assets such as
//! product images or document files.
//!
//! The crate is organized around two query pipelines that share a planning
//! front end:
//!
//! * [`sqp`] answers structured questions by generating, sanitizing, and
//!   executing a single read-only SQL statement.
//! * [`mmp`] answers questions that mix structured constraints with visual
//!   or semantic ones: it pushes every structured constraint into one
//!   filtered join, then reasons over the surviving records' linked assets
//!   one record at a time.
//!
//! Supporting modules:
//!
//! * [`catalog`] introspects a live database into an immutable [`catalog::SchemaModel`]
//!   and can merge a human-authored semantic description file into it.
//! * [`sile`] plans a query: one model call over the full rendered schema
//!   yields a base table plus join tables, validated and then used to prune
//!   the schema before any generation prompt is built.
//! * [`modelgate`] is the single chokepoint for model traffic, with live,
//!   record, and replay modes; replay makes whole pipeline runs
//!   byte-deterministic.
//! * [`ragbase`] is the retrieval baseline: schema chunks ranked against the
//!   question, with a deterministic lexical embedder for offline use.
//! * [`decision`] maps (question, rationale) to ACCEPT / RECOMMEND / REJECT.
//! * [`evalkit`] implements execution accuracy, efficiency scoring, linking
//!   precision/recall, difficulty classification, and stratified sampling.
//! * [`forensics`] classifies failed predictions into a five-way taxonomy
//!   by comparing predicted and gold SQL ASTs.

pub mod catalog;
pub mod db;
pub mod decision;
pub mod evalkit;
pub mod forensics;
pub mod mmp;
pub mod modelgate;
pub mod prompt;
pub mod ragbase;
pub mod sile;
pub mod sqlast;
pub mod sqp;
