//! Retrieval-baseline schema linker.
//!
//! The schema is chunked one table per document, each chunk is embedded,
//! and a question retrieves the top-k tables by cosine similarity. Two
//! embedders plug in: a live HTTP endpoint, and a deterministic lexical
//! fallback (bag of words plus character trigrams) that keeps tests and
//! offline runs free of network dependence.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::{render_table_block, RenderStyle, SchemaModel};
use crate::sile::NLQuery;

#[derive(Debug, Clone, Serialize)]
pub struct SchemaChunk {
    pub table: String,
    pub text: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalResult {
    /// (table, score), scores non-increasing, tables unique.
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

impl RetrievalResult {
    pub fn tables(&self) -> Vec<&str> {
        self.ranked.iter().map(|(t, _)| t.as_str()).collect()
    }
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("schema has no tables to index")]
    EmptySchema,
    #[error("retrieval depth k must be at least 1")]
    BadK,
    #[error("embedding backend failure: {0}")]
    Embed(String),
    #[error("embedding dimension mismatch: index {index}, query {query}")]
    Dimension { index: usize, query: usize },
}

// lexical fallback ----------------------------------------------------------

fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    for word in lowered.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        tokens.push(word.to_string());
        // subword trigrams let "image_url" meet "images" halfway
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > 3 {
            for window in chars.windows(3) {
                tokens.push(window.iter().collect());
            }
        }
    }
    tokens
}

#[derive(Debug, Clone)]
struct Vocabulary {
    terms: BTreeMap<String, usize>,
}

impl Vocabulary {
    fn fit(texts: &[&str]) -> Vocabulary {
        let mut terms = BTreeMap::new();
        for text in texts {
            for token in tokenize(text) {
                let next = terms.len();
                terms.entry(token).or_insert(next);
            }
        }
        Vocabulary { terms }
    }

    fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.terms.len()];
        for token in tokenize(text) {
            if let Some(&i) = self.terms.get(&token) {
                v[i] += 1.0;
            }
        }
        normalize(&mut v);
        v
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// http embedder -------------------------------------------------------------

/// Client for an embedding endpoint taking `{input: [text]}` and returning
/// `{data: [{embedding: [float]}]}` in input order.
pub struct HttpEmbedder {
    url: String,
    model: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpEmbedder")
            .field("url", &self.url)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: Option<String>) -> HttpEmbedder {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpEmbedder {
            url: url.into(),
            model,
            agent,
        }
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, RagError> {
        #[derive(serde::Deserialize)]
        struct EmbedResponse {
            data: Vec<EmbedRow>,
        }
        #[derive(serde::Deserialize)]
        struct EmbedRow {
            embedding: Vec<f64>,
        }
        let mut payload = serde_json::json!({ "input": texts });
        if let Some(model) = &self.model {
            payload["model"] = serde_json::Value::String(model.clone());
        }
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&payload)
            .map_err(|e| RagError::Embed(e.to_string()))?;
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RagError::Embed(format!("malformed embedding body: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(RagError::Embed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|row| {
                let mut v = row.embedding;
                normalize(&mut v);
                v
            })
            .collect())
    }
}

/// Which embedding backend to index with.
pub enum EmbedderChoice {
    /// Deterministic bag-of-subwords; no network.
    Lexical,
    Http(HttpEmbedder),
}

#[derive(Debug)]
enum Scorer {
    Lexical(Vocabulary),
    Http(HttpEmbedder),
}

/// Immutable retrieval index: one embedded chunk per table.
#[derive(Debug)]
pub struct ChunkIndex {
    chunks: Vec<SchemaChunk>,
    dimension: usize,
    scorer: Scorer,
}

impl ChunkIndex {
    pub fn chunks(&self) -> &[SchemaChunk] {
        &self.chunks
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }
}

/// Build the index: render each table to its own chunk and embed it.
pub fn index_schema(schema: &SchemaModel, embedder: EmbedderChoice) -> Result<ChunkIndex, RagError> {
    if schema.tables.is_empty() {
        return Err(RagError::EmptySchema);
    }
    let texts: Vec<String> = schema
        .tables
        .iter()
        .map(|t| render_table_block(t, RenderStyle::Full))
        .collect();
    let text_refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();

    let (vectors, scorer) = match embedder {
        EmbedderChoice::Lexical => {
            let vocab = Vocabulary::fit(&text_refs);
            let vectors: Vec<Vec<f64>> = text_refs.iter().map(|t| vocab.vector(t)).collect();
            (vectors, Scorer::Lexical(vocab))
        }
        EmbedderChoice::Http(embedder) => {
            let vectors = embedder.embed(&text_refs)?;
            (vectors, Scorer::Http(embedder))
        }
    };

    let dimension = vectors.first().map(|v| v.len()).unwrap_or(0);
    for v in &vectors {
        if v.len() != dimension {
            return Err(RagError::Dimension {
                index: dimension,
                query: v.len(),
            });
        }
    }
    let chunks = schema
        .tables
        .iter()
        .zip(texts)
        .zip(vectors)
        .map(|((table, text), vector)| SchemaChunk {
            table: table.name.clone(),
            text,
            vector,
        })
        .collect();
    Ok(ChunkIndex {
        chunks,
        dimension,
        scorer,
    })
}

/// Top-k tables for the question by cosine similarity; ties break by table
/// name ascending so results are stable.
pub fn retrieve(query: &NLQuery, index: &ChunkIndex, k: usize) -> Result<RetrievalResult, RagError> {
    if k == 0 {
        return Err(RagError::BadK);
    }
    if index.is_empty() {
        return Err(RagError::EmptySchema);
    }
    let query_vector = match &index.scorer {
        Scorer::Lexical(vocab) => vocab.vector(&query.text),
        Scorer::Http(embedder) => embedder
            .embed(&[query.text.as_str()])?
            .into_iter()
            .next()
            .expect("one embedding for one input"),
    };
    if query_vector.len() != index.dimension {
        return Err(RagError::Dimension {
            index: index.dimension,
            query: query_vector.len(),
        });
    }
    let mut ranked: Vec<(String, f64)> = index
        .chunks
        .iter()
        .map(|c| (c.table.clone(), dot(&query_vector, &c.vector)))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(k.min(index.len()));
    Ok(RetrievalResult { ranked, k })
}
