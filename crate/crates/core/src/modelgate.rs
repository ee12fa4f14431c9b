//! The single gateway through which every model call travels.
//!
//! Three modes share one code path: `live` forwards to an HTTP
//! chat-completion backend, `record` forwards and writes a transcript,
//! `replay` answers purely from a transcript. Requests are keyed by a
//! content-addressed fingerprint, so replay is insensitive to call order
//! and to anything except the actual prompt content.
//!
//! Asset references (image files, URLs, documents) are resolved by the
//! gateway itself and embedded into the outgoing request as content parts.
//! That choice is what makes the fingerprint content-addressed: two requests
//! naming the same path but with different bytes behind it are different
//! requests.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Media kind of an asset content part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaKind {
    Image,
    Document,
}

/// One element of a request's user content.
#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    /// URL or filesystem path, resolved by the gateway before sending.
    Asset { reference: String, kind: MediaKind },
}

/// A framework-issued model request. Temperature is pinned to 0.0; the
/// pipelines depend on reproducible completions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub system_prompt: String,
    pub user_content: Vec<ContentPart>,
    pub temperature: f64,
    pub model_id: String,
}

impl ModelRequest {
    pub fn new(system_prompt: impl Into<String>, model_id: impl Into<String>) -> ModelRequest {
        ModelRequest {
            system_prompt: system_prompt.into(),
            user_content: Vec::new(),
            temperature: 0.0,
            model_id: model_id.into(),
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> ModelRequest {
        self.user_content.push(ContentPart::Text(text.into()));
        self
    }

    pub fn with_asset(mut self, reference: impl Into<String>, kind: MediaKind) -> ModelRequest {
        self.user_content.push(ContentPart::Asset {
            reference: reference.into(),
            kind,
        });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A completion. An empty `text` is a valid response here; whether it is
/// acceptable is the caller's call.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Option<Usage>,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no transcript entry matches request fingerprint {fingerprint}")]
    Unmatched { fingerprint: String },
    #[error("transport failure talking to model backend: {0}")]
    Transport(String),
    #[error("model backend rejected credentials: {0}")]
    Auth(String),
    #[error("request payload over backend limit: {0}")]
    OverLimit(String),
    #[error("model backend error: {0}")]
    Backend(String),
    #[error("asset `{reference}` could not be resolved: {reason}")]
    Asset { reference: String, reason: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("transcript io: {0}")]
    TranscriptIo(String),
}

impl GatewayError {
    fn transient(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

/// A request after asset resolution: every part is literal content.
#[derive(Debug, Clone)]
pub struct ResolvedRequest {
    pub system_prompt: String,
    pub parts: Vec<ResolvedPart>,
    pub temperature: f64,
    pub model_id: String,
}

#[derive(Debug, Clone)]
pub enum ResolvedPart {
    Text(String),
    Asset {
        kind: MediaKind,
        media_type: String,
        bytes: Vec<u8>,
        digest: String,
        source: String,
    },
}

impl ResolvedRequest {
    /// Concatenation of all text parts; handy for scripted test backends.
    pub fn joined_text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ResolvedPart::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Stable digest over (system prompt, parts with assets replaced by
    /// their content digests, model id). Timing, temperature, and asset
    /// locations do not participate.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |tag: &str, data: &[u8]| {
            hasher.update(tag.as_bytes());
            hasher.update(data.len().to_le_bytes());
            hasher.update(data);
        };
        feed("model", self.model_id.as_bytes());
        feed("system", self.system_prompt.as_bytes());
        for part in &self.parts {
            match part {
                ResolvedPart::Text(t) => feed("text", t.as_bytes()),
                ResolvedPart::Asset { kind, digest, .. } => {
                    let tag = match kind {
                        MediaKind::Image => "image",
                        MediaKind::Document => "document",
                    };
                    feed(tag, digest.as_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Resolves asset references into bytes: local paths against an optional
/// root, http(s) URLs with a timeout and size cap.
pub struct AssetResolver {
    asset_root: Option<PathBuf>,
    fetch_timeout: Duration,
    max_bytes: u64,
}

impl Default for AssetResolver {
    fn default() -> Self {
        AssetResolver {
            asset_root: None,
            fetch_timeout: Duration::from_secs(10),
            max_bytes: 10 * 1024 * 1024,
        }
    }
}

impl AssetResolver {
    pub fn with_root(root: impl Into<PathBuf>) -> AssetResolver {
        AssetResolver {
            asset_root: Some(root.into()),
            ..AssetResolver::default()
        }
    }

    fn media_type(reference: &str, kind: MediaKind) -> String {
        let ext = reference.rsplit('.').next().unwrap_or("").to_lowercase();
        match kind {
            MediaKind::Image => match ext.as_str() {
                "jpg" | "jpeg" => "image/jpeg",
                "gif" => "image/gif",
                "webp" => "image/webp",
                "bmp" => "image/bmp",
                _ => "image/png",
            },
            MediaKind::Document => match ext.as_str() {
                "pdf" => "application/pdf",
                "md" => "text/markdown",
                _ => "text/plain",
            },
        }
        .to_string()
    }

    fn fetch(&self, reference: &str) -> Result<Vec<u8>, String> {
        if reference.starts_with("http://") || reference.starts_with("https://") {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(self.fetch_timeout))
                .build()
                .into();
            let mut resp = agent
                .get(reference)
                .call()
                .map_err(|e| format!("fetch failed: {e}"))?;
            return resp
                .body_mut()
                .with_config()
                .limit(self.max_bytes)
                .read_to_vec()
                .map_err(|e| format!("body read failed: {e}"));
        }
        let path = Path::new(reference);
        let full = if path.is_absolute() {
            path.to_path_buf()
        } else {
            match &self.asset_root {
                Some(root) => root.join(path),
                None => path.to_path_buf(),
            }
        };
        let bytes = fs::read(&full).map_err(|e| format!("read {}: {e}", full.display()))?;
        if bytes.len() as u64 > self.max_bytes {
            return Err(format!("asset exceeds {} byte cap", self.max_bytes));
        }
        Ok(bytes)
    }

    pub fn resolve(&self, request: &ModelRequest) -> Result<ResolvedRequest, GatewayError> {
        if request.user_content.is_empty() {
            return Err(GatewayError::Invalid(
                "request must carry at least one content part".into(),
            ));
        }
        if request.temperature != 0.0 {
            return Err(GatewayError::Invalid(format!(
                "framework requests are pinned to temperature 0.0, got {}",
                request.temperature
            )));
        }
        let mut parts = Vec::with_capacity(request.user_content.len());
        for part in &request.user_content {
            match part {
                ContentPart::Text(t) => parts.push(ResolvedPart::Text(t.clone())),
                ContentPart::Asset { reference, kind } => {
                    let bytes = self.fetch(reference).map_err(|reason| GatewayError::Asset {
                        reference: reference.clone(),
                        reason,
                    })?;
                    let digest = hex::encode(Sha256::digest(&bytes));
                    parts.push(ResolvedPart::Asset {
                        kind: *kind,
                        media_type: Self::media_type(reference, *kind),
                        bytes,
                        digest,
                        source: reference.clone(),
                    });
                }
            }
        }
        Ok(ResolvedRequest {
            system_prompt: request.system_prompt.clone(),
            parts,
            temperature: request.temperature,
            model_id: request.model_id.clone(),
        })
    }
}

/// Anything that can answer a resolved request.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ResolvedRequest) -> Result<ModelResponse, GatewayError>;
    fn id(&self) -> String;
}

/// Live chat-completion backend speaking the common JSON wire shape.
pub struct HttpBackend {
    pub url: String,
    pub api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> HttpBackend {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpBackend {
            url: url.into(),
            api_key,
            agent,
        }
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
        let content: Vec<serde_json::Value> = request
            .parts
            .iter()
            .map(|p| match p {
                ResolvedPart::Text(t) => serde_json::json!({"type": "text", "text": t}),
                ResolvedPart::Asset {
                    kind: MediaKind::Image,
                    media_type,
                    bytes,
                    ..
                } => serde_json::json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:{media_type};base64,{}", BASE64.encode(bytes))}
                }),
                ResolvedPart::Asset {
                    kind: MediaKind::Document,
                    bytes,
                    source,
                    ..
                } => serde_json::json!({
                    "type": "text",
                    "text": format!("[document {source}]\n{}", String::from_utf8_lossy(bytes))
                }),
            })
            .collect();
        let payload = serde_json::json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": content},
            ],
        });

        let mut builder = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let mut resp = builder.send_json(&payload).map_err(|e| match e {
            ureq::Error::StatusCode(401) | ureq::Error::StatusCode(403) => {
                GatewayError::Auth(e.to_string())
            }
            ureq::Error::StatusCode(413) => GatewayError::OverLimit(e.to_string()),
            ureq::Error::StatusCode(code) if code == 408 || code == 429 || code >= 500 => {
                GatewayError::Transport(e.to_string())
            }
            ureq::Error::StatusCode(_) => GatewayError::Backend(e.to_string()),
            other => GatewayError::Transport(other.to_string()),
        })?;

        let parsed: ChatCompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| GatewayError::Backend(format!("malformed completion body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        Ok(ModelResponse {
            text,
            usage: parsed.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            backend_id: format!("http:{}", self.url),
        })
    }

    fn id(&self) -> String {
        format!("http:{}", self.url)
    }
}

/// One transcript line: enough to replay and enough to skim by eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub fingerprint: String,
    pub request_summary: String,
    pub response_text: String,
}

/// An ordered set of recorded completions, unique per fingerprint.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    by_fingerprint: HashMap<String, usize>,
}

impl Transcript {
    pub fn new() -> Transcript {
        Transcript::default()
    }

    pub fn from_entries(entries: Vec<TranscriptEntry>) -> Result<Transcript, GatewayError> {
        let mut t = Transcript::new();
        for e in entries {
            if !t.push(e.clone()) {
                return Err(GatewayError::TranscriptIo(format!(
                    "duplicate fingerprint {} in transcript",
                    e.fingerprint
                )));
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Transcript, GatewayError> {
        let file = fs::File::open(path)
            .map_err(|e| GatewayError::TranscriptIo(format!("open {}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line =
                line.map_err(|e| GatewayError::TranscriptIo(format!("read line: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                GatewayError::TranscriptIo(format!(
                    "{} line {}: {e}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            entries.push(entry);
        }
        Transcript::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("transcript entry serializes"));
            out.push('\n');
        }
        fs::write(path, out)
            .map_err(|e| GatewayError::TranscriptIo(format!("write {}: {e}", path.display())))
    }

    /// Returns false when the fingerprint is already present.
    pub fn push(&mut self, entry: TranscriptEntry) -> bool {
        if self.by_fingerprint.contains_key(&entry.fingerprint) {
            return false;
        }
        self.by_fingerprint
            .insert(entry.fingerprint.clone(), self.entries.len());
        self.entries.push(entry);
        true
    }

    pub fn lookup(&self, fingerprint: &str) -> Option<&TranscriptEntry> {
        self.by_fingerprint
            .get(fingerprint)
            .map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bounded exponential backoff for transient transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_secs(1),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Zero-delay variant for tests.
    pub fn immediate() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::ZERO,
            jitter: false,
        }
    }

    fn delay_for(&self, attempt: u32) -> Duration {
        let base = self.base_delay.as_secs_f64() * 2f64.powi(attempt as i32 - 1);
        let factor = if self.jitter {
            1.0 + rand::rng().random_range(0.0..0.25)
        } else {
            1.0
        };
        Duration::from_secs_f64(base * factor)
    }
}

// counting semaphore; std has none and pulling an async runtime for one
// primitive is not worth it
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore mutex");
        while *permits == 0 {
            permits = self.cv.wait(permits).expect("semaphore wait");
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.sem.permits.lock().expect("semaphore mutex");
        *permits += 1;
        self.sem.cv.notify_one();
    }
}

enum Mode {
    Live(Box<dyn Backend>),
    Record {
        backend: Box<dyn Backend>,
        recorder: Mutex<Recorder>,
    },
    Replay(Transcript),
}

struct Recorder {
    transcript: Transcript,
    sink: Option<fs::File>,
}

impl Recorder {
    fn append(&mut self, entry: TranscriptEntry) -> Result<(), GatewayError> {
        if !self.transcript.push(entry.clone()) {
            return Ok(()); // fingerprint already recorded
        }
        if let Some(file) = &mut self.sink {
            let line = serde_json::to_string(&entry).expect("transcript entry serializes");
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|e| GatewayError::TranscriptIo(format!("append transcript: {e}")))?;
        }
        Ok(())
    }
}

/// The gateway itself. Concurrent callers are admitted up to a configurable
/// in-flight limit (default 4); everything else is lock-free reads.
pub struct ModelGateway {
    mode: Mode,
    resolver: AssetResolver,
    limiter: Semaphore,
    retry: RetryPolicy,
    model_id: String,
    served: Mutex<Vec<String>>,
    served_count: AtomicUsize,
}

pub const DEFAULT_CONCURRENCY: usize = 4;

impl ModelGateway {
    pub fn live(backend: Box<dyn Backend>, resolver: AssetResolver) -> ModelGateway {
        Self::with_mode(Mode::Live(backend), resolver)
    }

    /// Record to `path` (created or truncated) while forwarding to `backend`.
    /// A request whose fingerprint is already recorded is answered from the
    /// recording without a backend call, keeping one canonical completion
    /// per fingerprint.
    pub fn record(
        backend: Box<dyn Backend>,
        resolver: AssetResolver,
        path: &Path,
    ) -> Result<ModelGateway, GatewayError> {
        let sink = fs::File::create(path)
            .map_err(|e| GatewayError::TranscriptIo(format!("create {}: {e}", path.display())))?;
        Ok(Self::with_mode(
            Mode::Record {
                backend,
                recorder: Mutex::new(Recorder {
                    transcript: Transcript::new(),
                    sink: Some(sink),
                }),
            },
            resolver,
        ))
    }

    pub fn replay(transcript: Transcript, resolver: AssetResolver) -> ModelGateway {
        Self::with_mode(Mode::Replay(transcript), resolver)
    }

    pub fn replay_from_file(path: &Path, resolver: AssetResolver) -> Result<ModelGateway, GatewayError> {
        Ok(Self::replay(Transcript::load(path)?, resolver))
    }

    fn with_mode(mode: Mode, resolver: AssetResolver) -> ModelGateway {
        ModelGateway {
            mode,
            resolver,
            limiter: Semaphore::new(DEFAULT_CONCURRENCY),
            retry: RetryPolicy::default(),
            model_id: "default".to_string(),
            served: Mutex::new(Vec::new()),
            served_count: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> ModelGateway {
        self.retry = retry;
        self
    }

    /// Model id stamped into requests built by the pipelines.
    pub fn with_model_id(mut self, model_id: impl Into<String>) -> ModelGateway {
        self.model_id = model_id.into();
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn with_concurrency(mut self, limit: usize) -> ModelGateway {
        self.limiter = Semaphore::new(limit);
        self
    }

    /// Fingerprint a request without sending it.
    pub fn fingerprint(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        Ok(self.resolver.resolve(request)?.fingerprint())
    }

    /// Total completions served so far, across all modes.
    pub fn completions_served(&self) -> usize {
        self.served_count.load(Ordering::SeqCst)
    }

    /// Fingerprints served, in serve order.
    pub fn served_fingerprints(&self) -> Vec<String> {
        self.served.lock().expect("served mutex").clone()
    }

    fn summarize(request: &ResolvedRequest) -> String {
        let first_text = request
            .parts
            .iter()
            .find_map(|p| match p {
                ResolvedPart::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .unwrap_or("<no text part>");
        let first_line = first_text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let mut summary: String = first_line.chars().take(120).collect();
        if first_line.chars().count() > 120 {
            summary.push('…');
        }
        format!("{} :: {summary}", request.model_id)
    }

    fn call_with_retry(
        &self,
        backend: &dyn Backend,
        request: &ResolvedRequest,
    ) -> Result<ModelResponse, GatewayError> {
        let mut attempt = 1;
        loop {
            match backend.complete(request) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.transient() && attempt < self.retry.attempts => {
                    std::thread::sleep(self.retry.delay_for(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let resolved = self.resolver.resolve(request)?;
        let fingerprint = resolved.fingerprint();
        let _permit = self.limiter.acquire();

        let response = match &self.mode {
            Mode::Live(backend) => self.call_with_retry(backend.as_ref(), &resolved)?,
            Mode::Record { backend, recorder } => {
                let recorded = {
                    let rec = recorder.lock().expect("recorder mutex");
                    rec.transcript
                        .lookup(&fingerprint)
                        .map(|e| e.response_text.clone())
                };
                match recorded {
                    Some(text) => ModelResponse {
                        text,
                        usage: None,
                        backend_id: "recorded".to_string(),
                    },
                    None => {
                        let resp = self.call_with_retry(backend.as_ref(), &resolved)?;
                        recorder.lock().expect("recorder mutex").append(TranscriptEntry {
                            fingerprint: fingerprint.clone(),
                            request_summary: Self::summarize(&resolved),
                            response_text: resp.text.clone(),
                        })?;
                        resp
                    }
                }
            }
            Mode::Replay(transcript) => match transcript.lookup(&fingerprint) {
                Some(entry) => ModelResponse {
                    text: entry.response_text.clone(),
                    usage: None,
                    backend_id: "replay".to_string(),
                },
                None => {
                    return Err(GatewayError::Unmatched {
                        fingerprint: fingerprint.clone(),
                    })
                }
            },
        };

        self.served.lock().expect("served mutex").push(fingerprint);
        self.served_count.fetch_add(1, Ordering::SeqCst);
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct EchoBackend;

    impl Backend for EchoBackend {
        fn complete(&self, request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
            Ok(ModelResponse {
                text: format!("echo: {}", request.joined_text()),
                usage: None,
                backend_id: self.id(),
            })
        }
        fn id(&self) -> String {
            "echo".to_string()
        }
    }

    struct FlakyBackend {
        failures_left: AtomicU32,
        calls: AtomicU32,
    }

    impl Backend for FlakyBackend {
        fn complete(&self, _request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(GatewayError::Transport("connection reset".into()));
            }
            Ok(ModelResponse {
                text: "recovered".into(),
                usage: None,
                backend_id: self.id(),
            })
        }
        fn id(&self) -> String {
            "flaky".to_string()
        }
    }

    fn req(text: &str) -> ModelRequest {
        ModelRequest::new("system", "test-model").with_text(text)
    }

    #[test]
    fn identical_requests_share_a_fingerprint() {
        let gw = ModelGateway::live(Box::new(EchoBackend), AssetResolver::default());
        assert_eq!(
            gw.fingerprint(&req("hello")).unwrap(),
            gw.fingerprint(&req("hello")).unwrap()
        );
        assert_ne!(
            gw.fingerprint(&req("hello")).unwrap(),
            gw.fingerprint(&req("hello!")).unwrap()
        );
    }

    #[test]
    fn asset_bytes_feed_the_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.png");
        std::fs::write(&img, b"AAAA").unwrap();
        let gw = ModelGateway::live(Box::new(EchoBackend), AssetResolver::default());
        let request = ModelRequest::new("s", "m")
            .with_text("look")
            .with_asset(img.to_string_lossy(), MediaKind::Image);
        let fp1 = gw.fingerprint(&request).unwrap();
        std::fs::write(&img, b"BBBB").unwrap();
        let fp2 = gw.fingerprint(&request).unwrap();
        assert_ne!(fp1, fp2, "same path, different bytes must differ");
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let recording = ModelGateway::record(Box::new(EchoBackend), AssetResolver::default(), &path)
            .unwrap();
        let live_resp = recording.complete(&req("what is 2+2")).unwrap();

        let replaying =
            ModelGateway::replay_from_file(&path, AssetResolver::default()).unwrap();
        let replayed = replaying.complete(&req("what is 2+2")).unwrap();
        assert_eq!(live_resp.text, replayed.text);
        assert_eq!(replayed.backend_id, "replay");
    }

    #[test]
    fn replay_miss_names_the_fingerprint() {
        let gw = ModelGateway::replay(Transcript::new(), AssetResolver::default());
        let expected = gw.fingerprint(&req("nobody recorded this")).unwrap();
        match gw.complete(&req("nobody recorded this")) {
            Err(GatewayError::Unmatched { fingerprint }) => assert_eq!(fingerprint, expected),
            other => panic!("expected unmatched error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_fingerprints_rejected_at_load() {
        let e = TranscriptEntry {
            fingerprint: "f1".into(),
            request_summary: "s".into(),
            response_text: "r".into(),
        };
        let err = Transcript::from_entries(vec![e.clone(), e]).unwrap_err();
        assert!(matches!(err, GatewayError::TranscriptIo(_)));
    }

    #[test]
    fn record_mode_serves_duplicates_from_the_recording() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let gw =
            ModelGateway::record(Box::new(EchoBackend), AssetResolver::default(), &path).unwrap();
        gw.complete(&req("same")).unwrap();
        gw.complete(&req("same")).unwrap();
        let transcript = Transcript::load(&path).unwrap();
        assert_eq!(transcript.len(), 1);
        assert_eq!(gw.completions_served(), 2);
    }

    #[test]
    fn transient_failures_are_retried() {
        let backend = FlakyBackend {
            failures_left: AtomicU32::new(2),
            calls: AtomicU32::new(0),
        };
        let gw = ModelGateway::live(Box::new(backend), AssetResolver::default())
            .with_retry(RetryPolicy::immediate());
        let resp = gw.complete(&req("retry me")).unwrap();
        assert_eq!(resp.text, "recovered");
    }

    #[test]
    fn retries_exhaust_into_an_error() {
        let backend = FlakyBackend {
            failures_left: AtomicU32::new(10),
            calls: AtomicU32::new(0),
        };
        let gw = ModelGateway::live(Box::new(backend), AssetResolver::default())
            .with_retry(RetryPolicy::immediate());
        assert!(matches!(
            gw.complete(&req("never recovers")),
            Err(GatewayError::Transport(_))
        ));
    }

    #[test]
    fn missing_asset_is_an_asset_error() {
        let gw = ModelGateway::live(Box::new(EchoBackend), AssetResolver::default());
        let request =
            ModelRequest::new("s", "m").with_asset("/nonexistent/y.png", MediaKind::Image);
        assert!(matches!(
            gw.complete(&request),
            Err(GatewayError::Asset { .. })
        ));
    }

    #[test]
    fn empty_completion_is_a_valid_response() {
        struct Silent;
        impl Backend for Silent {
            fn complete(&self, _: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
                Ok(ModelResponse {
                    text: String::new(),
                    usage: None,
                    backend_id: self.id(),
                })
            }
            fn id(&self) -> String {
                "silent".into()
            }
        }
        let gw = ModelGateway::live(Box::new(Silent), AssetResolver::default());
        assert_eq!(gw.complete(&req("anything")).unwrap().text, "");
    }

    #[test]
    fn nonzero_temperature_is_rejected() {
        let gw = ModelGateway::live(Box::new(EchoBackend), AssetResolver::default());
        let mut r = req("x");
        r.temperature = 0.7;
        assert!(matches!(gw.complete(&r), Err(GatewayError::Invalid(_))));
    }

    #[test]
    fn concurrency_stays_within_the_limit() {
        use std::sync::Arc;
        struct Gauge {
            inflight: Arc<AtomicU32>,
            peak: Arc<AtomicU32>,
        }
        impl Backend for Gauge {
            fn complete(&self, _: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
                let now = self.inflight.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                self.inflight.fetch_sub(1, Ordering::SeqCst);
                Ok(ModelResponse {
                    text: "ok".into(),
                    usage: None,
                    backend_id: self.id(),
                })
            }
            fn id(&self) -> String {
                "gauge".into()
            }
        }
        let peak = Arc::new(AtomicU32::new(0));
        let gauge = Box::new(Gauge {
            inflight: Arc::new(AtomicU32::new(0)),
            peak: peak.clone(),
        });
        let gw = Arc::new(ModelGateway::live(gauge, AssetResolver::default()).with_concurrency(2));
        let mut handles = Vec::new();
        for i in 0..8 {
            let gw = gw.clone();
            handles.push(std::thread::spawn(move || {
                gw.complete(&req(&format!("q{i}"))).unwrap();
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.completions_served(), 8);
    }
}
