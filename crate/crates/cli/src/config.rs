//! Configuration resolution. Precedence: command-line flags, then
//! environment variables (clap folds those into the flags), then the
//! config file, then defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use dynaquery::catalog::{self, SchemaModel, SemanticEnrichment};
use dynaquery::db::Db;
use dynaquery::modelgate::{AssetResolver, HttpBackend, ModelGateway};

use crate::GlobalArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrafficMode {
    /// forward every request to the configured model endpoint
    Live,
    /// forward and also append each exchange to the transcript
    Record,
    /// serve responses from the transcript only; no network
    Replay,
}

impl TrafficMode {
    fn parse(text: &str) -> Result<TrafficMode> {
        match text {
            "live" => Ok(TrafficMode::Live),
            "record" => Ok(TrafficMode::Record),
            "replay" => Ok(TrafficMode::Replay),
            other => bail!("unknown mode `{other}` (expected live, record, or replay)"),
        }
    }
}

/// Shape of the TOML config file. Every key is optional; flags and env
/// vars win over anything here.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub db_url: Option<String>,
    pub model_url: Option<String>,
    pub model_id: Option<String>,
    pub api_key: Option<String>,
    pub embed_url: Option<String>,
    pub classifier_url: Option<String>,
    pub asset_root: Option<PathBuf>,
    pub enrichment: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub mode: Option<String>,
    pub retrieval_k: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub seed: Option<u64>,
    pub run_dir: Option<PathBuf>,
}

pub fn load_file(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parse config file {}", path.display()))
}

/// Fully resolved settings every command works from.
#[derive(Debug)]
pub struct Settings {
    pub db_url: Option<String>,
    pub model_url: Option<String>,
    pub model_id: String,
    pub api_key: Option<String>,
    pub embed_url: Option<String>,
    pub classifier_url: Option<String>,
    pub asset_root: Option<PathBuf>,
    pub enrichment: Option<PathBuf>,
    pub transcript: Option<PathBuf>,
    pub mode: TrafficMode,
    pub retrieval_k: usize,
    pub timeout: Duration,
    pub seed: u64,
    run_dir: PathBuf,
}

impl Settings {
    pub fn resolve(args: &GlobalArgs, file: FileConfig) -> Result<Settings> {
        let mode = match args.mode {
            Some(mode) => mode,
            None => match &file.mode {
                Some(text) => TrafficMode::parse(text)?,
                None => TrafficMode::Live,
            },
        };
        let seed = args.seed.or(file.seed).unwrap_or(0);
        let run_dir = args
            .run_dir
            .clone()
            .or(file.run_dir)
            .unwrap_or_else(|| default_run_dir(seed));
        let settings = Settings {
            db_url: args.db_url.clone().or(file.db_url),
            model_url: args.model_url.clone().or(file.model_url),
            model_id: args
                .model_id
                .clone()
                .or(file.model_id)
                .unwrap_or_else(|| "default".to_string()),
            api_key: args.api_key.clone().or(file.api_key),
            embed_url: args.embed_url.clone().or(file.embed_url),
            classifier_url: args.classifier_url.clone().or(file.classifier_url),
            asset_root: args.asset_root.clone().or(file.asset_root),
            enrichment: args.enrich.clone().or(file.enrichment),
            transcript: args.transcript.clone().or(file.transcript),
            mode,
            retrieval_k: args.retrieval_k.or(file.retrieval_k).unwrap_or(4),
            timeout: Duration::from_secs(args.timeout_secs.or(file.timeout_secs).unwrap_or(30)),
            seed,
            run_dir,
        };
        settings.validate()?;
        Ok(settings)
    }

    // mode invariants hold regardless of which command runs; failing
    // early beats failing after half the work
    fn validate(&self) -> Result<()> {
        match self.mode {
            TrafficMode::Replay | TrafficMode::Record => {
                if self.transcript.is_none() {
                    bail!(
                        "{} mode requires --transcript",
                        if self.mode == TrafficMode::Replay {
                            "replay"
                        } else {
                            "record"
                        }
                    );
                }
            }
            TrafficMode::Live => {}
        }
        Ok(())
    }

    pub fn open_db(&self) -> Result<Db> {
        let url = self
            .db_url
            .as_deref()
            .context("no database configured (--db-url, DQ_DB_URL, or db_url in the config file)")?;
        Ok(Db::open(url)?)
    }

    /// Introspected schema with the semantic description file merged in
    /// when one is configured. Merge diagnostics go to stderr.
    pub fn schema(&self, db: &Db) -> Result<SchemaModel> {
        let schema = catalog::introspect(db)?;
        let Some(path) = &self.enrichment else {
            return Ok(schema);
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("read enrichment file {}", path.display()))?;
        let enrichment = SemanticEnrichment::from_json_str(&text)?;
        let (enriched, diagnostics) = catalog::apply_enrichment(&schema, &enrichment);
        for diagnostic in &diagnostics {
            eprintln!("enrichment: {} `{}`", diagnostic.kind, diagnostic.key);
        }
        Ok(enriched)
    }

    fn resolver(&self) -> AssetResolver {
        match &self.asset_root {
            Some(root) => AssetResolver::with_root(root),
            None => AssetResolver::default(),
        }
    }

    pub fn gateway(&self) -> Result<ModelGateway> {
        let resolver = self.resolver();
        let gateway = match self.mode {
            TrafficMode::Live => {
                ModelGateway::live(Box::new(self.backend()?), resolver)
            }
            TrafficMode::Record => {
                let path = self.transcript.as_deref().expect("validated");
                ModelGateway::record(Box::new(self.backend()?), resolver, path)?
            }
            TrafficMode::Replay => {
                let path = self.transcript.as_deref().expect("validated");
                ModelGateway::replay_from_file(path, resolver)?
            }
        };
        Ok(gateway.with_model_id(&self.model_id))
    }

    fn backend(&self) -> Result<HttpBackend> {
        let url = self.model_url.as_deref().context(
            "live traffic requires a model endpoint (--model-url or DQ_MODEL_URL)",
        )?;
        Ok(HttpBackend::new(url, self.api_key.clone()))
    }

    /// Directory every artifact of this invocation lands in; created on
    /// first use.
    pub fn ensure_run_dir(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.run_dir)
            .with_context(|| format!("create run directory {}", self.run_dir.display()))?;
        Ok(self.run_dir.clone())
    }
}

fn default_run_dir(seed: u64) -> PathBuf {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from("runs").join(format!("{}-seed{seed}", utc_stamp(secs)))
}

// civil date from days since the unix epoch, era arithmetic
fn utc_stamp(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (hour, minute, second) = (rem / 3600, rem % 3600 / 60, rem % 60);
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = yoe + era * 400 + i64::from(month <= 2);
    format!("{year:04}{month:02}{day:02}T{hour:02}{minute:02}{second:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare_args() -> GlobalArgs {
        GlobalArgs {
            config: None,
            db_url: None,
            model_url: None,
            model_id: None,
            api_key: None,
            embed_url: None,
            classifier_url: None,
            asset_root: None,
            enrich: None,
            transcript: None,
            mode: None,
            seed: None,
            run_dir: None,
            retrieval_k: None,
            timeout_secs: None,
        }
    }

    #[test]
    fn flags_outrank_the_file() {
        let mut args = bare_args();
        args.db_url = Some("sqlite:flag.db".to_string());
        args.seed = Some(9);
        let file = FileConfig {
            db_url: Some("sqlite:file.db".to_string()),
            seed: Some(1),
            model_id: Some("from-file".to_string()),
            ..FileConfig::default()
        };
        let settings = Settings::resolve(&args, file).unwrap();
        assert_eq!(settings.db_url.as_deref(), Some("sqlite:flag.db"));
        assert_eq!(settings.seed, 9);
        // untouched by flags, the file value stands
        assert_eq!(settings.model_id, "from-file");
    }

    #[test]
    fn replay_without_transcript_is_rejected() {
        let mut args = bare_args();
        args.mode = Some(TrafficMode::Replay);
        let err = Settings::resolve(&args, FileConfig::default()).unwrap_err();
        assert!(err.to_string().contains("transcript"));
    }

    #[test]
    fn run_dir_carries_the_seed() {
        let mut args = bare_args();
        args.seed = Some(31);
        let settings = Settings::resolve(&args, FileConfig::default()).unwrap();
        let dir = settings.run_dir.to_string_lossy().to_string();
        assert!(dir.contains("seed31"), "{dir}");
    }

    #[test]
    fn civil_stamp_matches_known_dates() {
        assert_eq!(utc_stamp(0), "19700101T000000");
        // 2001-09-09T01:46:40 is the billennium second
        assert_eq!(utc_stamp(1_000_000_000), "20010909T014640");
    }

    #[test]
    fn file_rejects_unknown_keys() {
        let parsed: Result<FileConfig, _> = toml::from_str("db_urll = \"typo\"");
        assert!(parsed.is_err());
    }
}
