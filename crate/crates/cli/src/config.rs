//! TOML config file plus command-line overrides.
//!
//! ```toml
//! [backend]
//! mock_script = "mock.json"            # or: base_url = "https://api.openai.com"
//! model = "gpt-3.5-turbo"
//! temperature = 0.0
//! api_key_env = "ABSIEVE_API_KEY"
//! timeout_secs = 120
//!
//! [runner]
//! max_in_flight = 4
//! requests_per_minute = 60
//! max_retries = 5
//! backoff_base_ms = 1000
//! checkpoint_every = 1
//! price_per_1k_input = 0.0015
//! price_per_1k_output = 0.002
//! decision_max_tokens = 8
//! explain_max_tokens = 512
//!
//! [paths]
//! manifest = "manifest.csv"
//! data_dir = "data"
//! output_dir = "out"
//! ```
//!
//! Relative paths in the file resolve against the file's directory; paths
//! given as flags resolve against the working directory. The API key is
//! only ever read from the environment variable named by `api_key_env`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use absieve_core::llm::DEFAULT_API_KEY_ENV;
use absieve_core::runner::RunConfig;
use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub runner: RunnerSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub base_url: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerSection {
    pub max_in_flight: Option<usize>,
    pub requests_per_minute: Option<u32>,
    pub max_retries: Option<u32>,
    pub backoff_base_ms: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub price_per_1k_input: Option<f64>,
    pub price_per_1k_output: Option<f64>,
    pub decision_max_tokens: Option<u32>,
    pub explain_max_tokens: Option<u32>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

/// Flags shared by every subcommand. Each one overrides the matching
/// config-file key.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// Config file (TOML)
    #[arg(long, short = 'c', global = true)]
    pub config: Option<PathBuf>,

    /// OpenAI-compatible server root, e.g. https://api.openai.com
    #[arg(long, global = true)]
    pub base_url: Option<String>,
    /// JSON script for the offline mock backend
    #[arg(long, global = true)]
    pub mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Environment variable holding the API key
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    #[arg(long, global = true)]
    pub timeout_secs: Option<u64>,

    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    #[arg(long, global = true)]
    pub requests_per_minute: Option<u32>,
    #[arg(long, global = true)]
    pub max_retries: Option<u32>,
    #[arg(long, global = true)]
    pub backoff_base_ms: Option<u64>,
    #[arg(long, global = true)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, global = true)]
    pub price_per_1k_input: Option<f64>,
    #[arg(long, global = true)]
    pub price_per_1k_output: Option<f64>,
    #[arg(long, global = true)]
    pub decision_max_tokens: Option<u32>,
    #[arg(long, global = true)]
    pub explain_max_tokens: Option<u32>,

    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    Http {
        base_url: String,
        api_key_env: String,
        timeout: Duration,
    },
    Mock {
        script: PathBuf,
    },
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub backend: Option<BackendKind>,
    pub run: RunConfig,
    pub manifest: PathBuf,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl AppConfig {
    pub fn load(overrides: &Overrides) -> Result<Self> {
        let (file, base) = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, base)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        Self::resolve(file, &base, overrides)
    }

    pub fn resolve(file: FileConfig, base: &Path, o: &Overrides) -> Result<Self> {
        let from_file = |p: Option<PathBuf>| p.map(|p| base.join(p));
        let b = file.backend;
        let r = file.runner;
        let p = file.paths;

        // a backend flag replaces whatever kind the file configured
        let (base_url, mock_script) = if o.base_url.is_some() || o.mock_script.is_some() {
            (o.base_url.clone(), o.mock_script.clone())
        } else {
            (b.base_url, from_file(b.mock_script))
        };
        let timeout = Duration::from_secs(o.timeout_secs.or(b.timeout_secs).unwrap_or(120));
        let backend = match (base_url, mock_script) {
            (Some(_), Some(_)) => bail!("backend: set exactly one of `base_url` or `mock_script`, not both"),
            (Some(base_url), None) => Some(BackendKind::Http {
                base_url,
                api_key_env: o
                    .api_key_env
                    .clone()
                    .or(b.api_key_env)
                    .unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_string()),
                timeout,
            }),
            (None, Some(script)) => Some(BackendKind::Mock { script }),
            (None, None) => None,
        };

        let d = RunConfig::default();
        let run = RunConfig {
            model: o.model.clone().or(b.model).unwrap_or(d.model),
            temperature: o.temperature.or(b.temperature).unwrap_or(d.temperature),
            max_in_flight: o.max_in_flight.or(r.max_in_flight).unwrap_or(d.max_in_flight),
            requests_per_minute: o
                .requests_per_minute
                .or(r.requests_per_minute)
                .unwrap_or(d.requests_per_minute),
            max_retries: o.max_retries.or(r.max_retries).unwrap_or(d.max_retries),
            backoff_base: o
                .backoff_base_ms
                .or(r.backoff_base_ms)
                .map(Duration::from_millis)
                .unwrap_or(d.backoff_base),
            checkpoint_every: o.checkpoint_every.or(r.checkpoint_every).unwrap_or(d.checkpoint_every),
            price_per_1k_input: o
                .price_per_1k_input
                .or(r.price_per_1k_input)
                .unwrap_or(d.price_per_1k_input),
            price_per_1k_output: o
                .price_per_1k_output
                .or(r.price_per_1k_output)
                .unwrap_or(d.price_per_1k_output),
            decision_max_tokens: o
                .decision_max_tokens
                .or(r.decision_max_tokens)
                .unwrap_or(d.decision_max_tokens),
            explain_max_tokens: o
                .explain_max_tokens
                .or(r.explain_max_tokens)
                .unwrap_or(d.explain_max_tokens),
            row_limit: None,
        };
        run.validate()?;

        let path = |flag: &Option<PathBuf>, file: Option<PathBuf>, key: &str| -> Result<PathBuf> {
            flag.clone()
                .or(from_file(file))
                .with_context(|| format!("paths: `{key}` is not set (config file or --{})", key.replace('_', "-")))
        };
        Ok(Self {
            backend,
            run,
            manifest: path(&o.manifest, p.manifest, "manifest")?,
            data_dir: path(&o.data_dir, p.data_dir, "data_dir")?,
            output_dir: path(&o.output_dir, p.output_dir, "output_dir")?,
        })
    }

    pub fn require_backend(&self) -> Result<&BackendKind> {
        self.backend
            .as_ref()
            .context("backend: set one of `base_url` or `mock_script`")
    }

    pub fn dataset_path(&self, name: &str) -> PathBuf {
        self.data_dir.join(format!("{name}.csv"))
    }

    pub fn results_path(&self, name: &str) -> PathBuf {
        self.output_dir.join(format!("{name}.csv"))
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} `{}` does not exist", path.display());
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} `{}` is not a directory", path.display());
    }
    Ok(())
}
