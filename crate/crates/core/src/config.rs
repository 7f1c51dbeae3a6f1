//! Deployment configuration: one TOML file per community.
//!
//! ```toml
//! store_dir = "data/store"
//!
//! [community]
//! community_id = "dwwa"
//! bot_author_ids = ["bot-carl"]
//! tau_toxic = 0.3
//!
//! [backend]
//! parallelism = 4
//! rate_limit = 5.0
//!
//! [backend.remote]
//! endpoint = "https://llm.example/v1/completions"
//! model = "ada-ft-intent"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::CommunityConfig;
use crate::error::{Error, Result};
use crate::gateway::{BatchOptions, ClassifierBackend, Gateway, RemoteBackend, RemoteConfig, RetryPolicy, StubBackend};

pub const CONFIG_ENV: &str = "HYPERMOD_CONFIG";
pub const API_TOKEN_ENV: &str = "HYPERMOD_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    /// Directory of `<task>.tsv` rule tables overriding the bundled ones.
    pub rules_dir: Option<PathBuf>,
    pub remote: Option<RemoteConfig>,
    pub parallelism: usize,
    pub rate_limit: Option<f64>,
    pub retry_attempts: u32,
    pub retry_backoff_ms: u64,
    pub unavailable_window_secs: u64,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            rules_dir: None,
            remote: None,
            parallelism: 4,
            rate_limit: None,
            retry_attempts: 3,
            retry_backoff_ms: 1_000,
            unavailable_window_secs: 60,
        }
    }
}

impl BackendSettings {
    pub fn batch_options(&self) -> BatchOptions {
        BatchOptions {
            parallelism: self.parallelism,
            rate_limit: self.rate_limit,
            unavailable_window: Duration::from_secs(self.unavailable_window_secs),
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.retry_attempts,
            initial_backoff: Duration::from_millis(self.retry_backoff_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Stub,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stub" => Ok(BackendKind::Stub),
            "remote" => Ok(BackendKind::Remote),
            other => Err(Error::validation(format!("unknown backend {other:?}; expected stub or remote"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub store_dir: PathBuf,
    /// Where retraining exports are written.
    pub export_dir: Option<PathBuf>,
    pub community: CommunityConfig,
    pub backend: BackendSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            store_dir: PathBuf::from("hypermod-store"),
            export_dir: None,
            community: CommunityConfig::default(),
            backend: BackendSettings::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: AppConfig = toml::from_str(&text)
            .map_err(|e| Error::validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.store_dir = base.join(&cfg.store_dir);
        cfg.export_dir = cfg.export_dir.map(|d| base.join(d));
        cfg.backend.rules_dir = cfg.backend.rules_dir.map(|d| base.join(d));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the file named by `flag`, else by `HYPERMOD_CONFIG`.
    pub fn locate(flag: Option<&Path>) -> Result<Self> {
        match flag {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::load(Path::new(&p)),
                None => Err(Error::validation(format!(
                    "no configuration: pass --config or set {CONFIG_ENV}"
                ))),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.community.validate()?;
        if self.backend.parallelism == 0 {
            return Err(Error::validation("backend.parallelism must be at least 1"));
        }
        if self.backend.rate_limit.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::validation("backend.rate_limit must be positive"));
        }
        Ok(())
    }

    pub fn export_dir(&self) -> PathBuf {
        self.export_dir.clone().unwrap_or_else(|| self.store_dir.join("exports"))
    }

    pub fn backend(&self, kind: BackendKind) -> Result<Arc<dyn ClassifierBackend>> {
        Ok(match kind {
            BackendKind::Stub => match &self.backend.rules_dir {
                Some(dir) => Arc::new(StubBackend::from_dir(dir)?),
                None => Arc::new(StubBackend::builtin()),
            },
            BackendKind::Remote => {
                let remote = self
                    .backend
                    .remote
                    .clone()
                    .ok_or_else(|| Error::validation("backend.remote is not configured"))?;
                Arc::new(RemoteBackend::new(remote).map_err(|e| Error::BackendUnavailable(e.0))?)
            }
        })
    }

    pub fn gateway(&self, kind: BackendKind) -> Result<Gateway> {
        Ok(Gateway::new(self.backend(kind)?)
            .with_retry(self.backend.retry())
            .with_pricing(self.community.tokenizer, self.community.price_per_1k_tokens))
    }
}
