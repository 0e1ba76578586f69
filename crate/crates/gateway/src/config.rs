use std::path::{Path, PathBuf};

use cimgw_core::cim::XmiTags;
use cimgw_core::mapping::{PolicyError, RefreshPolicy};
use cimgw_core::topology::RdfOptions;
use serde::Deserialize;

use crate::gateway::{Settings, WritableAttr};

pub const TOKENS_ENV: &str = "GATEWAY_TOKENS";
pub const LISTEN_ENV: &str = "GATEWAY_LISTEN";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    /// SQLite file, or `:memory:`.
    pub path: String,
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig {
            path: ":memory:".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefreshConfig {
    pub period_ms: u64,
    pub staleness_ms: u64,
    pub jitter_ms: u64,
}

impl Default for RefreshConfig {
    fn default() -> Self {
        RefreshConfig {
            period_ms: 1000,
            staleness_ms: 3000,
            jitter_ms: 50,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_timeout() -> u64 {
    2000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Poll the source's topology endpoint every `poll_interval_ms`.
    pub poll: bool,
    pub poll_interval_ms: u64,
    /// Accept documents posted to the ingest endpoint.
    pub push: bool,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            poll: true,
            poll_interval_ms: 5000,
            push: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub library: PathBuf,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default)]
    pub tokens: Vec<String>,
    /// `Class.attribute` entries; subclasses inherit writability.
    #[serde(default)]
    pub writable: Vec<String>,
    #[serde(default)]
    pub allow_drops: bool,
    #[serde(default)]
    pub storage: StorageConfig,
    #[serde(default)]
    pub refresh: RefreshConfig,
    pub source: SourceConfig,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub tag_names: XmiTags,
    #[serde(default)]
    pub rdf: RdfOptions,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl GatewayConfig {
    /// Reads, applies environment overrides, resolves relative paths against
    /// the file's directory, and validates.
    pub fn load(path: &Path) -> Result<GatewayConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let env = |k: &str| std::env::var(k).ok();
        GatewayConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")), env)
    }

    pub fn from_toml(
        text: &str,
        base_dir: &Path,
        env: impl Fn(&str) -> Option<String>,
    ) -> Result<GatewayConfig, ConfigError> {
        let mut cfg: GatewayConfig =
            toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        if let Some(tokens) = env(TOKENS_ENV) {
            cfg.tokens = tokens
                .split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(String::from)
                .collect();
        }
        if let Some(listen) = env(LISTEN_ENV) {
            cfg.listen = listen;
        }
        if cfg.library.is_relative() {
            cfg.library = base_dir.join(&cfg.library);
        }
        if cfg.storage.path != ":memory:" && Path::new(&cfg.storage.path).is_relative() {
            cfg.storage.path = base_dir
                .join(&cfg.storage.path)
                .to_string_lossy()
                .into_owned();
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        self.policy()?;
        if !self.topology.poll && !self.topology.push {
            return Err(ConfigError::Invalid(
                "no topology trigger: enable polling, push, or both".into(),
            ));
        }
        if self.topology.poll && self.topology.poll_interval_ms == 0 {
            return Err(ConfigError::Invalid(
                "topology poll interval must be positive".into(),
            ));
        }
        self.writable_attrs()?;
        Ok(())
    }

    pub fn policy(&self) -> Result<RefreshPolicy, ConfigError> {
        RefreshPolicy::from_millis(
            self.refresh.period_ms,
            self.refresh.staleness_ms,
            self.refresh.jitter_ms,
        )
        .map_err(|e: PolicyError| ConfigError::Invalid(e.to_string()))
    }

    pub fn writable_attrs(&self) -> Result<Vec<WritableAttr>, ConfigError> {
        self.writable
            .iter()
            .map(|w| {
                WritableAttr::parse(w).ok_or_else(|| {
                    ConfigError::Invalid(format!("writable entry `{w}` is not `Class.attribute`"))
                })
            })
            .collect()
    }

    pub fn settings(&self) -> Result<Settings, ConfigError> {
        Ok(Settings {
            tokens: self.tokens.clone(),
            writable: self.writable_attrs()?,
            allow_drops: self.allow_drops,
            rdf: self.rdf.clone(),
        })
    }
}
