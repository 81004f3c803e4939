//! Layered configuration.
//!
//! Precedence, lowest to highest: built-in defaults, the config file
//! (`--config PATH`, else `./cofix.toml` when present), the environment
//! (API key only), command-line flags. Layers are merged as TOML tables and
//! deserialized once, so an unknown or mistyped key is reported by its path.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cofix_core::gateway::{LiveConfig, PricingConfig};
use cofix_core::orchestrator::StageConfig;
use cofix_core::workspace::{Isolation, SandboxConfig, DEFAULT_OUTPUT_CAP};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const DEFAULT_CONFIG_FILE: &str = "cofix.toml";
pub const DEFAULT_API_KEY_ENV: &str = "COFIX_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    #[default]
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSection {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for LiveSection {
    fn default() -> Self {
        let d = LiveConfig::default();
        LiveSection {
            endpoint: d.endpoint,
            model: d.model,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retry_limit: d.retry_limit,
            backoff_ms: d.backoff_base.as_millis() as u64,
            request_timeout_secs: d.request_timeout.as_secs(),
        }
    }
}

/// USD per thousand tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSection {
    pub prompt_per_1k: Decimal,
    pub completion_per_1k: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub backend: BackendKind,
    /// Script file, or a directory of per-task scripts.
    pub script: Option<PathBuf>,
    /// Corpus manifest or its directory; the shipped corpus when unset.
    pub corpus: Option<PathBuf>,
    /// Prompt directory; the shipped prompts when unset.
    pub prompts: Option<PathBuf>,
    pub worker_count: usize,
    pub seed: u64,
    pub isolation: Isolation,
    pub exec_timeout_secs: u64,
    pub output_cap_bytes: usize,
    pub image_template: Option<String>,
    pub docker_bin: String,
    pub stage: StageConfig,
    pub live: LiveSection,
    pub pricing: PricingSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        let sandbox = SandboxConfig::default();
        CliConfig {
            backend: BackendKind::Scripted,
            script: None,
            corpus: None,
            prompts: None,
            worker_count: 4,
            seed: 0,
            isolation: sandbox.isolation,
            exec_timeout_secs: sandbox.exec_timeout.as_secs(),
            output_cap_bytes: DEFAULT_OUTPUT_CAP,
            image_template: None,
            docker_bin: sandbox.docker_bin,
            stage: StageConfig::default(),
            live: LiveSection::default(),
            pricing: PricingSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted path of the offending key, when one can be named.
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "invalid config key `{k}`: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: None,
        message: message.into(),
    }
}

/// The fully resolved configuration plus the secret kept out of reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: CliConfig,
    pub api_key: Option<String>,
    pub file: Option<PathBuf>,
}

impl Resolved {
    /// What gets echoed into reports. Never includes the API key.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.config).expect("config serializes");
        if let Some(f) = &self.file {
            v["config_file"] = serde_json::Value::String(f.display().to_string());
        }
        v
    }

    pub fn sandbox(&self) -> SandboxConfig {
        let c = &self.config;
        SandboxConfig {
            isolation: c.isolation,
            exec_timeout: Duration::from_secs(c.exec_timeout_secs),
            output_cap: c.output_cap_bytes,
            image_template: c.image_template.clone(),
            base_dir: None,
            docker_bin: c.docker_bin.clone(),
        }
    }

    pub fn pricing(&self) -> Result<PricingConfig, ConfigError> {
        let p = self.config.pricing;
        PricingConfig::new(p.prompt_per_1k, p.completion_per_1k).map_err(|e| ConfigError {
            key: Some("pricing".into()),
            message: e.to_string(),
        })
    }

    pub fn live(&self) -> LiveConfig {
        let l = &self.config.live;
        LiveConfig {
            endpoint: l.endpoint.clone(),
            model: l.model.clone(),
            api_key: self.api_key.clone(),
            retry_limit: l.retry_limit,
            backoff_base: Duration::from_millis(l.backoff_ms),
            request_timeout: Duration::from_secs(l.request_timeout_secs),
            seed: Some(self.config.seed),
        }
    }
}

/// Recursively overlays `over` onto `base`. Tables merge; anything else replaces.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn defaults_table() -> Table {
    match Value::try_from(CliConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    }
}

pub fn read_file(path: &Path) -> Result<Table, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| err(format!("cannot read config file {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| err(format!("cannot parse config file {}: {e}", path.display())))
}

/// Merges the layers and validates the result. `env` looks up environment
/// variables; it is only consulted for the API key.
pub fn resolve(
    file: Option<&Path>,
    flags: Table,
    env: impl Fn(&str) -> Option<String>,
) -> Result<Resolved, ConfigError> {
    let mut table = defaults_table();
    let file = match file {
        Some(p) => Some(p.to_path_buf()),
        None => Some(PathBuf::from(DEFAULT_CONFIG_FILE)).filter(|p| p.is_file()),
    };
    if let Some(p) = &file {
        merge(&mut table, read_file(p)?);
    }
    merge(&mut table, flags);

    let config: CliConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        ConfigError {
            key: (path != ".").then_some(path),
            message: e.into_inner().to_string(),
        }
    })?;
    config.stage.validate().map_err(|e| match e {
        cofix_core::orchestrator::ConfigError::TooSmall { key } => ConfigError {
            key: Some(format!("stage.{key}")),
            message: "must be at least 1".into(),
        },
    })?;
    if config.worker_count < 1 {
        return Err(ConfigError {
            key: Some("worker_count".into()),
            message: "must be at least 1".into(),
        });
    }
    let api_key = env(&config.live.api_key_env).filter(|k| !k.is_empty());
    let resolved = Resolved { config, api_key, file };
    resolved.pricing()?;
    Ok(resolved)
}
