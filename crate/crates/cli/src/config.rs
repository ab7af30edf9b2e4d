//! `hub.cfg`: a TOML file. Relative paths resolve against the file's folder.
//!
//! ```toml
//! data_dir = "dalton-data"                  # DALTON_DATA_DIR overrides
//! calibration = "../calibration/default.json"
//!
//! [gateway]
//! bind = "127.0.0.1:8080"
//! heartbeat_s = 15
//!
//! [store]
//! fsync = false
//! quota_bytes = 1_000_000_000
//!
//! [pipeline]
//! stale_timeout_s = 60
//! stuck_run = 30
//! reboot_cooldown_s = 300
//! max_reboots_per_hour = 4
//! command_ttl_s = 60
//! live_hhi = true
//!
//! [mqtt]                                   # optional broker bridge
//! enabled = true
//! host = "127.0.0.1"
//! port = 1883
//!
//! [simulator]                              # optional in-process household
//! scenario = "../scenarios/h1_ventilated.scn"
//! seed = 7
//!
//! [[users]]
//! user_id = "admin"
//! role = "ADMIN"
//! token = "change-me"
//! site_id = "h1"                           # optional
//! token_expiry_ms = 1900000000000          # optional
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use dalton_core::bus::bridge::BridgeConfig;
use dalton_core::pipeline::PipelineConfig;
use dalton_core::store::{Role, StoreOptions, UserRecord};
use serde::Deserialize;
use thiserror::Error;

pub const DATA_DIR_ENV: &str = "DALTON_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubConfig {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub store: StoreSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub mqtt: BridgeConfig,
    pub simulator: Option<SimulatorSection>,
    #[serde(default)]
    pub users: Vec<UserSection>,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("dalton-data")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewaySection {
    pub bind: String,
    pub heartbeat_s: u64,
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            bind: "127.0.0.1:8080".into(),
            heartbeat_s: 15,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoreSection {
    pub fsync: bool,
    pub quota_bytes: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub stale_timeout_s: u64,
    pub stuck_run: usize,
    pub reboot_cooldown_s: u64,
    pub max_reboots_per_hour: usize,
    pub command_ttl_s: u64,
    pub live_hhi: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let d = PipelineConfig::default();
        PipelineSection {
            stale_timeout_s: (d.stale_timeout_ms / 1000) as u64,
            stuck_run: d.stuck_run,
            reboot_cooldown_s: (d.reboot_cooldown_ms / 1000) as u64,
            max_reboots_per_hour: d.max_reboots_per_hour,
            command_ttl_s: (d.command_ttl_ms / 1000) as u64,
            live_hhi: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSection {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub user_id: String,
    pub role: Role,
    pub token: String,
    pub site_id: Option<String>,
    pub token_expiry_ms: Option<i64>,
}

impl UserSection {
    pub fn record(&self) -> UserRecord {
        let mut u = UserRecord::new(self.user_id.clone(), self.role, &self.token);
        u.site_id = self.site_id.clone();
        u.token_expiry_ms = self.token_expiry_ms;
        u
    }
}

impl HubConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: HubConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`, resolves relative paths against its folder and applies
    /// the `DALTON_DATA_DIR` override.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = base.join(&cfg.data_dir);
        cfg.calibration = cfg.calibration.map(|p| base.join(p));
        if let Some(sim) = &mut cfg.simulator {
            sim.scenario = base.join(&sim.scenario);
        }
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.data_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bind_addr()?;
        if self.gateway.heartbeat_s == 0 {
            return Err(invalid("gateway.heartbeat_s", "must be at least 1"));
        }
        let p = &self.pipeline;
        if p.stale_timeout_s == 0 {
            return Err(invalid("pipeline.stale_timeout_s", "must be at least 1"));
        }
        if p.stuck_run < 2 {
            return Err(invalid("pipeline.stuck_run", "must be at least 2"));
        }
        if p.max_reboots_per_hour == 0 {
            return Err(invalid("pipeline.max_reboots_per_hour", "must be at least 1"));
        }
        if p.command_ttl_s == 0 {
            return Err(invalid("pipeline.command_ttl_s", "must be at least 1"));
        }
        if self.store.quota_bytes == Some(0) {
            return Err(invalid("store.quota_bytes", "must be positive when set"));
        }
        if self.mqtt.enabled && self.mqtt.host.is_empty() {
            return Err(invalid("mqtt.host", "must not be empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &self.users {
            if u.token.is_empty() {
                return Err(invalid("users.token", format!("empty token for `{}`", u.user_id)));
            }
            if !seen.insert(&u.user_id) {
                return Err(invalid("users.user_id", format!("duplicate `{}`", u.user_id)));
            }
        }
        Ok(())
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ConfigError> {
        self.gateway
            .bind
            .parse()
            .map_err(|e| invalid("gateway.bind", format!("`{}`: {e}", self.gateway.bind)))
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            stale_timeout_ms: p.stale_timeout_s as i64 * 1000,
            stuck_run: p.stuck_run,
            reboot_cooldown_ms: p.reboot_cooldown_s as i64 * 1000,
            max_reboots_per_hour: p.max_reboots_per_hour,
            command_ttl_ms: p.command_ttl_s as i64 * 1000,
            ..PipelineConfig::default()
        }
    }

    pub fn store_options(&self) -> StoreOptions {
        StoreOptions {
            fsync: self.store.fsync,
            quota_bytes: self.store.quota_bytes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_takes_defaults() {
        let cfg = HubConfig::from_toml("").unwrap();
        assert_eq!(cfg.bind_addr().unwrap().port(), 8080);
        assert_eq!(cfg.pipeline_config().stuck_run, PipelineConfig::default().stuck_run);
        assert!(!cfg.mqtt.enabled);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = HubConfig::from_toml("[pipeline]\nstuck_runs = 3\n").unwrap_err().to_string();
        assert!(err.contains("stuck_runs"), "{err}");
    }

    #[test]
    fn bad_value_is_named() {
        let err = HubConfig::from_toml("[gateway]\nbind = \"nowhere\"\n").unwrap_err().to_string();
        assert!(err.contains("gateway.bind"), "{err}");
        let err = HubConfig::from_toml("[pipeline]\nstuck_run = 1\n").unwrap_err().to_string();
        assert!(err.contains("pipeline.stuck_run"), "{err}");
    }

    #[test]
    fn users_hash_tokens() {
        let cfg = HubConfig::from_toml("[[users]]\nuser_id = \"a\"\nrole = \"VIEWER\"\ntoken = \"t\"\n").unwrap();
        let u = cfg.users[0].record();
        assert!(u.token_matches("t"));
        assert_ne!(u.token_sha256, "t");
    }
}
