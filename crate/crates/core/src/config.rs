//! Layered configuration: defaults, then a TOML file, then environment
//! variables, then command-line flags (applied by the caller).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayConfig;
use crate::prefilter::PrefilterConfig;
use crate::registry::RegistryConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    /// Frame size used to clamp crops when frames carry no pixels.
    pub frame_width: u32,
    pub frame_height: u32,
    /// Only bounds the per-track buffer's hard cap.
    pub fps_nominal: u32,
    pub track_retention_s: f64,
    pub retry_tick_ms: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            frame_width: 640,
            frame_height: 480,
            fps_nominal: 10,
            track_retention_s: 10.0,
            retry_tick_ms: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertSettings {
    /// Directory for `alerts.jsonl` and snapshots; in-memory when unset.
    pub dir: Option<PathBuf>,
    pub retention_h: f64,
    pub obfuscate_snapshots: bool,
}

impl Default for AlertSettings {
    fn default() -> Self {
        AlertSettings { dir: None, retention_h: 24.0, obfuscate_snapshots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub prefilter: PrefilterConfig,
    pub gateway: GatewayConfig,
    pub pipeline: PipelineSettings,
    pub alerts: AlertSettings,
}

#[derive(Debug, Error)]
pub enum ConfigLoadError {
    #[error("reading config {path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("parsing config {path}: {message}")]
    Toml { path: String, message: String },
    #[error("environment variable {var}={value:?}: {message}")]
    Env { var: &'static str, value: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub const ENV_VARS: [&str; 12] = [
    "VLM_API_URL",
    "VLM_MODEL_NAME",
    "VLM_API_KEY",
    "PAZA_RATE_LIMIT",
    "PAZA_TAU_D",
    "PAZA_RHO",
    "PAZA_THETA_H",
    "PAZA_TAU_C",
    "PAZA_K",
    "PAZA_T",
    "PAZA_RETENTION_H",
    "PAZA_ALERT_DIR",
];

fn parse_env<T: std::str::FromStr>(var: &'static str, value: &str) -> Result<T, ConfigLoadError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigLoadError::Env {
        var,
        value: value.to_string(),
        message: e.to_string(),
    })
}

impl Config {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ConfigLoadError> {
        toml::from_str(text).map_err(|e| ConfigLoadError::Toml { path: path.into(), message: e.to_string() })
    }

    pub fn load_file(path: &Path) -> Result<Self, ConfigLoadError> {
        let label = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|error| ConfigLoadError::Io { path: label.clone(), error })?;
        Self::from_toml(&text, &label)
    }

    /// Applies environment overrides read through `lookup`.
    pub fn apply_env<F>(&mut self, lookup: F) -> Result<(), ConfigLoadError>
    where
        F: Fn(&str) -> Option<String>,
    {
        if let Some(v) = lookup("VLM_API_URL") {
            self.gateway.api_url = v;
        }
        if let Some(v) = lookup("VLM_MODEL_NAME") {
            self.gateway.model_name = v;
        }
        if let Some(v) = lookup("VLM_API_KEY") {
            self.gateway.api_key = Some(v).filter(|k| !k.is_empty());
        }
        if let Some(v) = lookup("PAZA_RATE_LIMIT") {
            self.set_rate_limit(parse_env("PAZA_RATE_LIMIT", &v)?);
        }
        if let Some(v) = lookup("PAZA_TAU_D") {
            self.prefilter.tau_d_s = parse_env("PAZA_TAU_D", &v)?;
        }
        if let Some(v) = lookup("PAZA_RHO") {
            self.prefilter.rho = parse_env("PAZA_RHO", &v)?;
        }
        if let Some(v) = lookup("PAZA_THETA_H") {
            self.prefilter.theta_h = parse_env("PAZA_THETA_H", &v)?;
        }
        if let Some(v) = lookup("PAZA_TAU_C") {
            self.prefilter.tau_c_s = parse_env("PAZA_TAU_C", &v)?;
        }
        if let Some(v) = lookup("PAZA_K") {
            self.prefilter.clip_frames_k = parse_env("PAZA_K", &v)?;
        }
        if let Some(v) = lookup("PAZA_T") {
            self.prefilter.buffer_horizon_t_s = parse_env("PAZA_T", &v)?;
        }
        if let Some(v) = lookup("PAZA_RETENTION_H") {
            self.alerts.retention_h = parse_env("PAZA_RETENTION_H", &v)?;
        }
        if let Some(v) = lookup("PAZA_ALERT_DIR") {
            self.alerts.dir = Some(PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty());
        }
        Ok(())
    }

    /// Defaults, then the optional file, then the process environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigLoadError> {
        let mut cfg = match file {
            Some(p) => Self::load_file(p)?,
            None => Config::default(),
        };
        cfg.sync_rate_limit();
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    /// The limit lives in both the pre-filter table and the gateway; keep
    /// them equal.
    pub fn set_rate_limit(&mut self, r: u32) {
        self.prefilter.rate_limit_per_min = r;
        self.gateway.rate_limit_per_min = r;
    }

    // A file may set either copy; a non-default gateway value wins over a
    // default pre-filter value.
    fn sync_rate_limit(&mut self) {
        let default = PrefilterConfig::default().rate_limit_per_min;
        let r = if self.prefilter.rate_limit_per_min == default {
            self.gateway.rate_limit_per_min
        } else {
            self.prefilter.rate_limit_per_min
        };
        self.set_rate_limit(r);
    }

    pub fn validate(&self) -> Result<(), ConfigLoadError> {
        self.prefilter.validate().map_err(|e| ConfigLoadError::Invalid(e.to_string()))?;
        self.gateway.validate().map_err(ConfigLoadError::Invalid)?;
        if self.prefilter.rate_limit_per_min != self.gateway.rate_limit_per_min {
            return Err(ConfigLoadError::Invalid("pre-filter and gateway rate limits differ".into()));
        }
        let p = &self.pipeline;
        if p.frame_width == 0 || p.frame_height == 0 {
            return Err(ConfigLoadError::Invalid("frame dimensions must be positive".into()));
        }
        if p.fps_nominal == 0 || p.retry_tick_ms == 0 {
            return Err(ConfigLoadError::Invalid("fps_nominal and retry_tick_ms must be positive".into()));
        }
        if !(p.track_retention_s.is_finite() && p.track_retention_s >= 0.0) {
            return Err(ConfigLoadError::Invalid("track_retention_s must be >= 0".into()));
        }
        if !(self.alerts.retention_h.is_finite() && self.alerts.retention_h >= 0.0) {
            return Err(ConfigLoadError::Invalid("retention_h must be >= 0".into()));
        }
        Ok(())
    }

    pub fn registry(&self) -> RegistryConfig {
        RegistryConfig {
            retention_ms: (self.pipeline.track_retention_s * 1000.0).round() as u64,
            buffer_horizon_s: self.prefilter.buffer_horizon_t_s,
            fps_nominal: self.pipeline.fps_nominal,
        }
    }

    /// TOML with every key at its effective value (the API key is omitted).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let m: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| m.get(k).cloned()
    }

    #[test]
    fn defaults_are_valid() {
        let c = Config::default();
        c.validate().unwrap();
        assert_eq!(c.registry(), RegistryConfig::default());
    }

    #[test]
    fn env_overrides_file() {
        let mut c = Config::from_toml("[prefilter]\ntau_d_s = 4.0\nrho = 0.25\n[gateway]\nmodel_name = \"file\"\n", "t").unwrap();
        assert_eq!(c.prefilter.tau_d_s, 4.0);
        c.apply_env(env(&[("PAZA_TAU_D", "5"), ("VLM_MODEL_NAME", "env-model"), ("PAZA_RATE_LIMIT", "6")])).unwrap();
        assert_eq!(c.prefilter.tau_d_s, 5.0);
        assert_eq!(c.prefilter.rho, 0.25);
        assert_eq!(c.gateway.model_name, "env-model");
        assert_eq!((c.prefilter.rate_limit_per_min, c.gateway.rate_limit_per_min), (6, 6));
        c.validate().unwrap();
    }

    #[test]
    fn bad_env_value_is_reported() {
        let mut c = Config::default();
        let err = c.apply_env(env(&[("PAZA_RHO", "lots")])).unwrap_err();
        assert!(err.to_string().contains("PAZA_RHO"));
    }

    #[test]
    fn gateway_rate_limit_in_file_is_honored() {
        let mut c = Config::from_toml("[gateway]\nrate_limit_per_min = 4\n", "t").unwrap();
        c.sync_rate_limit();
        assert_eq!(c.prefilter.rate_limit_per_min, 4);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml(), "t").unwrap(), c);
    }

    #[test]
    fn unknown_values_rejected() {
        assert!(Config::from_toml("[prefilter]\nrho = \"x\"\n", "t").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = Config::from_toml("[prefilter]\ntau_d = 3.0\n", "t").unwrap_err().to_string();
        assert!(e.contains("tau_d"), "{e}");
        assert!(Config::from_toml("[trigger]\n", "t").is_err());
    }
}
