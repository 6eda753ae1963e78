use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

pub const DEFAULT_PORT: u16 = 7391;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{var} is not a valid value: {value}")]
    BadValue { var: &'static str, value: String },
    #[error("provider entry `{0}` must look like id=url")]
    BadProvider(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub auto_approve: bool,
    /// provider id -> base URL of its OAuth and data endpoints
    pub providers: HashMap<String, String>,
    pub rate_per_second: f64,
    pub tick_seconds: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            data_dir: None,
            auto_approve: false,
            providers: HashMap::new(),
            rate_per_second: 10.0,
            tick_seconds: 1,
        }
    }
}

/// Parses `id=url` pairs separated by commas.
pub fn parse_providers(spec: &str) -> Result<HashMap<String, String>, ConfigError> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| match entry.split_once('=') {
            Some((id, url)) if !id.is_empty() && !url.is_empty() => Ok((id.to_string(), url.to_string())),
            _ => Err(ConfigError::BadProvider(entry.to_string())),
        })
        .collect()
}

fn parse_bool(var: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(ConfigError::BadValue { var, value: value.into() }),
    }
}

impl ServiceConfig {
    /// Defaults overlaid with `HUB_PORT`, `HUB_DATA_DIR`, `HUB_AUTO_APPROVE`
    /// and `HUB_PROVIDERS`.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_vars(|k| std::env::var(k).ok())
    }

    pub fn from_vars(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        if let Some(v) = get("HUB_PORT") {
            c.port = v.parse().map_err(|_| ConfigError::BadValue { var: "HUB_PORT", value: v })?;
        }
        if let Some(v) = get("HUB_DATA_DIR").filter(|v| !v.is_empty()) {
            c.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("HUB_AUTO_APPROVE") {
            c.auto_approve = parse_bool("HUB_AUTO_APPROVE", &v)?;
        }
        if let Some(v) = get("HUB_PROVIDERS") {
            c.providers = parse_providers(&v)?;
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_defaults() {
        let c = ServiceConfig::from_vars(|k| match k {
            "HUB_PORT" => Some("8000".into()),
            "HUB_AUTO_APPROVE" => Some("1".into()),
            "HUB_PROVIDERS" => Some("gmail=http://127.0.0.1:9000, google_drive=http://127.0.0.1:9001".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.port, 8000);
        assert!(c.auto_approve);
        assert_eq!(c.data_dir, None);
        assert_eq!(c.providers["google_drive"], "http://127.0.0.1:9001");
        assert_eq!(ServiceConfig::from_vars(|_| None).unwrap().port, DEFAULT_PORT);
    }

    #[test]
    fn rejects_garbage() {
        assert!(ServiceConfig::from_vars(|k| (k == "HUB_PORT").then(|| "x".into())).is_err());
        assert!(ServiceConfig::from_vars(|k| (k == "HUB_AUTO_APPROVE").then(|| "maybe".into())).is_err());
        assert_eq!(parse_providers("nourl"), Err(ConfigError::BadProvider("nourl".into())));
    }
}
