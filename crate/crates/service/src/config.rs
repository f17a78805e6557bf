//! Server configuration: a TOML file overlaid with `FAIRPROBE_*` environment
//! variables.

use std::path::{Path, PathBuf};

use fairprobe::engine::{EngineConfig, HypothesisSet};
use fairprobe::study::Scenario;
use fairprobe::TestSpaceConfig;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Which explanation form a session collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationVariant {
    #[default]
    FreeText,
    Structured,
}

impl std::str::FromStr for ExplanationVariant {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "free_text" => Ok(ExplanationVariant::FreeText),
            "structured" => Ok(ExplanationVariant::Structured),
            other => Err(ServiceError::Config(format!("unknown explanation variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Directory holding the event log and its index.
    pub log_dir: PathBuf,
    /// Scenarios accepted by this deployment.
    pub scenarios: Vec<Scenario>,
    pub default_explanation: ExplanationVariant,
    /// Idle time after which an active session is aborted.
    pub session_ttl_secs: u64,
    /// How often the idle sweep runs while serving.
    pub sweep_interval_secs: u64,
    /// fsync the log after every event.
    pub sync_writes: bool,
    pub engine: EngineConfig,
    pub test_space: Option<TestSpaceConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            log_dir: PathBuf::from("fairprobe-data"),
            scenarios: Scenario::ALL.to_vec(),
            default_explanation: ExplanationVariant::FreeText,
            session_ttl_secs: 24 * 60 * 60,
            sweep_interval_secs: 600,
            sync_writes: false,
            engine: EngineConfig::default(),
            test_space: None,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => ServiceConfig::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Applies recognised `FAIRPROBE_*` variables; others are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), ServiceError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ServiceError> {
            value
                .trim()
                .parse()
                .map_err(|_| ServiceError::Config(format!("invalid value '{value}' for {key}")))
        }
        for (key, value) in vars {
            let (key, value) = (key.as_ref(), value.as_ref());
            match key {
                "FAIRPROBE_HOST" => self.host = value.to_string(),
                "FAIRPROBE_PORT" => self.port = parse(key, value)?,
                "FAIRPROBE_LOG_DIR" => self.log_dir = PathBuf::from(value),
                "FAIRPROBE_SCENARIOS" => {
                    self.scenarios = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| parse(key, s))
                        .collect::<Result<_, _>>()?
                }
                "FAIRPROBE_EXPLANATION" => self.default_explanation = parse(key, value)?,
                "FAIRPROBE_SESSION_TTL_SECS" => self.session_ttl_secs = parse(key, value)?,
                "FAIRPROBE_SYNC_WRITES" => self.sync_writes = parse(key, value)?,
                "FAIRPROBE_MAX_TESTS" => self.engine.max_tests = parse(key, value)?,
                "FAIRPROBE_THRESHOLD" => self.engine.classification_threshold = parse(key, value)?,
                "FAIRPROBE_TEMPERATURE" => self.engine.response.temperature = parse(key, value)?,
                "FAIRPROBE_HYPOTHESES" => {
                    self.engine.hypotheses = match value.trim() {
                        "default" => HypothesisSet::default_set(),
                        "appendix" => HypothesisSet::appendix_set(),
                        other => {
                            return Err(ServiceError::Config(format!(
                                "FAIRPROBE_HYPOTHESES must be 'default' or 'appendix', got '{other}'"
                            )))
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.engine.validate()?;
        if let Some(ts) = &self.test_space {
            ts.validate()?;
        }
        if !self.scenarios.iter().any(|s| s.is_adaptive() || s.is_survey()) {
            return Err(ServiceError::Config("no scenarios enabled".into()));
        }
        if self.session_ttl_secs == 0 {
            return Err(ServiceError::Config("session_ttl_secs must be positive".into()));
        }
        Ok(())
    }
}
