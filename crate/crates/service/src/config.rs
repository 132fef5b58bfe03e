use std::path::PathBuf;
use std::time::Duration;

use sbac_core::vignette::DEFAULT_K;
use sbac_core::ModelTier;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("environment variable {0} is not set")]
    Missing(&'static str),
    #[error("environment variable {name} has an invalid value {value:?}")]
    Invalid { name: &'static str, value: String },
}

/// Settings for the live model endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model_frontier: String,
    pub model_fast: String,
    pub temperature: Option<f64>,
    pub timeout: Duration,
}

impl LlmConfig {
    pub fn model(&self, tier: ModelTier) -> &str {
        match tier {
            ModelTier::Frontier => &self.model_frontier,
            ModelTier::Fast => &self.model_fast,
        }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let need = |name: &'static str| get(name).filter(|v| !v.is_empty()).ok_or(ConfigError::Missing(name));
        let temperature = match get("LLM_TEMPERATURE") {
            Some(v) => Some(v.parse().map_err(|_| ConfigError::Invalid { name: "LLM_TEMPERATURE", value: v })?),
            None => None,
        };
        let timeout = match get("LLM_TIMEOUT_SECS") {
            Some(v) => Duration::from_secs(v.parse().map_err(|_| ConfigError::Invalid { name: "LLM_TIMEOUT_SECS", value: v })?),
            None => Duration::from_secs(120),
        };
        Ok(Self {
            endpoint: need("LLM_ENDPOINT")?,
            api_key: need("LLM_API_KEY")?,
            model_frontier: need("LLM_MODEL_FRONTIER")?,
            model_fast: need("LLM_MODEL_FAST")?,
            temperature,
            timeout,
        })
    }
}

/// Service-level settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub store_dir: Option<PathBuf>,
    pub vignette_k: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { store_dir: None, vignette_k: DEFAULT_K }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let vignette_k = match get("SBAC_VIGNETTE_K") {
            Some(v) => match v.parse::<usize>() {
                Ok(k) if k >= 1 => k,
                _ => return Err(ConfigError::Invalid { name: "SBAC_VIGNETTE_K", value: v }),
            },
            None => DEFAULT_K,
        };
        Ok(Self { store_dir: get("SBAC_STORE_DIR").filter(|v| !v.is_empty()).map(PathBuf::from), vignette_k })
    }
}
