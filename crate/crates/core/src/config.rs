//! Effective CLI configuration: flags override environment, environment
//! overrides the config file, the config file overrides defaults. Unknown
//! config-file keys are rejected. API keys come from the environment only.

use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::orchestrator::RunConfig;

pub const ENDPOINT_ENV: &str = "TAINTMEND_ENDPOINT";
pub const MODEL_ENV: &str = "TAINTMEND_MODEL";
pub const API_KEY_ENV: &str = "TAINTMEND_API_KEY";

const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("config {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
    #[error("{0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Live,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    Fixture,
    External,
}

/// Keys accepted in a TOML config file. Everything is optional; unknown keys
/// are an error. Secrets are deliberately not accepted here.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub iterations: Option<usize>,
    pub candidates: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub responses_dir: Option<PathBuf>,
    pub provider: Option<String>,
    pub external_trace_cmd: Option<String>,
    pub example_bank: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub output_root: Option<PathBuf>,
    pub generation_temperature: Option<f64>,
    pub location_temperature: Option<f64>,
    pub location_retry_budget: Option<usize>,
    pub compile_log_cap: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &PathBuf) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io {
            path: path.clone(),
            reason: err.to_string(),
        })?;
        toml::from_str(&text).map_err(|err| ConfigError::Invalid {
            path: path.clone(),
            reason: err.to_string(),
        })
    }
}

/// Values taken from the process environment.
#[derive(Debug, Default, Clone)]
pub struct EnvConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
}

impl EnvConfig {
    pub fn read() -> EnvConfig {
        let get = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        EnvConfig {
            endpoint: get(ENDPOINT_ENV),
            model: get(MODEL_ENV),
            api_key: get(API_KEY_ENV),
        }
    }
}

/// Values taken from command-line flags; `None` means the flag was absent.
#[derive(Debug, Default, Clone)]
pub struct FlagOverrides {
    pub iterations: Option<usize>,
    pub candidates: Option<usize>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub responses_dir: Option<PathBuf>,
    pub provider: Option<String>,
    pub external_trace_cmd: Option<String>,
    pub example_bank: Option<PathBuf>,
    pub output_root: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EffectiveConfig {
    pub run: RunConfig,
    pub backend: BackendKind,
    pub responses_dir: Option<PathBuf>,
    pub provider: ProviderKind,
    pub external_trace_cmd: Option<String>,
    pub example_bank: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub output_root: PathBuf,
}

fn parse_backend(text: &str) -> Result<BackendKind, ConfigError> {
    match text {
        "live" => Ok(BackendKind::Live),
        "scripted" => Ok(BackendKind::Scripted),
        other => Err(ConfigError::Inconsistent(format!(
            "backend must be \"live\" or \"scripted\", got {other:?}"
        ))),
    }
}

fn parse_provider(text: &str) -> Result<ProviderKind, ConfigError> {
    match text {
        "fixture" => Ok(ProviderKind::Fixture),
        "external" => Ok(ProviderKind::External),
        other => Err(ConfigError::Inconsistent(format!(
            "provider must be \"fixture\" or \"external\", got {other:?}"
        ))),
    }
}

/// Merges the three layers onto the defaults.
pub fn resolve(
    file: FileConfig,
    env: EnvConfig,
    flags: FlagOverrides,
) -> Result<EffectiveConfig, ConfigError> {
    let defaults = RunConfig::default();
    let run = RunConfig {
        num_iterations: flags
            .iterations
            .or(file.iterations)
            .unwrap_or(defaults.num_iterations),
        candidates_per_iteration: flags
            .candidates
            .or(file.candidates)
            .unwrap_or(defaults.candidates_per_iteration),
        rng_seed: flags.seed.or(file.seed).unwrap_or(defaults.rng_seed),
        generation_temperature: file
            .generation_temperature
            .unwrap_or(defaults.generation_temperature),
        location_temperature: file
            .location_temperature
            .unwrap_or(defaults.location_temperature),
        location_retry_budget: file
            .location_retry_budget
            .unwrap_or(defaults.location_retry_budget),
        compile_log_cap: file.compile_log_cap.unwrap_or(defaults.compile_log_cap),
    };

    let backend = match flags.backend.as_deref().or(file.backend.as_deref()) {
        Some(text) => parse_backend(text)?,
        None => BackendKind::Scripted,
    };
    let provider = match flags.provider.as_deref().or(file.provider.as_deref()) {
        Some(text) => parse_provider(text)?,
        None => ProviderKind::Fixture,
    };
    let external_trace_cmd = flags.external_trace_cmd.or(file.external_trace_cmd);
    if provider == ProviderKind::External && external_trace_cmd.is_none() {
        return Err(ConfigError::Inconsistent(
            "provider \"external\" requires --external-trace-cmd".into(),
        ));
    }

    Ok(EffectiveConfig {
        run,
        backend,
        responses_dir: flags.responses_dir.or(file.responses_dir),
        provider,
        external_trace_cmd,
        example_bank: flags.example_bank.or(file.example_bank),
        endpoint: env
            .endpoint
            .or(file.endpoint)
            .unwrap_or_else(|| DEFAULT_ENDPOINT.into()),
        model: env.model.or(file.model).unwrap_or_else(|| DEFAULT_MODEL.into()),
        api_key: env.api_key,
        output_root: flags
            .output_root
            .or(file.output_root)
            .unwrap_or_else(|| PathBuf::from("runs")),
    })
}
