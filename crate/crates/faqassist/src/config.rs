//! The single configuration document shared by every CLI verb, and the
//! provider wiring built from it.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, EmbedderSpec};
use crate::engine::{Engine, EngineConfig};
use crate::llm::{LlmGateway, PromptSet, ProviderSpec};
use crate::mining::MiningConfig;
use crate::rag::{RagClient, RagSpec, ScriptedRag};
use crate::store::{FaqStore, StoreConfig, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub service: ServiceConfig,
    pub engine: EngineConfig,
    pub mining: MiningConfig,
    pub providers: ProvidersConfig,
    pub store: StoreFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub auth: AuthConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            auth: AuthConfig::default(),
        }
    }
}

/// Names of the environment variables holding the two bearer tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthConfig {
    pub agent_token_env: String,
    pub supervisor_token_env: String,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            agent_token_env: "FAQASSIST_AGENT_TOKEN".into(),
            supervisor_token_env: "FAQASSIST_SUPERVISOR_TOKEN".into(),
        }
    }
}

/// Resolved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokens {
    pub agent: String,
    pub supervisor: String,
}

impl AuthConfig {
    pub fn resolve(&self) -> Result<Tokens, ConfigError> {
        let read = |name: &str| {
            std::env::var(name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| ConfigError::Invalid(format!("environment variable {name} must hold a token")))
        };
        let tokens = Tokens {
            agent: read(&self.agent_token_env)?,
            supervisor: read(&self.supervisor_token_env)?,
        };
        if tokens.agent == tokens.supervisor {
            return Err(ConfigError::Invalid("agent and supervisor tokens must differ".into()));
        }
        Ok(tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub gateway: ProviderSpec,
    pub embedder: EmbedderSpec,
    pub rag: RagSpec,
    /// Directory of `<role>.txt` prompt overrides.
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreFiles {
    /// JSON snapshot loaded at startup and rewritten after every mutation.
    pub snapshot: Option<PathBuf>,
    /// CSV imported into the store at startup.
    pub seed_csv: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Config = toml::from_str(&raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// The configured providers, or their offline stand-ins when `scripted`.
    pub fn providers(&self, scripted: bool) -> ProvidersConfig {
        if scripted {
            self.providers.scripted()
        } else {
            self.providers.clone()
        }
    }

    /// Providers, store and engine as configured.
    pub async fn engine(&self, scripted: bool) -> Result<Engine, ConfigError> {
        self.validate()?;
        let providers = self.providers(scripted).build()?;
        let store = self.store.open(providers.embedder.clone()).await?;
        Ok(Engine::new(self.engine.clone(), Arc::new(store), providers.gateway, providers.rag).with_prompts(providers.prompts))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.service
            .listen
            .parse::<SocketAddr>()
            .map_err(|e| ConfigError::Invalid(format!("service.listen {:?}: {e}", self.service.listen)))?;
        self.engine.validate().map_err(|e| ConfigError::Invalid(format!("engine: {e}")))?;
        self.mining.validate().map_err(|e| ConfigError::Invalid(format!("mining: {e}")))?;
        self.providers
            .embedder
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("embedder: {e}")))?;
        Ok(())
    }
}

/// Live provider handles.
#[derive(Clone)]
pub struct Providers {
    pub gateway: Arc<LlmGateway>,
    pub embedder: Arc<dyn Embedder>,
    pub rag: RagClient,
    pub prompts: Arc<PromptSet>,
}

impl ProvidersConfig {
    /// Every remote provider replaced by its offline stand-in.
    pub fn scripted(&self) -> Self {
        let gateway = match &self.gateway {
            s @ ProviderSpec::Scripted { .. } => s.clone(),
            ProviderSpec::Remote { .. } => ProviderSpec::default(),
        };
        let embedder = match &self.embedder {
            s @ EmbedderSpec::Deterministic { .. } => s.clone(),
            EmbedderSpec::Remote { dim, .. } => EmbedderSpec::Deterministic {
                dim: *dim,
                seed: 0,
                latency_ms: 0,
            },
        };
        let rag = match &self.rag {
            s @ RagSpec::Scripted(_) => s.clone(),
            RagSpec::Remote { .. } => RagSpec::Scripted(ScriptedRag::default()),
        };
        Self {
            gateway,
            embedder,
            rag,
            prompts_dir: self.prompts_dir.clone(),
        }
    }

    pub fn build(&self) -> Result<Providers, ConfigError> {
        let prompts = match &self.prompts_dir {
            Some(dir) => PromptSet::load_dir(dir).map_err(|e| ConfigError::Invalid(format!("prompts_dir {}: {e}", dir.display())))?,
            None => PromptSet::builtin(),
        };
        Ok(Providers {
            gateway: Arc::new(self.gateway.build().map_err(ConfigError::Invalid)?),
            embedder: self.embedder.build().map_err(ConfigError::Invalid)?,
            rag: self.rag.build().map_err(ConfigError::Invalid)?,
            prompts: Arc::new(prompts),
        })
    }
}

impl StoreFiles {
    /// Opens the snapshot (or an empty in-memory store) and applies the seed
    /// CSV if one is configured.
    pub async fn open(&self, embedder: Arc<dyn Embedder>) -> Result<FaqStore, ConfigError> {
        let config = StoreConfig::new(embedder.dim());
        let store = match &self.snapshot {
            Some(path) => FaqStore::open(path, config, embedder)?,
            None => FaqStore::in_memory(config, embedder),
        };
        if let Some(csv) = &self.seed_csv {
            let report = store.import_csv(csv).await?;
            for bad in &report.malformed {
                tracing::warn!(line = bad.line, reason = %bad.reason, "skipped malformed seed row");
            }
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = Config::default();
        c.validate().unwrap();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<Config>(&text).unwrap(), c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: Config = toml::from_str(
            r#"
            [service]
            listen = "0.0.0.0:9000"
            [engine]
            trigger_interval = 2
            [providers.embedder]
            kind = "deterministic"
            dim = 64
            "#,
        )
        .unwrap();
        assert_eq!(c.engine.trigger_interval, 2);
        assert_eq!(c.engine.window_size, 6);
        assert_eq!(c.providers.embedder.dim(), 64);
        assert_eq!(c.mining.k, 85);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(toml::from_str::<Config>("[service]\nport = 1").is_err());
        let c: Config = toml::from_str("[service]\nlisten = \"nowhere\"").unwrap();
        assert!(c.validate().is_err());
        let c: Config = toml::from_str("[engine]\ndeadline_ms = 0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn scripted_replaces_remote_providers() {
        let c: Config = toml::from_str(
            r#"
            [providers.gateway]
            kind = "remote"
            model_id = "m"
            endpoint_env = "NOPE_ENDPOINT"
            [providers.embedder]
            kind = "remote"
            dim = 128
            endpoint_env = "NOPE_EMBED"
            [providers.rag]
            kind = "remote"
            endpoint_env = "NOPE_RAG"
            "#,
        )
        .unwrap();
        assert!(c.providers.build().is_err());
        let offline = c.providers.scripted();
        let p = offline.build().unwrap();
        assert_eq!(p.embedder.dim(), 128);
    }
}
