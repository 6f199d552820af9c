//! Service configuration.
//!
//! One TOML schema drives both the HTTP service and the CLI, so evaluation
//! numbers reflect exactly the code path production requests take. Every
//! response and report embeds the config fingerprint, making any decision
//! replayable against the configuration that produced it.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use switchboard_core::backend::{BackendDescriptor, BackendFactory};
use switchboard_core::decision::ParseMode;
use switchboard_core::orchestrate::{EndpointResolver, Orchestrator, PipelineConfig};
use switchboard_core::prompt::{TemplateSet, DEFAULT_MAX_AGENTS};
use switchboard_core::reward::{ConsistencyMode, CurationConfig, RewardConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub listen: String,
    pub registry_file: Option<PathBuf>,
    pub template_version: String,
    pub template_dir: Option<PathBuf>,
    pub max_agents: usize,
    pub parse_mode: ParseMode,
    pub router_backend: BackendDescriptor,
    pub refiner_backend: BackendDescriptor,
    pub default_agent_backend: Option<BackendDescriptor>,
    pub oos_refusal_text: String,
    pub retry_transport: bool,
    pub refiner_fallback: bool,
    pub timeouts: TimeoutConfig,
    pub limits: LimitConfig,
    pub sampling: SamplingConfig,
    pub reward: RewardDefaults,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeoutConfig {
    pub route_ms: u64,
    pub agent_ms: u64,
    pub refine_ms: u64,
}

impl Default for TimeoutConfig {
    fn default() -> Self {
        Self {
            route_ms: 30_000,
            agent_ms: 30_000,
            refine_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitConfig {
    /// Concurrent agent calls within one fan-out; 0 means "use max_agents".
    pub parallelism: usize,
    pub eval_concurrency: usize,
}

impl Default for LimitConfig {
    fn default() -> Self {
        Self {
            parallelism: 0,
            eval_concurrency: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Routing defaults to temperature 0 for determinism; rollout sampling
    /// for training data wants 1.
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardDefaults {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub consistency_mode: ConsistencyMode,
}

impl Default for RewardDefaults {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
            tau: 0.6,
            consistency_mode: ConsistencyMode::GoldAgreement,
        }
    }
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            registry_file: None,
            template_version: "v1".into(),
            template_dir: None,
            max_agents: DEFAULT_MAX_AGENTS,
            parse_mode: ParseMode::Lenient,
            router_backend: BackendDescriptor::Echo { label: None },
            refiner_backend: BackendDescriptor::Echo { label: None },
            default_agent_backend: None,
            oos_refusal_text: PipelineConfig::default().oos_refusal_text,
            retry_transport: true,
            refiner_fallback: true,
            timeouts: TimeoutConfig::default(),
            limits: LimitConfig::default(),
            sampling: SamplingConfig::default(),
            reward: RewardDefaults::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file `{}`", path.display()))?;
        let config: ServiceConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config file `{}`", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.max_agents == 0 {
            bail!("max_agents must be at least 1");
        }
        for (name, ms) in [
            ("timeouts.route_ms", self.timeouts.route_ms),
            ("timeouts.agent_ms", self.timeouts.agent_ms),
            ("timeouts.refine_ms", self.timeouts.refine_ms),
        ] {
            if ms == 0 {
                bail!("{name} must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.reward.alpha) {
            bail!("reward.alpha must be in [0, 1]");
        }
        if self.reward.beta < 0.0 {
            bail!("reward.beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.reward.tau) {
            bail!("reward.tau must be in [0, 1]");
        }
        if self.sampling.temperature < 0.0 {
            bail!("sampling.temperature must be non-negative");
        }
        if self.sampling.max_tokens == 0 {
            bail!("sampling.max_tokens must be positive");
        }
        Ok(())
    }

    /// Short stable hash of the canonical serialized config.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("serializable config");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn templates(&self) -> anyhow::Result<TemplateSet> {
        let set = match &self.template_dir {
            Some(dir) => TemplateSet::from_dir(dir, &self.template_version)?,
            None => TemplateSet::builtin(&self.template_version)?,
        };
        Ok(set)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            max_agents: self.max_agents,
            parse_mode: self.parse_mode,
            temperature: self.sampling.temperature,
            max_tokens: self.sampling.max_tokens,
            route_timeout: Duration::from_millis(self.timeouts.route_ms),
            agent_timeout: Duration::from_millis(self.timeouts.agent_ms),
            refine_timeout: Duration::from_millis(self.timeouts.refine_ms),
            parallelism: if self.limits.parallelism == 0 {
                self.max_agents
            } else {
                self.limits.parallelism
            },
            oos_refusal_text: self.oos_refusal_text.clone(),
            refiner_fallback: self.refiner_fallback,
        }
    }

    pub fn curation_config(&self) -> anyhow::Result<CurationConfig> {
        let reward = RewardConfig::new(self.reward.alpha, self.reward.beta)?;
        let mut config = CurationConfig::new(reward, self.reward.tau)?;
        config.consistency_mode = self.reward.consistency_mode;
        Ok(config)
    }

    /// Builds the orchestrator this config describes.
    pub fn build_orchestrator(&self) -> anyhow::Result<Orchestrator> {
        let factory = Arc::new(BackendFactory::new(self.retry_transport)?);
        let router = factory
            .build(&self.router_backend)
            .context("building router backend")?;
        let refiner = factory
            .build(&self.refiner_backend)
            .context("building refiner backend")?;
        let resolver = Arc::new(EndpointResolver::new(
            factory,
            self.default_agent_backend.clone(),
        ));
        Ok(Orchestrator::new(
            self.templates()?,
            self.pipeline_config(),
            router,
            refiner,
            resolver,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = ServiceConfig::default();
        config.validate().unwrap();
        assert_eq!(config.max_agents, 3);
        assert_eq!(config.reward.tau, 0.6);
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = ServiceConfig::default();
        let mut b = ServiceConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.max_agents = 2;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let tau = ServiceConfig {
            reward: RewardDefaults {
                tau: 1.5,
                ..RewardDefaults::default()
            },
            ..ServiceConfig::default()
        };
        assert!(tau.validate().is_err());

        let cap = ServiceConfig {
            max_agents: 0,
            ..ServiceConfig::default()
        };
        assert!(cap.validate().is_err());

        let timeout = ServiceConfig {
            timeouts: TimeoutConfig {
                agent_ms: 0,
                ..TimeoutConfig::default()
            },
            ..ServiceConfig::default()
        };
        assert!(timeout.validate().is_err());
    }

    #[test]
    fn parallelism_zero_falls_back_to_max_agents() {
        let config = ServiceConfig::default();
        assert_eq!(config.pipeline_config().parallelism, 3);
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
listen = "127.0.0.1:0"
max_agents = 2
parse_mode = "strict"

[router_backend]
kind = "echo"
label = "router"

[refiner_backend]
kind = "echo"

[timeouts]
route_ms = 5000

[reward]
alpha = 0.7
"#;
        let config: ServiceConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.max_agents, 2);
        assert_eq!(config.parse_mode, ParseMode::Strict);
        assert_eq!(config.timeouts.route_ms, 5000);
        assert_eq!(config.timeouts.agent_ms, 30_000);
        assert_eq!(config.reward.alpha, 0.7);
        assert_eq!(config.reward.beta, 0.1);
    }
}
