//! Completion backends.
//!
//! Everything that produces text — the router model, the refiner model, and
//! the downstream expert agents — is reached through one [`CompletionBackend`]
//! trait. Three implementations ship:
//!
//! - [`HttpBackend`]: OpenAI-compatible `/v1/chat/completions` over HTTP,
//!   the prompt sent as a single user message.
//! - [`ScriptedBackend`]: deterministic canned responses selected by prompt
//!   substring, with optional delays and fault injection. This is how the
//!   whole pipeline is tested without model weights or network access.
//! - [`EchoBackend`]: labels and returns the prompt; the fallback responder
//!   for agents registered without an endpoint.
//!
//! Every call is bounded by the request timeout; no backend observably
//! blocks past it plus scheduler jitter.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("completion timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("backend script `{origin}`: {reason}")]
    Script { origin: String, reason: String },
}

impl BackendError {
    /// Stable lowercase tag for logs and error-status agent responses.
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::Timeout(_) => "timeout",
            BackendError::Transport(_) => "transport",
            BackendError::Backend { .. } => "backend",
            BackendError::MalformedResponse(_) => "malformed_response",
            BackendError::InvalidRequest(_) => "invalid_request",
            BackendError::Script { .. } => "script",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout.is_zero() {
            return Err(BackendError::InvalidRequest("timeout must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(
                "temperature must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub text: String,
    pub latency: Duration,
    pub usage: Option<TokenUsage>,
}

#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest)
        -> Result<CompletionResult, BackendError>;
}

/// Draws `group_size` completions for the same request, in sampling order.
/// Per-call failures are kept in place rather than aborting the group, so a
/// partially failed rollout batch stays position-aligned.
pub async fn sample_group(
    backend: &dyn CompletionBackend,
    request: &CompletionRequest,
    group_size: usize,
) -> Vec<Result<CompletionResult, BackendError>> {
    let mut results = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        results.push(backend.complete(request).await);
    }
    results
}

/// How to reach a backend; serializable so configs, registry files, and CLI
/// flags all describe backends the same way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    /// OpenAI-compatible chat-completion server. `api_key_env` names an
    /// environment variable holding the bearer token, so credentials stay
    /// out of config files.
    Http {
        base_url: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
    /// Scripted backend loaded from a TOML rule file.
    Script { path: PathBuf },
    /// Echo responder; `label` defaults to "echo".
    Echo {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// Never answers; the caller's timeout fires.
    Hang,
    /// HTTP-style error status.
    Http { status: u16, body: String },
    /// Response that cannot be interpreted as a completion.
    Malformed,
}

#[derive(Debug)]
enum RuleAction {
    Reply(String),
    /// Canned response cycle for group sampling: call `i` returns
    /// `texts[i % len]`.
    Cycle {
        texts: Vec<String>,
        cursor: AtomicUsize,
    },
    Fault(Fault),
}

#[derive(Debug)]
struct CompiledRule {
    contains: String,
    delay: Duration,
    action: RuleAction,
}

impl CompiledRule {
    async fn run(&self) -> Result<String, BackendError> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        match &self.action {
            RuleAction::Reply(text) => Ok(text.clone()),
            RuleAction::Cycle { texts, cursor } => {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                Ok(texts[i % texts.len()].clone())
            }
            RuleAction::Fault(Fault::Hang) => {
                futures::future::pending::<()>().await;
                unreachable!("pending future never resolves")
            }
            RuleAction::Fault(Fault::Http { status, body }) => Err(BackendError::Backend {
                status: *status,
                body: body.clone(),
            }),
            RuleAction::Fault(Fault::Malformed) => Err(BackendError::MalformedResponse(
                "scripted malformed response".into(),
            )),
        }
    }
}

/// File schema for one rule: `contains` plus exactly one of `reply`,
/// `cycle`, or `fault`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptRuleSpec {
    #[serde(default)]
    pub contains: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    rules: Vec<ScriptRuleSpec>,
    #[serde(default)]
    default: Option<ScriptRuleSpec>,
}

/// Deterministic canned backend: the first rule whose `contains` substring
/// occurs in the prompt wins, then the `default` action if none match.
/// Apart from explicit `cycle` rules it is a pure function of the prompt.
#[derive(Debug)]
pub struct ScriptedBackend {
    origin: String,
    rules: Vec<CompiledRule>,
    default: Option<CompiledRule>,
}

impl ScriptedBackend {
    pub fn builder() -> ScriptedBackendBuilder {
        ScriptedBackendBuilder::default()
    }

    /// Backend that answers every prompt with the same text.
    pub fn always(text: impl Into<String>) -> Self {
        Self::builder().default_reply(text).build()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Script {
            origin: origin.clone(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text, &origin)
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, BackendError> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| BackendError::Script {
            origin: origin.to_string(),
            reason: e.to_string(),
        })?;
        let compile = |spec: ScriptRuleSpec| -> Result<CompiledRule, BackendError> {
            let actions = usize::from(spec.reply.is_some())
                + usize::from(spec.cycle.is_some())
                + usize::from(spec.fault.is_some());
            if actions != 1 {
                return Err(BackendError::Script {
                    origin: origin.to_string(),
                    reason: format!(
                        "rule `{}` must set exactly one of reply/cycle/fault",
                        spec.contains
                    ),
                });
            }
            let action = if let Some(reply) = spec.reply {
                RuleAction::Reply(reply)
            } else if let Some(texts) = spec.cycle {
                if texts.is_empty() {
                    return Err(BackendError::Script {
                        origin: origin.to_string(),
                        reason: "cycle must not be empty".into(),
                    });
                }
                RuleAction::Cycle {
                    texts,
                    cursor: AtomicUsize::new(0),
                }
            } else {
                RuleAction::Fault(spec.fault.expect("one action set"))
            };
            Ok(CompiledRule {
                contains: spec.contains,
                delay: Duration::from_millis(spec.delay_ms),
                action,
            })
        };
        Ok(Self {
            origin: origin.to_string(),
            rules: file.rules.into_iter().map(compile).collect::<Result<_, _>>()?,
            default: file.default.map(compile).transpose()?,
        })
    }

    fn matching_rule(&self, prompt: &str) -> Option<&CompiledRule> {
        self.rules
            .iter()
            .find(|rule| prompt.contains(&rule.contains))
            .or(self.default.as_ref())
    }
}

#[async_trait]
impl CompletionBackend for ScriptedBackend {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let rule = self.matching_rule(&request.prompt).ok_or_else(|| {
            BackendError::Script {
                origin: self.origin.clone(),
                reason: "no rule matched the prompt and no default is set".into(),
            }
        })?;
        match tokio::time::timeout(request.timeout, rule.run()).await {
            Ok(Ok(text)) => Ok(CompletionResult {
                text,
                latency: started.elapsed(),
                usage: None,
            }),
            Ok(Err(err)) => Err(err),
            Err(_) => Err(BackendError::Timeout(request.timeout)),
        }
    }
}

#[derive(Debug, Default)]
pub struct ScriptedBackendBuilder {
    rules: Vec<CompiledRule>,
    default: Option<CompiledRule>,
}

impl ScriptedBackendBuilder {
    pub fn on(mut self, contains: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(CompiledRule {
            contains: contains.into(),
            delay: Duration::ZERO,
            action: RuleAction::Reply(reply.into()),
        });
        self
    }

    pub fn on_delayed(
        mut self,
        contains: impl Into<String>,
        reply: impl Into<String>,
        delay: Duration,
    ) -> Self {
        self.rules.push(CompiledRule {
            contains: contains.into(),
            delay,
            action: RuleAction::Reply(reply.into()),
        });
        self
    }

    pub fn on_cycle(mut self, contains: impl Into<String>, texts: Vec<String>) -> Self {
        assert!(!texts.is_empty(), "cycle must not be empty");
        self.rules.push(CompiledRule {
            contains: contains.into(),
            delay: Duration::ZERO,
            action: RuleAction::Cycle {
                texts,
                cursor: AtomicUsize::new(0),
            },
        });
        self
    }

    pub fn on_fault(mut self, contains: impl Into<String>, fault: Fault) -> Self {
        self.rules.push(CompiledRule {
            contains: contains.into(),
            delay: Duration::ZERO,
            action: RuleAction::Fault(fault),
        });
        self
    }

    pub fn default_reply(mut self, text: impl Into<String>) -> Self {
        self.default = Some(CompiledRule {
            contains: String::new(),
            delay: Duration::ZERO,
            action: RuleAction::Reply(text.into()),
        });
        self
    }

    pub fn default_fault(mut self, fault: Fault) -> Self {
        self.default = Some(CompiledRule {
            contains: String::new(),
            delay: Duration::ZERO,
            action: RuleAction::Fault(fault),
        });
        self
    }

    pub fn build(self) -> ScriptedBackend {
        ScriptedBackend {
            origin: "<memory>".into(),
            rules: self.rules,
            default: self.default,
        }
    }

    pub fn build_arc(self) -> Arc<ScriptedBackend> {
        Arc::new(self.build())
    }
}

// ---------------------------------------------------------------------------
// Echo backend
// ---------------------------------------------------------------------------

/// Returns the prompt tagged with a label. Stands in for expert agents that
/// have no endpoint configured, keeping the pipeline runnable end to end.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    label: String,
}

impl EchoBackend {
    pub fn new(label: impl Into<String>) -> Self {
        Self { label: label.into() }
    }
}

#[async_trait]
impl CompletionBackend for EchoBackend {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        Ok(CompletionResult {
            text: format!("[{}] {}", self.label, request.prompt),
            latency: Duration::ZERO,
            usage: None,
        })
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    #[serde(default)]
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// OpenAI-compatible chat-completion client. The rendered prompt travels as
/// one user message; the first choice's message content comes back as the
/// completion text.
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    /// Retry once on transport errors. Timeouts are never retried: routing
    /// is latency-bounded and a retry would double the worst case.
    retry_transport: bool,
}

impl HttpBackend {
    pub fn new(
        client: reqwest::Client,
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        retry_transport: bool,
    ) -> Self {
        Self {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            retry_transport,
        }
    }

    async fn attempt(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = ChatRequestBody {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut builder = self
            .client
            .post(format!("{}/v1/chat/completions", self.base_url))
            .timeout(request.timeout)
            .json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(request.timeout)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(BackendError::Backend {
                status: status.as_u16(),
                body,
            });
        }
        let text = response
            .text()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(text)
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let raw = match self.attempt(request).await {
            Err(BackendError::Transport(first)) if self.retry_transport => {
                tracing::debug!(error = %first, "retrying after transport error");
                self.attempt(request).await?
            }
            other => other?,
        };
        let parsed: ChatResponseBody = serde_json::from_str(&raw)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                BackendError::MalformedResponse("response carries no message content".into())
            })?;
        Ok(CompletionResult {
            text,
            latency: started.elapsed(),
            usage: parsed.usage.map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

// ---------------------------------------------------------------------------
// Factory
// ---------------------------------------------------------------------------

/// Builds backends from descriptors. Scripted backends are cached by path so
/// every caller shares one script state machine; HTTP backends share one
/// connection pool.
pub struct BackendFactory {
    client: reqwest::Client,
    retry_transport: bool,
    scripts: Mutex<HashMap<PathBuf, Arc<ScriptedBackend>>>,
}

impl BackendFactory {
    pub fn new(retry_transport: bool) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            retry_transport,
            scripts: Mutex::new(HashMap::new()),
        })
    }

    pub fn build(
        &self,
        descriptor: &BackendDescriptor,
    ) -> Result<Arc<dyn CompletionBackend>, BackendError> {
        match descriptor {
            BackendDescriptor::Http {
                base_url,
                model,
                api_key_env,
            } => {
                let api_key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        BackendError::InvalidRequest(format!(
                            "environment variable `{var}` is not set"
                        ))
                    })?),
                    None => None,
                };
                Ok(Arc::new(HttpBackend::new(
                    self.client.clone(),
                    base_url,
                    model,
                    api_key,
                    self.retry_transport,
                )))
            }
            BackendDescriptor::Script { path } => {
                let mut cache = self.scripts.lock().expect("script cache lock");
                if let Some(backend) = cache.get(path) {
                    return Ok(backend.clone());
                }
                let backend = Arc::new(ScriptedBackend::from_file(path)?);
                cache.insert(path.clone(), backend.clone());
                Ok(backend)
            }
            BackendDescriptor::Echo { label } => Ok(Arc::new(EchoBackend::new(
                label.clone().unwrap_or_else(|| "echo".into()),
            ))),
        }
    }
}
