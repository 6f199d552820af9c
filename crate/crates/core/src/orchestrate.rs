//! The routing pipeline.
//!
//! One [`Orchestrator`] owns the router backend, the refiner backend, and a
//! resolver that maps agent cards to their responder backends. `route` turns
//! a conversation into a [`RoutingDecision`]; `answer` runs the full
//! pipeline: route, invoke every selected agent in parallel, then either
//! hand back the lone agent's response (solo path) or merge the responses
//! through the refiner.
//!
//! Every invocation works against one immutable registry [`Snapshot`], so a
//! pool mutation mid-request can never produce a prompt/parse mismatch, and
//! every stage is timed separately so routing, fan-out, and refining costs
//! stay individually visible.

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde::Serialize;
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::backend::{
    BackendDescriptor, BackendError, BackendFactory, CompletionBackend, CompletionRequest,
    EchoBackend,
};
use crate::decision::{parse_decision, ParseError, ParseMode, RoutingDecision, Selection};
use crate::prompt::{
    render_refiner_prompt, render_router_prompt, ChatHistory, PromptBundle, PromptError,
    TemplateSet, DEFAULT_MAX_AGENTS,
};
use crate::registry::{AgentCard, Snapshot};

/// Pipeline stage, used both for trace timings and error attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Render,
    Route,
    Parse,
    FanOut,
    Refine,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Render => f.write_str("render"),
            Stage::Route => f.write_str("route"),
            Stage::Parse => f.write_str("parse"),
            Stage::FanOut => f.write_str("fan_out"),
            Stage::Refine => f.write_str("refine"),
        }
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageFailure,
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("every selected agent failed")]
    AllAgentsFailed,
    #[error("cannot fan out an out-of-scope decision")]
    OutOfScopeSelection,
}

fn fail(stage: Stage, source: impl Into<StageFailure>) -> PipelineError {
    PipelineError {
        stage,
        source: source.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    Solo,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error { kind: String },
}

/// One expert agent's answer to the query.
#[derive(Debug, Clone, Serialize)]
pub struct AgentResponse {
    pub agent_id: String,
    pub text: String,
    pub latency_ms: u64,
    #[serde(flatten)]
    pub status: ResponseStatus,
}

impl AgentResponse {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, ResponseStatus::Ok)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub elapsed_ms: u64,
}

/// Per-request execution record: which registry revision served it, which
/// stages ran and for how long, and whether the refiner fallback fired.
#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub registry_revision: u64,
    pub stages: Vec<StageTiming>,
    pub refiner_fallback: bool,
}

/// Final pipeline output.
#[derive(Debug, Clone, Serialize)]
pub struct RefinedAnswer {
    pub text: String,
    /// Agents whose responses contributed to `text`. Empty only for
    /// out-of-scope refusals.
    pub sources: Vec<String>,
    /// Solo when at most one response produced the text, refined when two or
    /// more were merged.
    pub mode: AnswerMode,
    pub decision: RoutingDecision,
    pub trace: Trace,
}

/// Result of route-only mode.
#[derive(Debug, Clone)]
pub struct RouteOutcome {
    pub decision: RoutingDecision,
    pub registry_revision: u64,
    pub prompt_tokens: usize,
    pub latency: Duration,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_agents: usize,
    pub parse_mode: ParseMode,
    pub temperature: f64,
    pub max_tokens: u32,
    pub route_timeout: Duration,
    pub agent_timeout: Duration,
    pub refine_timeout: Duration,
    /// Upper bound on concurrent agent calls within one fan-out.
    pub parallelism: usize,
    /// End-user text returned for out-of-scope decisions.
    pub oos_refusal_text: String,
    /// On refiner failure, fall back to the first successful agent response
    /// instead of failing the request.
    pub refiner_fallback: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_agents: DEFAULT_MAX_AGENTS,
            parse_mode: ParseMode::Lenient,
            temperature: 0.0,
            max_tokens: 1024,
            route_timeout: Duration::from_secs(30),
            agent_timeout: Duration::from_secs(30),
            refine_timeout: Duration::from_secs(30),
            parallelism: DEFAULT_MAX_AGENTS,
            oos_refusal_text:
                "No registered agent can handle this request, so it cannot be answered here."
                    .into(),
            refiner_fallback: true,
        }
    }
}

/// Maps an agent card to the backend that answers as that agent.
pub trait AgentResolver: Send + Sync {
    fn resolve(&self, card: &AgentCard) -> Result<Arc<dyn CompletionBackend>, BackendError>;
}

/// Default resolver: the card's own endpoint descriptor, else the configured
/// default agent backend, else an echo responder labelled with the agent id.
pub struct EndpointResolver {
    factory: Arc<BackendFactory>,
    default_backend: Option<BackendDescriptor>,
}

impl EndpointResolver {
    pub fn new(factory: Arc<BackendFactory>, default_backend: Option<BackendDescriptor>) -> Self {
        Self {
            factory,
            default_backend,
        }
    }
}

impl AgentResolver for EndpointResolver {
    fn resolve(&self, card: &AgentCard) -> Result<Arc<dyn CompletionBackend>, BackendError> {
        match card.endpoint.as_ref().or(self.default_backend.as_ref()) {
            Some(descriptor) => self.factory.build(descriptor),
            None => Ok(Arc::new(EchoBackend::new(&card.id))),
        }
    }
}

pub struct Orchestrator {
    templates: TemplateSet,
    config: PipelineConfig,
    router: Arc<dyn CompletionBackend>,
    refiner: Arc<dyn CompletionBackend>,
    agents: Arc<dyn AgentResolver>,
}

impl Orchestrator {
    pub fn new(
        templates: TemplateSet,
        config: PipelineConfig,
        router: Arc<dyn CompletionBackend>,
        refiner: Arc<dyn CompletionBackend>,
        agents: Arc<dyn AgentResolver>,
    ) -> Self {
        Self {
            templates,
            config,
            router,
            refiner,
            agents,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// The exact router prompt a snapshot+history pair produces; exposed for
    /// audit (`--dump-prompt`).
    pub fn render_prompt(
        &self,
        snapshot: &Snapshot,
        history: &ChatHistory,
    ) -> Result<PromptBundle, PipelineError> {
        render_router_prompt(&self.templates, snapshot, history, self.config.max_agents)
            .map_err(|e| fail(Stage::Render, e))
    }

    /// Route-only mode: render, complete against the router backend, parse.
    /// An out-of-scope decision is a valid outcome, not an error.
    pub async fn route(
        &self,
        history: &ChatHistory,
        snapshot: &Snapshot,
    ) -> Result<RouteOutcome, PipelineError> {
        let started = Instant::now();
        let bundle = self.render_prompt(snapshot, history)?;
        let request = CompletionRequest {
            prompt: bundle.text,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            timeout: self.config.route_timeout,
        };
        let completion = self
            .router
            .complete(&request)
            .await
            .map_err(|e| fail(Stage::Route, e))?;
        let decision = parse_decision(
            &completion.text,
            &snapshot.id_set(),
            self.config.max_agents,
            self.config.parse_mode,
        )
        .map_err(|e| fail(Stage::Parse, e))?;
        Ok(RouteOutcome {
            decision,
            registry_revision: snapshot.revision(),
            prompt_tokens: bundle.token_estimate,
            latency: started.elapsed(),
        })
    }

    /// Invokes every selected agent concurrently with per-agent timeouts.
    /// Output order matches selection order regardless of completion order;
    /// failed agents come back as error-status responses, and only a batch
    /// with zero successes is an error.
    pub async fn fan_out(
        &self,
        query: &str,
        decision: &RoutingDecision,
        snapshot: &Snapshot,
    ) -> Result<Vec<AgentResponse>, PipelineError> {
        let ids = match &decision.selection {
            Selection::Oos => {
                return Err(fail(Stage::FanOut, StageFailure::OutOfScopeSelection))
            }
            Selection::Agents { ids } => ids,
        };
        let semaphore = Arc::new(Semaphore::new(self.config.parallelism.max(1)));
        let calls = ids.iter().map(|id| {
            let semaphore = semaphore.clone();
            async move {
                let _permit = semaphore.acquire().await.expect("semaphore open");
                self.call_agent(id, query, snapshot).await
            }
        });
        let responses = join_all(calls).await;
        if responses.iter().all(|r| !r.is_ok()) {
            return Err(fail(Stage::FanOut, StageFailure::AllAgentsFailed));
        }
        Ok(responses)
    }

    async fn call_agent(&self, id: &str, query: &str, snapshot: &Snapshot) -> AgentResponse {
        let started = Instant::now();
        let error = |kind: &str, started: Instant| AgentResponse {
            agent_id: id.to_string(),
            text: String::new(),
            latency_ms: started.elapsed().as_millis() as u64,
            status: ResponseStatus::Error { kind: kind.into() },
        };
        let card = match snapshot.get(id) {
            Some(card) => card,
            // Parse validated ids against this snapshot, so a miss means the
            // caller paired a decision with the wrong snapshot.
            None => return error("unknown_agent", started),
        };
        let backend = match self.agents.resolve(card) {
            Ok(backend) => backend,
            Err(e) => {
                tracing::warn!(agent = id, error = %e, "agent backend resolution failed");
                return error(e.kind(), started);
            }
        };
        let request = CompletionRequest {
            prompt: query.to_string(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            timeout: self.config.agent_timeout,
        };
        match backend.complete(&request).await {
            Ok(result) => AgentResponse {
                agent_id: id.to_string(),
                text: result.text,
                latency_ms: started.elapsed().as_millis() as u64,
                status: ResponseStatus::Ok,
            },
            Err(e) => error(e.kind(), started),
        }
    }

    /// Full pipeline. Out-of-scope yields the configured refusal with no
    /// agent calls; a single selected agent answers directly; two or more
    /// fan out and the refiner merges the successful responses.
    pub async fn answer(
        &self,
        history: &ChatHistory,
        snapshot: &Snapshot,
    ) -> Result<RefinedAnswer, PipelineError> {
        let mut stages = Vec::new();
        let route_started = Instant::now();
        let routed = self.route(history, snapshot).await?;
        stages.push(StageTiming {
            stage: Stage::Route,
            elapsed_ms: route_started.elapsed().as_millis() as u64,
        });
        let decision = routed.decision;

        if decision.selection.is_oos() {
            return Ok(RefinedAnswer {
                text: self.config.oos_refusal_text.clone(),
                sources: Vec::new(),
                mode: AnswerMode::Solo,
                decision,
                trace: Trace {
                    registry_revision: snapshot.revision(),
                    stages,
                    refiner_fallback: false,
                },
            });
        }

        let query = history.query();
        let fan_out_started = Instant::now();
        let responses = self.fan_out(query, &decision, snapshot).await?;
        stages.push(StageTiming {
            stage: Stage::FanOut,
            elapsed_ms: fan_out_started.elapsed().as_millis() as u64,
        });

        let ok: Vec<&AgentResponse> = responses.iter().filter(|r| r.is_ok()).collect();
        debug_assert!(!ok.is_empty(), "fan_out guarantees at least one success");

        // Solo path: a single selected agent answers directly.
        if decision.selection.ids().len() == 1 {
            let only = ok[0];
            return Ok(RefinedAnswer {
                text: only.text.clone(),
                sources: vec![only.agent_id.clone()],
                mode: AnswerMode::Solo,
                decision,
                trace: Trace {
                    registry_revision: snapshot.revision(),
                    stages,
                    refiner_fallback: false,
                },
            });
        }

        // Refining path. Failed agents are excluded from the refiner input:
        // the refiner compares substantive answers, and error strings would
        // pollute its conflict detection.
        let answers: Vec<(String, String)> = ok
            .iter()
            .map(|r| (r.agent_id.clone(), r.text.clone()))
            .collect();
        let refine_started = Instant::now();
        let prompt = render_refiner_prompt(&self.templates, query, &answers)
            .map_err(|e| fail(Stage::Refine, e))?;
        let request = CompletionRequest {
            prompt,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            timeout: self.config.refine_timeout,
        };
        let refined = self.refiner.complete(&request).await;
        stages.push(StageTiming {
            stage: Stage::Refine,
            elapsed_ms: refine_started.elapsed().as_millis() as u64,
        });

        match refined {
            Ok(result) => {
                let sources: Vec<String> =
                    answers.iter().map(|(id, _)| id.clone()).collect();
                let mode = if sources.len() >= 2 {
                    AnswerMode::Refined
                } else {
                    AnswerMode::Solo
                };
                Ok(RefinedAnswer {
                    text: result.text,
                    sources,
                    mode,
                    decision,
                    trace: Trace {
                        registry_revision: snapshot.revision(),
                        stages,
                        refiner_fallback: false,
                    },
                })
            }
            Err(e) if self.config.refiner_fallback => {
                tracing::warn!(error = %e, "refiner failed; falling back to best raw response");
                let best = ok[0];
                Ok(RefinedAnswer {
                    text: best.text.clone(),
                    sources: vec![best.agent_id.clone()],
                    mode: AnswerMode::Solo,
                    decision,
                    trace: Trace {
                        registry_revision: snapshot.revision(),
                        stages,
                        refiner_fallback: true,
                    },
                })
            }
            Err(e) => Err(fail(Stage::Refine, e)),
        }
    }
}
