//! Command-line interface.
//!
//! Subcommands share the service configuration schema and the orchestrator
//! code path, so a batch eval measures exactly what the HTTP gateway would
//! serve. Machine-readable results go to stdout; progress and warnings go to
//! stderr.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use switchboard_core::backend::BackendDescriptor;
use switchboard_core::decision::ParseMode;
use switchboard_core::eval::{
    collect_transcripts, load_dataset, load_pools, run_eval, DatasetFormat, EvalOptions, PoolMap,
};
use switchboard_core::prompt::{ChatHistory, Turn};
use switchboard_core::registry::{Registry, SharedRegistry};
use switchboard_core::reward::{
    curate, load_rollout_groups, render_curation_summary, write_curated_groups, ConsistencyMode,
    CurationConfig, RewardConfig,
};

use crate::config::ServiceConfig;
use crate::http::{app, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "switchboard",
    version,
    about = "Multi-agent routing gateway: serve, route, answer, eval, curate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP gateway.
    Serve {
        /// Service configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Route a query and print the decision as JSON.
    Route(QueryArgs),
    /// Run the full pipeline and print the refined answer as JSON.
    Answer(QueryArgs),
    /// Evaluate a dataset against a backend and write a report.
    Eval(EvalArgs),
    /// Filter rollout groups into an RL training set with rewards attached.
    Curate(CurateArgs),
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Registry file (TOML) describing the agent pool.
    #[arg(long)]
    pub registry: PathBuf,
    /// Single-turn query text.
    #[arg(long, conflicts_with = "history_file")]
    pub query: Option<String>,
    /// JSON file with {"turns": [{"speaker": "...", "text": "..."}]}.
    #[arg(long)]
    pub history_file: Option<PathBuf>,
    /// Router backend descriptor file (TOML).
    #[arg(long)]
    pub backend: Option<PathBuf>,
    /// Refiner backend descriptor file (TOML); answer mode only.
    #[arg(long)]
    pub refiner_backend: Option<PathBuf>,
    /// Service configuration file providing defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the exact rendered router prompt and exit.
    #[arg(long)]
    pub dump_prompt: bool,
    /// Reject repairs (unknown ids, over-cap selections) instead of fixing
    /// them up.
    #[arg(long)]
    pub strict: bool,
    /// Selection cap override.
    #[arg(long)]
    pub max_agents: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Line-delimited dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Record layout.
    #[arg(long, default_value = "flat", value_parser = parse_dataset_format)]
    pub format: DatasetFormat,
    /// Shared-pool sidecar file (TOML).
    #[arg(long)]
    pub pools: Option<PathBuf>,
    /// Router backend descriptor file (TOML).
    #[arg(long)]
    pub backend: Option<PathBuf>,
    /// Metric emphasised by the summary line.
    #[arg(long, default_value = "accuracy")]
    pub mode: EvalMode,
    /// Service configuration file providing defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the full report (JSON) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also run the full answer pipeline and write (query, refined answer)
    /// pairs (JSONL) here for external judging.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Skip malformed dataset lines instead of aborting.
    #[arg(long)]
    pub lenient: bool,
    /// Strict parse mode for routing decisions.
    #[arg(long)]
    pub strict: bool,
    /// Samples evaluated concurrently.
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    Accuracy,
    F1,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Line-delimited rollout file.
    #[arg(long)]
    pub rollouts: PathBuf,
    /// Precision/coverage trade-off weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Length-penalty weight.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Consistency threshold; groups above it are dropped.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Selection cap used when parsing raw completions.
    #[arg(long)]
    pub max_agents: Option<usize>,
    /// What consistency measures: agreement with gold or with the modal
    /// rollout.
    #[arg(long, value_enum, default_value = "gold")]
    pub consistency: ConsistencyFlag,
    /// Service configuration file providing defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write surviving groups (JSONL) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write config + stats (JSON) here.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ConsistencyFlag {
    Gold,
    Modal,
}

fn parse_dataset_format(s: &str) -> Result<DatasetFormat, String> {
    s.parse()
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { config } => serve(config).await,
        Command::Route(args) => route(args).await,
        Command::Answer(args) => answer(args).await,
        Command::Eval(args) => eval(args).await,
        Command::Curate(args) => curate_cmd(args).await,
    }
}

fn load_base_config(path: &Option<PathBuf>) -> anyhow::Result<ServiceConfig> {
    match path {
        Some(path) => ServiceConfig::load(path),
        None => Ok(ServiceConfig::default()),
    }
}

fn load_descriptor(path: &PathBuf) -> anyhow::Result<BackendDescriptor> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading backend descriptor `{}`", path.display()))?;
    toml::from_str(&text)
        .with_context(|| format!("parsing backend descriptor `{}`", path.display()))
}

fn apply_query_overrides(config: &mut ServiceConfig, args: &QueryArgs) -> anyhow::Result<()> {
    if let Some(path) = &args.backend {
        config.router_backend = load_descriptor(path)?;
    }
    if let Some(path) = &args.refiner_backend {
        config.refiner_backend = load_descriptor(path)?;
    }
    if args.strict {
        config.parse_mode = ParseMode::Strict;
    }
    if let Some(cap) = args.max_agents {
        config.max_agents = cap;
    }
    config.validate()
}

fn load_history(args: &QueryArgs) -> anyhow::Result<ChatHistory> {
    #[derive(Deserialize)]
    struct HistoryDoc {
        turns: Vec<Turn>,
    }
    match (&args.query, &args.history_file) {
        (Some(query), None) => Ok(ChatHistory::single(query.clone())),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading history file `{}`", path.display()))?;
            let doc: HistoryDoc = serde_json::from_str(&text)
                .with_context(|| format!("parsing history file `{}`", path.display()))?;
            Ok(ChatHistory::new(doc.turns)?)
        }
        (None, None) => bail!("one of --query or --history-file is required"),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    }
}

async fn serve(config_path: PathBuf) -> anyhow::Result<()> {
    let config = ServiceConfig::load(&config_path)?;
    let registry_path = config
        .registry_file
        .as_ref()
        .context("config must set `registry_file` to serve")?;
    let registry = Registry::load(registry_path)?;
    tracing::info!(
        agents = registry.len(),
        revision = registry.revision(),
        "registry loaded"
    );
    let state = AppState {
        registry: SharedRegistry::new(registry),
        orchestrator: std::sync::Arc::new(config.build_orchestrator()?),
        config_fingerprint: config.fingerprint(),
        template_version: config.template_version.clone(),
    };
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .with_context(|| format!("binding `{}`", config.listen))?;
    tracing::info!(addr = %listener.local_addr()?, "gateway listening");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
    Ok(())
}

async fn route(args: QueryArgs) -> anyhow::Result<()> {
    let mut config = load_base_config(&args.config)?;
    apply_query_overrides(&mut config, &args)?;
    let registry = Registry::load(&args.registry)?;
    let history = load_history(&args)?;
    let orchestrator = config.build_orchestrator()?;
    let snapshot = registry.snapshot();

    if args.dump_prompt {
        let bundle = orchestrator.render_prompt(&snapshot, &history)?;
        std::io::stdout().write_all(bundle.text.as_bytes())?;
        return Ok(());
    }

    let outcome = orchestrator.route(&history, &snapshot).await?;
    let output = json!({
        "decision": outcome.decision,
        "registry_revision": outcome.registry_revision,
        "prompt_tokens": outcome.prompt_tokens,
        "latency_ms": outcome.latency.as_millis() as u64,
        "config_fingerprint": config.fingerprint(),
    });
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

async fn answer(args: QueryArgs) -> anyhow::Result<()> {
    let mut config = load_base_config(&args.config)?;
    apply_query_overrides(&mut config, &args)?;
    let registry = Registry::load(&args.registry)?;
    let history = load_history(&args)?;
    let orchestrator = config.build_orchestrator()?;
    let snapshot = registry.snapshot();

    if args.dump_prompt {
        let bundle = orchestrator.render_prompt(&snapshot, &history)?;
        std::io::stdout().write_all(bundle.text.as_bytes())?;
        return Ok(());
    }

    let answer = orchestrator.answer(&history, &snapshot).await?;
    let mut output = serde_json::to_value(&answer)?;
    output["config_fingerprint"] = json!(config.fingerprint());
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(())
}

async fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let mut config = load_base_config(&args.config)?;
    if let Some(path) = &args.backend {
        config.router_backend = load_descriptor(path)?;
    }
    if args.strict {
        config.parse_mode = ParseMode::Strict;
    }
    config.validate()?;

    let pools: PoolMap = match &args.pools {
        Some(path) => load_pools(path)?,
        None => PoolMap::new(),
    };
    let load = load_dataset(&args.dataset, args.format, &pools, args.lenient)?;
    for fault in &load.faults {
        eprintln!("dataset line {}: {}", fault.line, fault.message);
    }
    if load.samples.is_empty() {
        bail!("dataset contains no usable samples");
    }

    let orchestrator = config.build_orchestrator()?;
    let options = EvalOptions {
        concurrency: args
            .concurrency
            .unwrap_or(config.limits.eval_concurrency)
            .max(1),
        config_fingerprint: config.fingerprint(),
    };
    let report = run_eval(&load.samples, &orchestrator, &options).await;

    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing report `{}`", path.display()))?;
    }
    if let Some(path) = &args.transcript {
        let entries =
            collect_transcripts(&load.samples, &orchestrator, options.concurrency).await;
        let mut body = String::new();
        for entry in &entries {
            body.push_str(&serde_json::to_string(entry)?);
            body.push('\n');
        }
        std::fs::write(path, body)
            .with_context(|| format!("writing transcript `{}`", path.display()))?;
    }
    println!("{}", report.render_summary());
    match args.mode {
        EvalMode::Accuracy => match report.accuracy {
            Some(accuracy) => println!("accuracy {accuracy:.4}"),
            None => bail!("accuracy is undefined on this dataset (multi-label golds)"),
        },
        EvalMode::F1 => println!("f1 {:.4}", report.f1_macro),
    }
    Ok(())
}

async fn curate_cmd(args: CurateArgs) -> anyhow::Result<()> {
    let base = load_base_config(&args.config)?;
    let reward = RewardConfig::new(
        args.alpha.unwrap_or(base.reward.alpha),
        args.beta.unwrap_or(base.reward.beta),
    )?;
    let mut curation = CurationConfig::new(reward, args.tau.unwrap_or(base.reward.tau))?;
    curation.consistency_mode = match args.consistency {
        ConsistencyFlag::Gold => ConsistencyMode::GoldAgreement,
        ConsistencyFlag::Modal => ConsistencyMode::ModalAgreement,
    };
    let max_agents = args.max_agents.unwrap_or(base.max_agents);

    let load = load_rollout_groups(&args.rollouts, max_agents)?;
    for fault in &load.faults {
        eprintln!("rollout line {}: {}", fault.line, fault.message);
    }
    let dataset = curate(&load.groups, &curation);

    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .with_context(|| format!("writing curated dataset `{}`", path.display()))?;
        write_curated_groups(&dataset, std::io::BufWriter::new(file))?;
    }
    if let Some(path) = &args.stats {
        let body = json!({ "config": dataset.config, "stats": dataset.stats });
        std::fs::write(path, serde_json::to_string_pretty(&body)?)
            .with_context(|| format!("writing stats `{}`", path.display()))?;
    }
    println!("{}", render_curation_summary(&dataset));
    let removed =
        dataset.stats.total - dataset.stats.kept;
    println!("kept {} removed {}", dataset.stats.kept, removed);
    Ok(())
}
