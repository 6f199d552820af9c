//! Deterministic prompt construction.
//!
//! Renders the router prompt (instruction + agent list + chat history) and
//! the refiner prompt (query + per-agent answers) from versioned template
//! files. Rendering is a pure function of its inputs: identical inputs yield
//! identical bytes, and interpolation is single-pass so payload text that
//! happens to contain a placeholder is never re-expanded.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::Snapshot;

/// Documented token-estimate heuristic: one token per this many characters,
/// rounded up. Coarse on purpose; the estimate exists so operators can police
/// backend context limits on large pools, not for billing.
pub const CHARS_PER_TOKEN: usize = 4;

/// Selection cap interpolated into the v1 router template by default.
pub const DEFAULT_MAX_AGENTS: usize = 3;

const ROUTER_V1: &str = include_str!("../templates/router_v1.txt");
const REFINER_V1: &str = include_str!("../templates/refiner_v1.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("agent pool is empty")]
    EmptyPool,
    #[error("invalid chat history: {0}")]
    InvalidHistory(String),
    #[error("refiner prompt needs at least one answer")]
    EmptyAnswers,
    #[error("max_agents must be at least 1")]
    InvalidCap,
    #[error("unknown template version `{0}`")]
    UnknownTemplateVersion(String),
    #[error("failed to read template `{path}`: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::User => f.write_str("user"),
            Speaker::Assistant => f.write_str("assistant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
        }
    }
}

/// Conversation being routed. Always non-empty and always ends with the user
/// turn that carries the query, enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatHistory {
    turns: Vec<Turn>,
}

impl ChatHistory {
    pub fn new(turns: Vec<Turn>) -> Result<Self, PromptError> {
        if turns.is_empty() {
            return Err(PromptError::InvalidHistory(
                "history must contain at least one turn".into(),
            ));
        }
        match turns.last() {
            Some(turn) if turn.speaker == Speaker::User => Ok(Self { turns }),
            _ => Err(PromptError::InvalidHistory(
                "the final turn must be the user query".into(),
            )),
        }
    }

    /// Single-turn history holding just the query.
    pub fn single(query: impl Into<String>) -> Self {
        Self {
            turns: vec![Turn::user(query)],
        }
    }

    /// The query being routed: the text of the final user turn.
    pub fn query(&self) -> &str {
        &self.turns.last().expect("non-empty history").text
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Wire format for the `# Chat History` section: one `speaker: text`
    /// line per turn, final user turn last.
    pub fn render(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{}: {}", t.speaker, t.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Router and refiner templates for one version. The v1 texts ship compiled
/// in; `from_dir` loads operator-pinned overrides (`router_<v>.txt` /
/// `refiner_<v>.txt`) so a deployment can keep the exact instruction bytes
/// its routing model was trained on.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    version: String,
    router: String,
    refiner: String,
}

impl TemplateSet {
    pub fn v1() -> Self {
        Self {
            version: "v1".into(),
            router: normalize(ROUTER_V1),
            refiner: normalize(REFINER_V1),
        }
    }

    pub fn builtin(version: &str) -> Result<Self, PromptError> {
        match version {
            "v1" => Ok(Self::v1()),
            other => Err(PromptError::UnknownTemplateVersion(other.to_string())),
        }
    }

    pub fn from_dir(dir: impl AsRef<Path>, version: &str) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |name: String| -> Result<String, PromptError> {
            let path = dir.join(&name);
            std::fs::read_to_string(&path).map_err(|source| PromptError::TemplateIo {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(Self {
            version: version.to_string(),
            router: normalize(&read(format!("router_{version}.txt"))?),
            refiner: normalize(&read(format!("refiner_{version}.txt"))?),
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::v1()
    }
}

/// Strips trailing newlines only; interior bytes (including trailing spaces
/// on lines) are part of the template contract.
fn normalize(template: &str) -> String {
    template.trim_end_matches(['\n', '\r']).to_string()
}

/// A rendered router prompt plus the audit facts a caller needs to interpret
/// the completion it gets back.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub text: String,
    pub registry_revision: u64,
    pub agent_ids: Vec<String>,
    pub token_estimate: usize,
}

/// Renders the router prompt over a pool snapshot: one `<Agent>` block per
/// card in snapshot order, the selection cap interpolated, and the chat
/// history appended as speaker-prefixed lines.
pub fn render_router_prompt(
    templates: &TemplateSet,
    snapshot: &Snapshot,
    history: &ChatHistory,
    max_agents: usize,
) -> Result<PromptBundle, PromptError> {
    if snapshot.is_empty() {
        return Err(PromptError::EmptyPool);
    }
    if max_agents == 0 {
        return Err(PromptError::InvalidCap);
    }
    let agents = snapshot
        .cards()
        .iter()
        .map(|card| {
            format!(
                "<Agent>\n    <Name>{}</Name>\n    <Description>{}</Description>\n    <ID>{}</ID>\n</Agent>",
                card.name, card.description, card.id
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let cap = max_agents.to_string();
    let mut text = fill(
        &templates.router,
        &[("{max_agents}", &cap), ("{agents}", &agents)],
    );
    text.push('\n');
    text.push_str(&history.render());
    let token_estimate = estimate_tokens(&text);
    Ok(PromptBundle {
        text,
        registry_revision: snapshot.revision(),
        agent_ids: snapshot.ids().map(str::to_string).collect(),
        token_estimate,
    })
}

/// Renders the refiner prompt: the query plus one labelled block per agent
/// answer, in the given order.
pub fn render_refiner_prompt(
    templates: &TemplateSet,
    query: &str,
    answers: &[(String, String)],
) -> Result<String, PromptError> {
    if answers.is_empty() {
        return Err(PromptError::EmptyAnswers);
    }
    let blocks = answers
        .iter()
        .map(|(agent_id, text)| format!("## Answer from {agent_id}\n{text}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    Ok(fill(
        &templates.refiner,
        &[("{query}", query), ("{answers}", &blocks)],
    ))
}

/// Deterministic, monotone token estimate: `ceil(chars / CHARS_PER_TOKEN)`.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(CHARS_PER_TOKEN)
}

/// Single-pass placeholder substitution. Placeholders are located in the
/// template only; substituted values are emitted verbatim and never
/// rescanned, so payloads containing `{query}`-like text survive untouched.
fn fill(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while !rest.is_empty() {
        for (key, value) in substitutions {
            if let Some(stripped) = rest.strip_prefix(key) {
                out.push_str(value);
                rest = stripped;
                continue 'outer;
            }
        }
        let mut chars = rest.chars();
        out.push(chars.next().expect("non-empty rest"));
        rest = chars.as_str();
    }
    out
}
