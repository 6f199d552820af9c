//! Agent pool management.
//!
//! A [`Registry`] holds the ordered set of expert agents the router can
//! select from. Agents are onboarded and retired at runtime without touching
//! the router itself: routing only ever sees an immutable [`Snapshot`], so a
//! mutation can never tear a prompt/parse pair, and growing the pool changes
//! nothing but the rendered agent list.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendDescriptor;
use crate::OOS_TOKEN;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("duplicate agent id `{0}`")]
    DuplicateId(String),
    #[error("invalid agent card ({field}): {reason}")]
    InvalidCard { field: &'static str, reason: String },
    #[error("unknown agent id `{0}`")]
    UnknownId(String),
    #[error("failed to read registry file `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry file `{path}`: {source}")]
    Malformed {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
}

/// One expert agent: a stable machine id, a display name, the
/// natural-language capability description the router reasons over, and an
/// optional backend descriptor for invoking the agent as a responder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCard {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<BackendDescriptor>,
}

impl AgentCard {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            description: description.into(),
            endpoint: None,
        }
    }

    pub fn with_endpoint(mut self, endpoint: BackendDescriptor) -> Self {
        self.endpoint = Some(endpoint);
        self
    }

    /// Checks the card invariants. Ids must embed safely inside `<ID>` tags
    /// and descriptions inside `<Agent>` blocks, so the prompt renderer can
    /// insert both verbatim.
    pub fn validate(&self) -> Result<(), RegistryError> {
        if self.id.is_empty() {
            return Err(invalid("id", "must not be empty"));
        }
        if self
            .id
            .chars()
            .any(|c| c.is_whitespace() || c == '<' || c == '>')
        {
            return Err(invalid(
                "id",
                format!("`{}` must not contain whitespace or angle brackets", self.id),
            ));
        }
        if self.id == OOS_TOKEN {
            return Err(invalid(
                "id",
                format!("`{OOS_TOKEN}` is reserved for out-of-scope routing"),
            ));
        }
        if self.description.trim().is_empty() {
            return Err(invalid("description", "must not be empty"));
        }
        if contains_agent_close(&self.description) {
            return Err(invalid(
                "description",
                "must not contain the `</Agent>` tag",
            ));
        }
        if contains_agent_close(&self.name) {
            return Err(invalid("name", "must not contain the `</Agent>` tag"));
        }
        Ok(())
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> RegistryError {
    RegistryError::InvalidCard {
        field,
        reason: reason.into(),
    }
}

fn contains_agent_close(text: &str) -> bool {
    text.to_ascii_lowercase().contains("</agent>")
}

/// Ordered, mutable pool of agents. Insertion order is preserved because it
/// fixes the byte order of the rendered prompt; `revision` increases by one
/// on every successful mutation.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    cards: Vec<AgentCard>,
    revision: u64,
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    #[serde(default)]
    agents: Vec<AgentCard>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry by inserting each card in order; the resulting
    /// revision equals the number of cards.
    pub fn from_cards(cards: impl IntoIterator<Item = AgentCard>) -> Result<Self, RegistryError> {
        let mut registry = Self::new();
        for card in cards {
            registry.add_agent(card)?;
        }
        Ok(registry)
    }

    /// Loads a registry from a TOML file with one `[[agents]]` record per
    /// agent. The file is parsed and validated in full before any state is
    /// built, so a bad file can never leave a half-loaded pool.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: RegistryFile =
            toml::from_str(&text).map_err(|source| RegistryError::Malformed {
                path: path.display().to_string(),
                source: Box::new(source),
            })?;
        Self::from_cards(file.agents)
    }

    /// Appends a new agent. No other card moves and no router state is
    /// touched, so already-rendered prompts and in-flight requests are
    /// unaffected.
    pub fn add_agent(&mut self, card: AgentCard) -> Result<u64, RegistryError> {
        card.validate()?;
        if self.cards.iter().any(|c| c.id == card.id) {
            return Err(RegistryError::DuplicateId(card.id));
        }
        self.cards.push(card);
        self.revision += 1;
        Ok(self.revision)
    }

    /// Removes an agent, keeping the relative order of the survivors.
    pub fn remove_agent(&mut self, id: &str) -> Result<u64, RegistryError> {
        let index = self
            .cards
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| RegistryError::UnknownId(id.to_string()))?;
        self.cards.remove(index);
        self.revision += 1;
        Ok(self.revision)
    }

    /// Immutable, order-stable copy pinned to the current revision. Later
    /// mutations do not affect it.
    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            cards: self.cards.clone().into(),
            revision: self.revision,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn cards(&self) -> &[AgentCard] {
        &self.cards
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }
}

/// Immutable view of the pool at one revision. Every routing request renders
/// its prompt and validates the parsed selection against the same snapshot.
#[derive(Debug, Clone)]
pub struct Snapshot {
    cards: Arc<[AgentCard]>,
    revision: u64,
}

impl Snapshot {
    pub fn cards(&self) -> &[AgentCard] {
        &self.cards
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn get(&self, id: &str) -> Option<&AgentCard> {
        self.cards.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cards.iter().map(|c| c.id.as_str())
    }

    pub fn id_set(&self) -> BTreeSet<String> {
        self.cards.iter().map(|c| c.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }
}

/// Thread-safe handle: concurrent snapshot readers, serialized mutations.
#[derive(Debug, Clone, Default)]
pub struct SharedRegistry(Arc<RwLock<Registry>>);

impl SharedRegistry {
    pub fn new(registry: Registry) -> Self {
        Self(Arc::new(RwLock::new(registry)))
    }

    pub fn snapshot(&self) -> Snapshot {
        self.0.read().expect("registry lock").snapshot()
    }

    pub fn revision(&self) -> u64 {
        self.0.read().expect("registry lock").revision()
    }

    pub fn add_agent(&self, card: AgentCard) -> Result<u64, RegistryError> {
        self.0.write().expect("registry lock").add_agent(card)
    }

    pub fn remove_agent(&self, id: &str) -> Result<u64, RegistryError> {
        self.0.write().expect("registry lock").remove_agent(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card(id: &str) -> AgentCard {
        AgentCard::new(id, format!("{id} name"), format!("{id} handles things"))
    }

    #[test]
    fn add_to_empty_registry_sets_revision_one() {
        let mut registry = Registry::new();
        registry.add_agent(card("network_agent")).unwrap();
        assert_eq!(registry.len(), 1);
        assert_eq!(registry.revision(), 1);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let mut registry =
            Registry::from_cards([card("ckafka_agent"), card("rocketMQ_agent")]).unwrap();
        let err = registry.add_agent(card("ckafka_agent")).unwrap_err();
        assert!(matches!(err, RegistryError::DuplicateId(id) if id == "ckafka_agent"));
        assert_eq!(registry.len(), 2);
    }

    #[test]
    fn remove_preserves_order_of_survivors() {
        let mut registry = Registry::from_cards([card("a"), card("b"), card("c")]).unwrap();
        registry.remove_agent("b").unwrap();
        let ids: Vec<_> = registry.cards().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(registry.revision(), 4);
    }

    #[test]
    fn remove_last_card_leaves_empty_registry() {
        let mut registry = Registry::from_cards([card("a")]).unwrap();
        registry.remove_agent("a").unwrap();
        assert!(registry.is_empty());
    }

    #[test]
    fn remove_unknown_id_errors() {
        let mut registry = Registry::from_cards([card("a")]).unwrap();
        let err = registry.remove_agent("missing").unwrap_err();
        assert!(matches!(err, RegistryError::UnknownId(id) if id == "missing"));
    }

    #[test]
    fn snapshot_is_isolated_from_later_mutations() {
        let mut registry = Registry::from_cards([card("a")]).unwrap();
        let snap = registry.snapshot();
        registry.add_agent(card("b")).unwrap();
        assert_eq!(snap.len(), 1);
        assert_eq!(snap.revision(), 1);
        assert_eq!(registry.len(), 2);
    }

    #[test]
    fn snapshot_of_empty_registry_is_empty() {
        let snap = Registry::new().snapshot();
        assert!(snap.is_empty());
        assert_eq!(snap.revision(), 0);
    }

    #[test]
    fn snapshots_without_interleaved_mutation_are_identical() {
        let registry = Registry::from_cards([card("a"), card("b")]).unwrap();
        let first = registry.snapshot();
        let second = registry.snapshot();
        assert_eq!(first.cards(), second.cards());
        assert_eq!(first.revision(), second.revision());
    }

    #[test]
    fn oos_id_is_reserved() {
        let err = Registry::new().add_agent(card("oos")).unwrap_err();
        assert!(matches!(err, RegistryError::InvalidCard { field: "id", .. }));
    }

    #[test]
    fn invalid_cards_name_the_violated_field() {
        let cases = [
            (AgentCard::new("", "n", "d"), "id"),
            (AgentCard::new("has space", "n", "d"), "id"),
            (AgentCard::new("angle<bracket", "n", "d"), "id"),
            (AgentCard::new("a", "n", ""), "description"),
            (AgentCard::new("a", "n", "  "), "description"),
            (AgentCard::new("a", "n", "x </Agent> y"), "description"),
            (AgentCard::new("a", "bad </AGENT> name", "d"), "name"),
        ];
        for (bad, expected_field) in cases {
            match bad.validate().unwrap_err() {
                RegistryError::InvalidCard { field, .. } => assert_eq!(field, expected_field),
                other => panic!("expected InvalidCard, got {other:?}"),
            }
        }
    }

    #[test]
    fn load_reads_toml_registry_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agents.toml");
        std::fs::write(
            &path,
            r#"
[[agents]]
id = "cdn_agent"
name = "CDN Agent"
description = "Examine CDN access latency and cache behavior."

[[agents]]
id = "db_agent"
name = "Database Agent"
description = "Diagnose database connectivity and slow queries."

[agents.endpoint]
kind = "echo"
"#,
        )
        .unwrap();
        let registry = Registry::load(&path).unwrap();
        assert_eq!(registry.len(), 2);
        assert_eq!(registry.revision(), 2);
        assert!(registry.cards()[1].endpoint.is_some());
    }

    #[test]
    fn load_rejects_duplicate_ids_in_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agents.toml");
        std::fs::write(
            &path,
            "[[agents]]\nid = \"a\"\nname = \"n\"\ndescription = \"d\"\n\
             [[agents]]\nid = \"a\"\nname = \"n\"\ndescription = \"d\"\n",
        )
        .unwrap();
        assert!(matches!(
            Registry::load(&path),
            Err(RegistryError::DuplicateId(_))
        ));
    }

    #[test]
    fn shared_registry_serializes_mutations() {
        let shared = SharedRegistry::new(Registry::new());
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let shared = shared.clone();
                std::thread::spawn(move || shared.add_agent(card(&format!("agent_{i}"))))
            })
            .collect();
        for handle in handles {
            handle.join().unwrap().unwrap();
        }
        assert_eq!(shared.revision(), 8);
        assert_eq!(shared.snapshot().len(), 8);
    }
}
