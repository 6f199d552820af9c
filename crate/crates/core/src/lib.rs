//! Reason-then-select routing for multi-agent systems.
//!
//! The crate implements a routing gateway in which a language model reads a
//! pool of natural-language agent descriptions, emits a reasoning chain plus
//! a subset of agent ids, and the selected agents answer the query in
//! parallel before a refining model merges their outputs. Around that
//! pipeline it provides the training-data side: set-overlap rewards, rollout
//! filters for curating reinforcement-learning data, and an evaluation
//! harness for accuracy and set-F1.
//!
//! Module map:
//!
//! - [`registry`] — mutable agent pool with immutable per-request snapshots
//! - [`prompt`] — deterministic router/refiner prompt rendering
//! - [`decision`] — `<Reason>`/`<ID>` completion grammar: parse and render
//! - [`backend`] — completion clients: OpenAI-compatible HTTP, scripted, echo
//! - [`orchestrate`] — route, parallel fan-out, and refine pipeline
//! - [`reward`] — set-prediction rewards, rollout filters, dataset curation
//! - [`eval`] — dataset loading, accuracy / set-F1, batch evaluation runs
//! - [`samples`] — canned pools and transcripts for tests and demos

pub mod backend;
pub mod decision;
pub mod eval;
pub mod orchestrate;
pub mod prompt;
pub mod registry;
pub mod reward;
pub mod samples;

/// Reserved selection token meaning "no registered agent can handle this
/// query". Never a valid agent id; the registry rejects it at registration
/// and the parser maps it to [`decision::Selection::OutOfScope`].
pub const OOS_TOKEN: &str = "oos";
