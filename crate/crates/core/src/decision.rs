//! Routing-decision grammar.
//!
//! The router model speaks a small tag language: one `<Reason>` block with
//! the reasoning chain, then one `<ID>` line per selected agent, with the
//! reserved id `oos` declaring the query out of scope. This module parses
//! arbitrary completions into validated [`RoutingDecision`]s and renders
//! decisions back into the same grammar.
//!
//! Parsing is total in lenient mode: any byte string yields either a
//! decision or a classified error, never a panic. Every normalization the
//! parser performs (dropped duplicates, dropped unknown ids, truncation to
//! the selection cap, missing reason) is recorded as a [`Repair`] so
//! evaluation runs can count model mistakes that routing silently absorbed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::OOS_TOKEN;

// Tag names are matched case-insensitively (completions use both <Reason>
// and <reason> in the wild); id values are exact tokens.
static REASON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<reason>(.*?)</reason>").expect("valid regex"));
static ID_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<id>(.*?)</id>").expect("valid regex"));

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("completion contains no <ID> tags")]
    NoSelection,
    #[error("completion selected unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("completion selected {count} agents, cap is {max}")]
    TooManySelections { count: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Repair what can be repaired; error only when no selection survives.
    #[default]
    Lenient,
    /// Reject unknown ids and over-cap selections instead of repairing, so
    /// evaluation runs see model errors undisguised.
    Strict,
}

/// What the router chose: a ranked agent subset or the out-of-scope marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Oos,
    Agents { ids: Vec<String> },
}

impl Selection {
    pub fn agents(ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Selection::Agents {
            ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_oos(&self) -> bool {
        matches!(self, Selection::Oos)
    }

    /// Selected ids in rank order; empty for out-of-scope.
    pub fn ids(&self) -> &[String] {
        match self {
            Selection::Oos => &[],
            Selection::Agents { ids } => ids,
        }
    }

    /// Selected ids as a set; out-of-scope maps to the empty set, the
    /// convention the reward functions score against.
    pub fn id_set(&self) -> BTreeSet<String> {
        self.ids().iter().cloned().collect()
    }
}

/// Normalization applied while parsing, recorded for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Repair {
    MissingReason,
    DuplicateIdDropped { id: String },
    UnknownIdDropped { id: String },
    /// `oos` appeared alongside valid ids; the ids win and the marker is
    /// dropped, since a usable agent contradicts the out-of-scope premise.
    OosDroppedForIds,
    TruncatedToCap { kept: usize, dropped: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// The reasoning chain, empty if the completion carried none.
    pub reason: String,
    pub selection: Selection,
    /// Original completion text, kept for audit.
    pub raw: String,
    pub repairs: Vec<Repair>,
}

impl RoutingDecision {
    /// A decision built from parts rather than parsed from a completion;
    /// used by tests, gold-replay scripts, and rollout files that store
    /// pre-parsed selections.
    pub fn synthetic(reason: impl Into<String>, selection: Selection) -> Self {
        Self {
            reason: reason.into(),
            selection,
            raw: String::new(),
            repairs: Vec::new(),
        }
    }
}

/// Parses a router completion against the pool snapshot it was prompted
/// with.
///
/// Extraction order: the first `<Reason>` block becomes the reasoning chain
/// (empty plus a repair note if absent); all `<ID>` values are taken in
/// order, trimmed, and deduplicated keeping first occurrences; non-`oos`
/// values are validated against `pool_ids`; if any valid id survives, the
/// selection is those ids truncated to `max_agents`, otherwise a lone `oos`
/// marks the decision out of scope.
pub fn parse_decision(
    completion: &str,
    pool_ids: &BTreeSet<String>,
    max_agents: usize,
    mode: ParseMode,
) -> Result<RoutingDecision, ParseError> {
    let mut repairs = Vec::new();

    let reason = match REASON_RE.captures(completion) {
        Some(caps) => caps.get(1).expect("capture group").as_str().trim().to_string(),
        None => {
            repairs.push(Repair::MissingReason);
            String::new()
        }
    };

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut oos_seen = false;
    let mut valid: Vec<String> = Vec::new();
    let mut first_unknown: Option<String> = None;
    let mut any_tag = false;

    for caps in ID_RE.captures_iter(completion) {
        any_tag = true;
        let value = caps.get(1).expect("capture group").as_str().trim();
        if !seen.insert(value) {
            repairs.push(Repair::DuplicateIdDropped { id: value.to_string() });
            continue;
        }
        if value == OOS_TOKEN {
            oos_seen = true;
        } else if pool_ids.contains(value) {
            valid.push(value.to_string());
        } else if mode == ParseMode::Strict {
            return Err(ParseError::UnknownAgent(value.to_string()));
        } else {
            repairs.push(Repair::UnknownIdDropped { id: value.to_string() });
            first_unknown.get_or_insert_with(|| value.to_string());
        }
    }

    if !any_tag {
        return Err(ParseError::NoSelection);
    }

    let selection = if valid.is_empty() {
        if oos_seen {
            Selection::Oos
        } else {
            // Tags were present but nothing survived validation.
            return Err(ParseError::UnknownAgent(
                first_unknown.expect("non-oos tag implies an unknown id"),
            ));
        }
    } else {
        if oos_seen {
            repairs.push(Repair::OosDroppedForIds);
        }
        if valid.len() > max_agents {
            if mode == ParseMode::Strict {
                return Err(ParseError::TooManySelections {
                    count: valid.len(),
                    max: max_agents,
                });
            }
            let dropped = valid.len() - max_agents;
            valid.truncate(max_agents);
            repairs.push(Repair::TruncatedToCap {
                kept: max_agents,
                dropped,
            });
        }
        Selection::Agents { ids: valid }
    };

    Ok(RoutingDecision {
        reason,
        selection,
        raw: completion.to_string(),
        repairs,
    })
}

/// Canonical serialization of a decision: one `<Reason>` block, then one
/// `<ID>` line per selected id (or a single `oos` line). Parsing the result
/// reproduces the reason and selection exactly.
pub fn render_decision(decision: &RoutingDecision) -> String {
    let mut out = format!("<Reason>{}</Reason>", decision.reason);
    match &decision.selection {
        Selection::Oos => {
            let _ = write!(out, "\n<ID>{OOS_TOKEN}</ID>");
        }
        Selection::Agents { ids } => {
            for id in ids {
                let _ = write!(out, "\n<ID>{id}</ID>");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples;

    fn pool(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_three_agent_selection_from_known_completion() {
        let pool = pool(&["network_agent", "cdn_agent", "eo_agent"]);
        let decision =
            parse_decision(samples::web_latency_completion(), &pool, 3, ParseMode::Lenient)
                .unwrap();
        assert_eq!(
            decision.selection,
            Selection::agents(["network_agent", "cdn_agent", "eo_agent"])
        );
        assert!(decision.reason.contains("network path and acceleration layers"));
        assert!(decision.repairs.is_empty());
    }

    #[test]
    fn parses_single_agent_selection_from_known_completion() {
        let pool = pool(&["ckafka_agent", "rocketMQ_agent"]);
        let decision =
            parse_decision(samples::message_queue_completion(), &pool, 3, ParseMode::Lenient)
                .unwrap();
        assert_eq!(decision.selection, Selection::agents(["rocketMQ_agent"]));
        assert!(decision.reason.contains("configuration change queries"));
    }

    #[test]
    fn lone_oos_token_is_out_of_scope() {
        let decision = parse_decision(
            "<Reason>no agent fits</Reason>\n<ID>oos</ID>",
            &pool(&["a", "b"]),
            3,
            ParseMode::Lenient,
        )
        .unwrap();
        assert_eq!(decision.selection, Selection::Oos);
        assert_eq!(decision.reason, "no agent fits");
    }

    #[test]
    fn duplicates_are_dropped_keeping_first_occurrence() {
        let decision = parse_decision(
            "<ID>a</ID><ID>a</ID><ID>b</ID>",
            &pool(&["a", "b"]),
            3,
            ParseMode::Lenient,
        )
        .unwrap();
        assert_eq!(decision.selection, Selection::agents(["a", "b"]));
        assert!(decision
            .repairs
            .contains(&Repair::DuplicateIdDropped { id: "a".into() }));
        assert!(decision.repairs.contains(&Repair::MissingReason));
    }

    #[test]
    fn over_cap_selection_truncates_in_lenient_mode() {
        let decision = parse_decision(
            "<Reason>r</Reason><ID>a</ID><ID>b</ID><ID>c</ID><ID>d</ID>",
            &pool(&["a", "b", "c", "d"]),
            3,
            ParseMode::Lenient,
        )
        .unwrap();
        assert_eq!(decision.selection, Selection::agents(["a", "b", "c"]));
        assert!(decision
            .repairs
            .contains(&Repair::TruncatedToCap { kept: 3, dropped: 1 }));
    }

    /// Exhaustive small-scale oracle: every id-tag sequence of length <= 4
    /// over {valid a, valid b, oos, unknown} must parse to exactly what the
    /// documented normalization rules predict.
    #[test]
    fn grammar_oracle_over_enumerated_tag_sequences() {
        let alphabet = ["a", "b", "oos", "zz"];
        let pool = pool(&["a", "b"]);
        let max_agents = 1;

        // Independent model of the lenient rules.
        let expect = |seq: &[&str]| -> Result<Selection, ParseError> {
            let mut dedup: Vec<&str> = Vec::new();
            for v in seq {
                if !dedup.contains(v) {
                    dedup.push(v);
                }
            }
            let oos = dedup.contains(&"oos");
            let valid: Vec<&str> = dedup
                .iter()
                .copied()
                .filter(|v| *v == "a" || *v == "b")
                .collect();
            if valid.is_empty() {
                if oos {
                    return Ok(Selection::Oos);
                }
                if seq.is_empty() {
                    return Err(ParseError::NoSelection);
                }
                return Err(ParseError::UnknownAgent("zz".into()));
            }
            Ok(Selection::agents(valid.into_iter().take(max_agents)))
        };

        // All sequences of length 0..=4 over the alphabet.
        let mut sequences: Vec<Vec<&str>> = vec![vec![]];
        let mut frontier: Vec<Vec<&str>> = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for seq in &frontier {
                for v in alphabet {
                    let mut longer = seq.clone();
                    longer.push(v);
                    next.push(longer);
                }
            }
            sequences.extend(next.iter().cloned());
            frontier = next;
        }

        let mut checked = 0;
        for seq in &sequences {
            let completion: String = seq
                .iter()
                .map(|v| format!("<ID>{v}</ID>"))
                .collect::<Vec<_>>()
                .join("\n");
            let got = parse_decision(&completion, &pool, max_agents, ParseMode::Lenient)
                .map(|d| d.selection);
            assert_eq!(got, expect(seq), "sequence {seq:?}");
            checked += 1;
        }
        assert!(checked > 300, "enumeration too small: {checked}");
    }

    #[test]
    fn strict_mode_rejects_unknown_and_over_cap() {
        let err = parse_decision(
            "<Reason>r</Reason><ID>ghost</ID><ID>a</ID>",
            &pool(&["a"]),
            3,
            ParseMode::Strict,
        )
        .unwrap_err();
        assert_eq!(err, ParseError::UnknownAgent("ghost".into()));

        let err = parse_decision(
            "<Reason>r</Reason><ID>a</ID><ID>b</ID>",
            &pool(&["a", "b"]),
            1,
            ParseMode::Strict,
        )
        .unwrap_err();
        assert_eq!(err, ParseError::TooManySelections { count: 2, max: 1 });
    }

    #[test]
    fn render_decision_matches_documented_layout() {
        let d = RoutingDecision::synthetic("x", Selection::agents(["a", "b"]));
        assert_eq!(render_decision(&d), "<Reason>x</Reason>\n<ID>a</ID>\n<ID>b</ID>");

        let oos = RoutingDecision::synthetic("nothing fits", Selection::Oos);
        let rendered = render_decision(&oos);
        assert_eq!(rendered.matches("<ID>oos</ID>").count(), 1);
    }

    #[test]
    fn render_then_parse_reproduces_reason_and_selection() {
        let pool = pool(&["a", "b", "c"]);
        let cases = vec![
            RoutingDecision::synthetic("pick two", Selection::agents(["c", "a"])),
            RoutingDecision::synthetic("", Selection::agents(["b"])),
            RoutingDecision::synthetic("out of scope", Selection::Oos),
        ];
        for d in cases {
            let parsed =
                parse_decision(&render_decision(&d), &pool, 3, ParseMode::Lenient).unwrap();
            assert_eq!(parsed.reason, d.reason);
            assert_eq!(parsed.selection, d.selection);
        }
    }
}
