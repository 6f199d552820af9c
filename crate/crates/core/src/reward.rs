//! Set-prediction rewards and rollout curation.
//!
//! A routing decision is scored against a gold agent set with three terms:
//! a precision-like overlap reward (fraction of predicted agents that are
//! correct), a coverage reward (fraction of gold agents that were
//! predicted), and a length penalty charging each agent predicted beyond the
//! gold count:
//!
//! ```text
//! total = alpha * precision + (1 - alpha) * coverage
//!         - beta * max(|predicted| - |gold|, 0)
//! ```
//!
//! On top of the rewards sit two filters that curate reinforcement-learning
//! rollout groups: a consistency filter dropping queries the sampler already
//! answers correctly more than `tau` of the time, and a validity filter
//! dropping groups where every rollout is correct or every rollout is wrong
//! (such groups have zero advantage variance and teach nothing).
//!
//! Out-of-scope decisions score as the empty predicted set. A gold of
//! `["oos"]` likewise maps to the empty set, so an out-of-scope rollout is
//! an exact match for an out-of-scope gold and never matches a non-empty
//! one.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{parse_decision, ParseMode, RoutingDecision, Selection};
use crate::OOS_TOKEN;

pub type IdSet = BTreeSet<String>;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("alpha must be in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("beta must be non-negative, got {0}")]
    InvalidBeta(f64),
    #[error("tau must be in [0, 1], got {0}")]
    InvalidTau(f64),
    #[error("failed to read rollout file `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Weighting hyperparameters: `alpha` trades precision against coverage,
/// `beta` scales the over-prediction penalty. The shipped defaults are
/// placeholders recorded in every emitted artifact, not tuned values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
        }
    }
}

impl RewardConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, RewardError> {
        if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
            return Err(RewardError::InvalidAlpha(alpha));
        }
        if beta.is_nan() || beta < 0.0 {
            return Err(RewardError::InvalidBeta(beta));
        }
        Ok(Self { alpha, beta })
    }
}

/// Fraction of predicted agents that are correct: `|P ∩ G| / max(1, |P|)`.
/// Empty predictions score zero.
pub fn precision_reward(predicted: &IdSet, gold: &IdSet) -> f64 {
    let overlap = predicted.intersection(gold).count();
    overlap as f64 / predicted.len().max(1) as f64
}

/// Fraction of gold agents that were predicted: `|P ∩ G| / max(1, |G|)`.
pub fn coverage_reward(predicted: &IdSet, gold: &IdSet) -> f64 {
    let overlap = predicted.intersection(gold).count();
    overlap as f64 / gold.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub precision: f64,
    pub coverage: f64,
    pub length_penalty: f64,
    pub total: f64,
}

/// Full reward decomposition for one (predicted, gold) pair.
pub fn combined_reward(predicted: &IdSet, gold: &IdSet, config: &RewardConfig) -> RewardBreakdown {
    let precision = precision_reward(predicted, gold);
    let coverage = coverage_reward(predicted, gold);
    let length_penalty = predicted.len().saturating_sub(gold.len()) as f64;
    let total =
        config.alpha * precision + (1.0 - config.alpha) * coverage - config.beta * length_penalty;
    RewardBreakdown {
        precision,
        coverage,
        length_penalty,
        total,
    }
}

/// G sampled routing decisions for one training query plus its gold set.
/// An empty `gold` means the query is out of scope.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub query_id: String,
    pub gold: IdSet,
    pub rollouts: Vec<RoutingDecision>,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.rollouts.len()
    }

    /// Rollouts whose selection set exactly equals the gold set.
    pub fn exact_matches(&self) -> usize {
        self.rollouts
            .iter()
            .filter(|r| r.selection.id_set() == self.gold)
            .count()
    }

    /// Exact-match rate over the group.
    pub fn consistency(&self) -> f64 {
        if self.rollouts.is_empty() {
            return 0.0;
        }
        self.exact_matches() as f64 / self.rollouts.len() as f64
    }

    /// Agreement with the modal selection set instead of the gold set.
    pub fn modal_consistency(&self) -> f64 {
        if self.rollouts.is_empty() {
            return 0.0;
        }
        let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for rollout in &self.rollouts {
            let key: Vec<String> = rollout.selection.id_set().into_iter().collect();
            *counts.entry(key).or_default() += 1;
        }
        let modal = counts.values().copied().max().unwrap_or(0);
        modal as f64 / self.rollouts.len() as f64
    }
}

/// What "consistency" means for the filter. The default measures agreement
/// with the gold set — removal is justified by the sample being already
/// learned. Modal agreement (inter-rollout stability regardless of
/// correctness) is available behind this switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMode {
    #[default]
    GoldAgreement,
    ModalAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ConsistencyVerdict {
    Kept { consistency: f64 },
    Removed { consistency: f64 },
}

impl ConsistencyVerdict {
    pub fn is_removed(&self) -> bool {
        matches!(self, ConsistencyVerdict::Removed { .. })
    }

    pub fn consistency(&self) -> f64 {
        match self {
            ConsistencyVerdict::Kept { consistency }
            | ConsistencyVerdict::Removed { consistency } => *consistency,
        }
    }
}

/// Removes a group iff its consistency strictly exceeds `tau`. At `tau = 1`
/// nothing is ever removed, since consistency cannot exceed one.
pub fn consistency_filter(group: &RolloutGroup, tau: f64) -> ConsistencyVerdict {
    consistency_filter_with(group, tau, ConsistencyMode::GoldAgreement)
}

pub fn consistency_filter_with(
    group: &RolloutGroup,
    tau: f64,
    mode: ConsistencyMode,
) -> ConsistencyVerdict {
    let consistency = match mode {
        ConsistencyMode::GoldAgreement => group.consistency(),
        ConsistencyMode::ModalAgreement => group.modal_consistency(),
    };
    if consistency > tau {
        ConsistencyVerdict::Removed { consistency }
    } else {
        ConsistencyVerdict::Kept { consistency }
    }
}

/// A rollout group is only useful for group-relative optimization when it
/// mixes correct and incorrect rollouts: `0 < correct < G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupValidity {
    Valid,
    AllCorrect,
    AllWrong,
}

pub fn group_validity_filter(group: &RolloutGroup) -> GroupValidity {
    let correct = group.exact_matches();
    if correct == 0 {
        GroupValidity::AllWrong
    } else if correct == group.group_size() {
        GroupValidity::AllCorrect
    } else {
        GroupValidity::Valid
    }
}

/// Selection as stored in rollout files: an id list, or the literal string
/// `"oos"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SelectionRepr {
    Marker(String),
    Ids(Vec<String>),
}

impl SelectionRepr {
    fn to_selection(&self) -> Result<Selection, String> {
        match self {
            SelectionRepr::Marker(s) if s == OOS_TOKEN => Ok(Selection::Oos),
            SelectionRepr::Marker(s) => Err(format!("unknown selection marker `{s}`")),
            SelectionRepr::Ids(ids) => Ok(Selection::Agents { ids: ids.clone() }),
        }
    }

    fn from_selection(selection: &Selection) -> Self {
        match selection {
            Selection::Oos => SelectionRepr::Marker(OOS_TOKEN.into()),
            Selection::Agents { ids } => SelectionRepr::Ids(ids.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    #[serde(flatten)]
    pub reward: RewardConfig,
    pub tau: f64,
    #[serde(default)]
    pub consistency_mode: ConsistencyMode,
}

impl CurationConfig {
    pub fn new(reward: RewardConfig, tau: f64) -> Result<Self, RewardError> {
        if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
            return Err(RewardError::InvalidTau(tau));
        }
        Ok(Self {
            reward,
            tau,
            consistency_mode: ConsistencyMode::default(),
        })
    }
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            tau: 0.6,
            consistency_mode: ConsistencyMode::default(),
        }
    }
}

/// A surviving group with its per-rollout rewards attached.
#[derive(Debug, Clone, Serialize)]
pub struct CuratedGroup {
    pub query_id: String,
    pub gold: Vec<String>,
    pub selections: Vec<SelectionRepr>,
    pub rewards: Vec<RewardBreakdown>,
    pub consistency: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CurationStats {
    pub total: usize,
    pub kept: usize,
    pub removed_consistency: usize,
    pub removed_all_correct: usize,
    pub removed_all_wrong: usize,
    pub reward_mean: f64,
    pub reward_min: f64,
    pub reward_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CuratedDataset {
    pub config: CurationConfig,
    pub stats: CurationStats,
    pub groups: Vec<CuratedGroup>,
}

/// Applies the consistency filter then the validity filter and attaches a
/// reward breakdown to every surviving rollout. Output groups are sorted by
/// `query_id`, so the result is deterministic regardless of input order or
/// parallel scheduling.
pub fn curate(groups: &[RolloutGroup], config: &CurationConfig) -> CuratedDataset {
    enum Outcome {
        Kept(CuratedGroup),
        Consistency,
        AllCorrect,
        AllWrong,
    }

    let outcomes: Vec<Outcome> = groups
        .par_iter()
        .map(|group| {
            let verdict = consistency_filter_with(group, config.tau, config.consistency_mode);
            if verdict.is_removed() {
                return Outcome::Consistency;
            }
            match group_validity_filter(group) {
                GroupValidity::AllCorrect => Outcome::AllCorrect,
                GroupValidity::AllWrong => Outcome::AllWrong,
                GroupValidity::Valid => {
                    let rewards = group
                        .rollouts
                        .iter()
                        .map(|r| combined_reward(&r.selection.id_set(), &group.gold, &config.reward))
                        .collect();
                    Outcome::Kept(CuratedGroup {
                        query_id: group.query_id.clone(),
                        gold: gold_repr(&group.gold),
                        selections: group
                            .rollouts
                            .iter()
                            .map(|r| SelectionRepr::from_selection(&r.selection))
                            .collect(),
                        rewards,
                        consistency: verdict.consistency(),
                    })
                }
            }
        })
        .collect();

    let mut stats = CurationStats {
        total: groups.len(),
        reward_min: f64::INFINITY,
        reward_max: f64::NEG_INFINITY,
        ..CurationStats::default()
    };
    let mut kept = Vec::new();
    for outcome in outcomes {
        match outcome {
            Outcome::Kept(group) => kept.push(group),
            Outcome::Consistency => stats.removed_consistency += 1,
            Outcome::AllCorrect => stats.removed_all_correct += 1,
            Outcome::AllWrong => stats.removed_all_wrong += 1,
        }
    }
    kept.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    stats.kept = kept.len();

    let mut sum = 0.0;
    let mut count = 0usize;
    for group in &kept {
        for reward in &group.rewards {
            sum += reward.total;
            count += 1;
            stats.reward_min = stats.reward_min.min(reward.total);
            stats.reward_max = stats.reward_max.max(reward.total);
        }
    }
    if count == 0 {
        stats.reward_min = 0.0;
        stats.reward_max = 0.0;
        stats.reward_mean = 0.0;
    } else {
        stats.reward_mean = sum / count as f64;
    }

    CuratedDataset {
        config: *config,
        stats,
        groups: kept,
    }
}

fn gold_repr(gold: &IdSet) -> Vec<String> {
    if gold.is_empty() {
        vec![OOS_TOKEN.to_string()]
    } else {
        gold.iter().cloned().collect()
    }
}

// ---------------------------------------------------------------------------
// Rollout file I/O
// ---------------------------------------------------------------------------

/// One JSON line of a rollout file. `gold` is an id list or `["oos"]`.
/// Rollouts arrive either pre-parsed (`selections`) or as raw router
/// completions (`completions`), in which case `pool` must list the agent ids
/// the completions may select from.
#[derive(Debug, Deserialize)]
struct RolloutRecord {
    query_id: String,
    gold: Vec<String>,
    #[serde(default)]
    pool: Option<Vec<String>>,
    #[serde(default)]
    completions: Option<Vec<String>>,
    #[serde(default)]
    selections: Option<Vec<SelectionRepr>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineFault {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct RolloutLoad {
    pub groups: Vec<RolloutGroup>,
    pub faults: Vec<LineFault>,
}

/// Reads a line-delimited rollout file. File-level problems error; per-line
/// problems (bad JSON, schema violations, unparseable completions) are
/// reported as faults with their line numbers while the rest of the file
/// loads.
pub fn load_rollout_groups(
    path: impl AsRef<Path>,
    max_agents: usize,
) -> Result<RolloutLoad, RewardError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| RewardError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut load = RolloutLoad::default();

    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let fault = |message: String, faults: &mut Vec<LineFault>| {
            faults.push(LineFault {
                line: line_no,
                message,
            });
        };
        let text = match line {
            Ok(text) => text,
            Err(e) => {
                fault(e.to_string(), &mut load.faults);
                continue;
            }
        };
        if text.trim().is_empty() {
            continue;
        }
        let record: RolloutRecord = match serde_json::from_str(&text) {
            Ok(record) => record,
            Err(e) => {
                fault(e.to_string(), &mut load.faults);
                continue;
            }
        };
        match build_group(record, max_agents) {
            Ok(group) => load.groups.push(group),
            Err(message) => fault(message, &mut load.faults),
        }
    }
    Ok(load)
}

fn build_group(record: RolloutRecord, max_agents: usize) -> Result<RolloutGroup, String> {
    if record.query_id.is_empty() {
        return Err("query_id must not be empty".into());
    }
    let gold = parse_gold(&record.gold)?;

    let rollouts = match (record.selections, record.completions) {
        (Some(_), Some(_)) => {
            return Err("record sets both `selections` and `completions`".into())
        }
        (None, None) => return Err("record needs `selections` or `completions`".into()),
        (Some(selections), None) => selections
            .iter()
            .map(|repr| repr.to_selection().map(|s| RoutingDecision::synthetic("", s)))
            .collect::<Result<Vec<_>, _>>()?,
        (None, Some(completions)) => {
            let pool: IdSet = record
                .pool
                .ok_or_else(|| "`completions` requires a `pool` of agent ids".to_string())?
                .into_iter()
                .collect();
            if pool.is_empty() {
                return Err("`pool` must not be empty".into());
            }
            completions
                .iter()
                .enumerate()
                .map(|(i, completion)| {
                    parse_decision(completion, &pool, max_agents, ParseMode::Lenient)
                        .map_err(|e| format!("completion {i}: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };

    if rollouts.is_empty() {
        return Err("record carries no rollouts".into());
    }
    Ok(RolloutGroup {
        query_id: record.query_id,
        gold,
        rollouts,
    })
}

fn parse_gold(gold: &[String]) -> Result<IdSet, String> {
    if gold.is_empty() {
        return Err("`gold` must not be empty".into());
    }
    if gold.iter().any(|g| g == OOS_TOKEN) {
        if gold.len() != 1 {
            return Err("`oos` gold cannot be combined with agent ids".into());
        }
        return Ok(IdSet::new());
    }
    Ok(gold.iter().cloned().collect())
}

/// Writes the curated groups in the same line-delimited form they were read
/// in (plus rewards and consistency), one JSON object per line.
pub fn write_curated_groups(
    dataset: &CuratedDataset,
    mut out: impl Write,
) -> std::io::Result<()> {
    for group in &dataset.groups {
        serde_json::to_writer(&mut out, group)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Human-readable curation summary.
pub fn render_curation_summary(dataset: &CuratedDataset) -> String {
    let s = &dataset.stats;
    format!(
        "groups {total}\n  kept {kept}\n  removed_consistency {rc} (tau {tau})\n  \
removed_all_correct {rac}\n  removed_all_wrong {raw}\nrewards over kept rollouts \
(alpha {alpha}, beta {beta})\n  mean {mean:.4}\n  min {min:.4}\n  max {max:.4}",
        total = s.total,
        kept = s.kept,
        rc = s.removed_consistency,
        tau = dataset.config.tau,
        rac = s.removed_all_correct,
        raw = s.removed_all_wrong,
        alpha = dataset.config.reward.alpha,
        beta = dataset.config.reward.beta,
        mean = s.reward_mean,
        min = s.reward_min,
        max = s.reward_max,
    )
}
