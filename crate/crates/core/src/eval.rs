//! Benchmark evaluation.
//!
//! Loads line-delimited datasets (single-turn or multi-turn records, with
//! inline or shared agent pools), routes every sample through an
//! [`Orchestrator`], and scores the decisions: exact-match accuracy for
//! single-label data, per-sample set-F1 (macro mean, with micro also
//! reported) for multi-label data. Parse repairs and backend faults are
//! accounted separately from wrong answers so model quality and plumbing
//! health never blur together.
//!
//! Out-of-scope is scored through a sentinel: a gold of `["oos"]` and an
//! out-of-scope prediction both become the singleton set `{"oos"}`, so they
//! match exactly and F1 rewards them like any other label.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::Selection;
use crate::orchestrate::Orchestrator;
use crate::prompt::{ChatHistory, Speaker, Turn};
use crate::registry::{AgentCard, Registry};
use crate::OOS_TOKEN;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset schema error at line {line}, field `{field}`: {message}")]
    Schema {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("accuracy is undefined: sample `{0}` has a multi-label gold")]
    MixedLabelKinds(String),
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed pools file `{path}`: {source}")]
    MalformedPools {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
}

/// One benchmark instance: a conversation, the agent pool it is routed
/// against, and the annotated gold set (`{"oos"}` for out-of-scope).
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub history: ChatHistory,
    pub pool: Vec<AgentCard>,
    pub gold: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// One `query` string per record.
    Flat,
    /// A `turns` array per record, final turn from the user.
    Multiturn,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(DatasetFormat::Flat),
            "multiturn" => Ok(DatasetFormat::Multiturn),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

pub type PoolMap = BTreeMap<String, Vec<AgentCard>>;

#[derive(Debug, Deserialize)]
struct PoolsFile {
    #[serde(default)]
    pool: PoolMap,
}

/// Loads the shared-pool sidecar: a TOML file with one `[[pool.<name>]]`
/// card list per pool.
pub fn load_pools(path: impl AsRef<Path>) -> Result<PoolMap, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: PoolsFile = toml::from_str(&text).map_err(|source| EvalError::MalformedPools {
        path: path.display().to_string(),
        source: Box::new(source),
    })?;
    for (name, cards) in &file.pool {
        for card in cards {
            card.validate().map_err(|e| EvalError::Schema {
                line: 0,
                field: "pool",
                message: format!("pool `{name}`: {e}"),
            })?;
        }
    }
    Ok(file.pool)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoolRef {
    Named(String),
    Inline(Vec<AgentCard>),
}

#[derive(Debug, Deserialize)]
struct TurnRecord {
    speaker: Speaker,
    text: String,
}

#[derive(Debug, Deserialize)]
struct SampleRecord {
    id: String,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    turns: Option<Vec<TurnRecord>>,
    pool: PoolRef,
    gold: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetFault {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct DatasetLoad {
    pub samples: Vec<EvalSample>,
    pub faults: Vec<DatasetFault>,
}

/// Reads a line-delimited dataset. With `lenient` unset the first malformed
/// line aborts the load with its line number; with it set, malformed lines
/// are collected as faults and the rest of the file loads.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    pools: &PoolMap,
    lenient: bool,
) -> Result<DatasetLoad, EvalError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut load = DatasetLoad::default();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_sample(line, line_no, format, pools) {
            Ok(sample) => load.samples.push(sample),
            Err(e) if lenient => load.faults.push(DatasetFault {
                line: line_no,
                message: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(load)
}

fn parse_sample(
    line: &str,
    line_no: usize,
    format: DatasetFormat,
    pools: &PoolMap,
) -> Result<EvalSample, EvalError> {
    let schema = |field: &'static str, message: String| EvalError::Schema {
        line: line_no,
        field,
        message,
    };
    let record: SampleRecord = serde_json::from_str(line)
        .map_err(|e| schema("record", e.to_string()))?;
    if record.id.is_empty() {
        return Err(schema("id", "must not be empty".into()));
    }

    let history = match format {
        DatasetFormat::Flat => {
            let query = record
                .query
                .ok_or_else(|| schema("query", "flat records need a `query`".into()))?;
            ChatHistory::single(query)
        }
        DatasetFormat::Multiturn => {
            let turns = record
                .turns
                .ok_or_else(|| schema("turns", "multiturn records need `turns`".into()))?
                .into_iter()
                .map(|t| Turn {
                    speaker: t.speaker,
                    text: t.text,
                })
                .collect();
            ChatHistory::new(turns).map_err(|e| schema("turns", e.to_string()))?
        }
    };

    let pool = match record.pool {
        PoolRef::Named(name) => pools
            .get(&name)
            .cloned()
            .ok_or_else(|| schema("pool", format!("unknown pool `{name}`")))?,
        PoolRef::Inline(cards) => cards,
    };
    if pool.is_empty() {
        return Err(schema("pool", "pool must not be empty".into()));
    }
    for card in &pool {
        card.validate()
            .map_err(|e| schema("pool", e.to_string()))?;
    }
    let pool_ids: BTreeSet<&str> = pool.iter().map(|c| c.id.as_str()).collect();

    if record.gold.is_empty() {
        return Err(schema("gold", "gold must not be empty".into()));
    }
    let is_oos = record.gold.iter().any(|g| g == OOS_TOKEN);
    if is_oos && record.gold.len() != 1 {
        return Err(schema(
            "gold",
            "`oos` gold cannot be combined with agent ids".into(),
        ));
    }
    if !is_oos {
        for id in &record.gold {
            if !pool_ids.contains(id.as_str()) {
                return Err(schema("gold", format!("gold id `{id}` is not in the pool")));
            }
        }
    }

    Ok(EvalSample {
        id: record.id,
        history,
        pool,
        gold: record.gold.into_iter().collect(),
    })
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Exact-match accuracy over (predicted, gold) set pairs. Every gold must be
/// a singleton (an agent id or the `oos` sentinel); a prediction counts only
/// if it equals the gold exactly, so over-prediction scores zero.
pub fn accuracy(results: &[(BTreeSet<String>, BTreeSet<String>)]) -> Result<f64, EvalError> {
    for (i, (_, gold)) in results.iter().enumerate() {
        if gold.len() != 1 {
            return Err(EvalError::MixedLabelKinds(format!("#{i}")));
        }
    }
    if results.is_empty() {
        return Ok(0.0);
    }
    let matches = results.iter().filter(|(p, g)| p == g).count();
    Ok(matches as f64 / results.len() as f64)
}

/// Per-sample F1 with `P = |p ∩ g| / |p|` and `R = |p ∩ g| / |g|`; zero when
/// the prediction is empty or disjoint from the gold.
pub fn sample_f1(predicted: &BTreeSet<String>, gold: &BTreeSet<String>) -> f64 {
    let overlap = predicted.intersection(gold).count();
    if overlap == 0 || predicted.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let p = overlap as f64 / predicted.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct F1Scores {
    /// Mean of per-sample F1 (macro over samples).
    pub macro_f1: f64,
    /// F1 of the pooled counts across all samples.
    pub micro_f1: f64,
}

/// Set-F1 over (predicted, gold) pairs. The macro mean sums per-sample
/// scores in sorted order, which makes the result independent of sample
/// ordering down to the last bit.
pub fn set_f1(results: &[(BTreeSet<String>, BTreeSet<String>)]) -> F1Scores {
    if results.is_empty() {
        return F1Scores {
            macro_f1: 0.0,
            micro_f1: 0.0,
        };
    }
    let mut scores: Vec<f64> = results
        .iter()
        .map(|(p, g)| sample_f1(p, g))
        .collect();
    scores.sort_by(f64::total_cmp);
    let macro_f1 = scores.iter().sum::<f64>() / results.len() as f64;

    let mut overlap = 0usize;
    let mut predicted = 0usize;
    let mut gold = 0usize;
    for (p, g) in results {
        overlap += p.intersection(g).count();
        predicted += p.len();
        gold += g.len();
    }
    let micro_f1 = if overlap == 0 || predicted == 0 || gold == 0 {
        0.0
    } else {
        let p = overlap as f64 / predicted as f64;
        let r = overlap as f64 / gold as f64;
        2.0 * p * r / (p + r)
    };
    F1Scores { macro_f1, micro_f1 }
}

// ---------------------------------------------------------------------------
// Batch runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SampleOutcome {
    pub id: String,
    /// Selection in rank order; `["oos"]` for out-of-scope.
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub matched: bool,
    pub f1: f64,
    pub repairs: usize,
    /// Stage-attributed fault, when routing this sample failed outright.
    pub error: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: u64,
    pub max_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub n: usize,
    /// Defined only when every gold is a singleton or the oos sentinel.
    pub accuracy: Option<f64>,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub errors: usize,
    pub repairs: usize,
    pub latency: LatencyStats,
    pub config_fingerprint: String,
    /// Hash of the configuration and every per-sample outcome (latencies
    /// excluded), so two runs that decided identically fingerprint
    /// identically.
    pub fingerprint: String,
    pub per_sample: Vec<SampleOutcome>,
}

impl EvalReport {
    pub fn render_summary(&self) -> String {
        let accuracy = match self.accuracy {
            Some(a) => format!("{a:.4}"),
            None => "n/a (multi-label golds)".into(),
        };
        format!(
            "samples {n}\naccuracy {accuracy}\nf1_macro {f1m:.4}\nf1_micro {f1u:.4}\n\
errors {errors}\nrepairs {repairs}\nlatency_ms mean {mean:.1} p50 {p50} max {max}\n\
fingerprint {fp}",
            n = self.n,
            f1m = self.f1_macro,
            f1u = self.f1_micro,
            errors = self.errors,
            repairs = self.repairs,
            mean = self.latency.mean_ms,
            p50 = self.latency.p50_ms,
            max = self.latency.max_ms,
            fp = self.fingerprint,
        )
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Samples routed concurrently.
    pub concurrency: usize,
    /// Fingerprint of the service configuration the run used.
    pub config_fingerprint: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            concurrency: 8,
            config_fingerprint: "unconfigured".into(),
        }
    }
}

/// Routes every sample against its own pool snapshot with bounded
/// concurrency and aggregates the metrics. Per-sample faults (backend or
/// parse failures) score as unmatched and are tallied under `errors`; only
/// those leave `error` set on the outcome.
pub async fn run_eval(
    samples: &[EvalSample],
    orchestrator: &Orchestrator,
    options: &EvalOptions,
) -> EvalReport {
    let outcomes: Vec<SampleOutcome> = futures::stream::iter(samples.iter())
        .map(|sample| evaluate_sample(sample, orchestrator))
        .buffered(options.concurrency.max(1))
        .collect()
        .await;

    let pairs: Vec<(BTreeSet<String>, BTreeSet<String>)> = outcomes
        .iter()
        .map(|o| {
            (
                o.predicted.iter().cloned().collect(),
                o.gold.iter().cloned().collect(),
            )
        })
        .collect();
    let accuracy = accuracy(&pairs).ok();
    let f1 = set_f1(&pairs);
    let errors = outcomes.iter().filter(|o| o.error.is_some()).count();
    let repairs = outcomes.iter().map(|o| o.repairs).sum();

    let mut latencies: Vec<u64> = outcomes.iter().map(|o| o.latency_ms).collect();
    latencies.sort_unstable();
    let latency = if latencies.is_empty() {
        LatencyStats::default()
    } else {
        LatencyStats {
            mean_ms: latencies.iter().sum::<u64>() as f64 / latencies.len() as f64,
            p50_ms: latencies[latencies.len() / 2],
            max_ms: *latencies.last().expect("non-empty"),
        }
    };

    let fingerprint = report_fingerprint(&options.config_fingerprint, &outcomes);
    EvalReport {
        n: outcomes.len(),
        accuracy,
        f1_macro: f1.macro_f1,
        f1_micro: f1.micro_f1,
        errors,
        repairs,
        latency,
        config_fingerprint: options.config_fingerprint.clone(),
        fingerprint,
        per_sample: outcomes,
    }
}

async fn evaluate_sample(sample: &EvalSample, orchestrator: &Orchestrator) -> SampleOutcome {
    let gold: Vec<String> = sample.gold.iter().cloned().collect();
    let mut outcome = SampleOutcome {
        id: sample.id.clone(),
        predicted: Vec::new(),
        gold,
        matched: false,
        f1: 0.0,
        repairs: 0,
        error: None,
        latency_ms: 0,
    };
    let registry = match Registry::from_cards(sample.pool.iter().cloned()) {
        Ok(registry) => registry,
        Err(e) => {
            outcome.error = Some(format!("pool: {e}"));
            return outcome;
        }
    };
    match orchestrator.route(&sample.history, &registry.snapshot()).await {
        Ok(routed) => {
            outcome.latency_ms = routed.latency.as_millis() as u64;
            outcome.repairs = routed.decision.repairs.len();
            outcome.predicted = match &routed.decision.selection {
                Selection::Oos => vec![OOS_TOKEN.to_string()],
                Selection::Agents { ids } => ids.clone(),
            };
            let predicted_set: BTreeSet<String> = outcome.predicted.iter().cloned().collect();
            outcome.matched = predicted_set == sample.gold;
            outcome.f1 = sample_f1(&predicted_set, &sample.gold);
        }
        Err(e) => {
            outcome.error = Some(e.to_string());
        }
    }
    outcome
}

/// One (query, refined answer) pair for external judging. Task success
/// needs human or judge-model grading the harness cannot synthesize, so it
/// emits the material and computes no success number.
#[derive(Debug, Clone, Serialize)]
pub struct TranscriptEntry {
    pub id: String,
    pub query: String,
    pub answer: Option<String>,
    pub sources: Vec<String>,
    pub error: Option<String>,
}

/// Runs the full answer pipeline over every sample and collects the
/// transcript, with the same bounded concurrency as [`run_eval`].
pub async fn collect_transcripts(
    samples: &[EvalSample],
    orchestrator: &Orchestrator,
    concurrency: usize,
) -> Vec<TranscriptEntry> {
    futures::stream::iter(samples.iter())
        .map(|sample| async move {
            let mut entry = TranscriptEntry {
                id: sample.id.clone(),
                query: sample.history.query().to_string(),
                answer: None,
                sources: Vec::new(),
                error: None,
            };
            let registry = match Registry::from_cards(sample.pool.iter().cloned()) {
                Ok(registry) => registry,
                Err(e) => {
                    entry.error = Some(format!("pool: {e}"));
                    return entry;
                }
            };
            match orchestrator.answer(&sample.history, &registry.snapshot()).await {
                Ok(answer) => {
                    entry.answer = Some(answer.text);
                    entry.sources = answer.sources;
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            entry
        })
        .buffered(concurrency.max(1))
        .collect()
        .await
}

fn report_fingerprint(config_fingerprint: &str, outcomes: &[SampleOutcome]) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        config: &'a str,
        id: &'a str,
        predicted: &'a [String],
        gold: &'a [String],
        matched: bool,
        f1: f64,
        repairs: usize,
        error: &'a Option<String>,
    }
    let mut hasher = Sha256::new();
    for outcome in outcomes {
        let view = View {
            config: config_fingerprint,
            id: &outcome.id,
            predicted: &outcome.predicted,
            gold: &outcome.gold,
            matched: outcome.matched,
            f1: outcome.f1,
            repairs: outcome.repairs,
            error: &outcome.error,
        };
        hasher.update(serde_json::to_string(&view).expect("serializable view"));
        hasher.update(b"\n");
    }
    hex_prefix(&hasher.finalize(), 16)
}

pub(crate) fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for byte in bytes {
        if out.len() >= chars {
            break;
        }
        out.push_str(&format!("{byte:02x}"));
    }
    out.truncate(chars);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn accuracy_counts_exact_matches() {
        let mut results = vec![];
        for i in 0..10 {
            let gold = set(&["a"]);
            let predicted = if i == 7 { set(&["b"]) } else { set(&["a"]) };
            results.push((predicted, gold));
        }
        assert!((accuracy(&results).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn over_prediction_scores_zero_accuracy() {
        let results = vec![(set(&["a", "b"]), set(&["a"]))];
        assert_eq!(accuracy(&results).unwrap(), 0.0);
    }

    #[test]
    fn oos_sentinel_matches_oos_gold() {
        let results = vec![(set(&["oos"]), set(&["oos"])); 4];
        assert_eq!(accuracy(&results).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_rejects_multi_label_golds() {
        let results = vec![(set(&["a"]), set(&["a", "b"]))];
        assert!(matches!(
            accuracy(&results),
            Err(EvalError::MixedLabelKinds(_))
        ));
    }

    #[test]
    fn f1_examples() {
        assert!((sample_f1(&set(&["a"]), &set(&["a", "b"])) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(sample_f1(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(sample_f1(&set(&["c"]), &set(&["a", "b"])), 0.0);
        assert_eq!(sample_f1(&set(&[]), &set(&["a"])), 0.0);
    }

    #[test]
    fn macro_f1_is_order_invariant() {
        let mut results = vec![
            (set(&["a"]), set(&["a", "b"])),
            (set(&["a", "b"]), set(&["a", "b"])),
            (set(&["c"]), set(&["a"])),
            (set(&["a", "c"]), set(&["a"])),
        ];
        let forward = set_f1(&results);
        results.reverse();
        let backward = set_f1(&results);
        assert_eq!(forward.macro_f1, backward.macro_f1);
        assert_eq!(forward.micro_f1, backward.micro_f1);
    }

    #[test]
    fn singleton_world_f1_equals_accuracy() {
        let results = vec![
            (set(&["a"]), set(&["a"])),
            (set(&["b"]), set(&["a"])),
            (set(&["oos"]), set(&["oos"])),
            (set(&["c"]), set(&["c"])),
        ];
        let f1 = set_f1(&results);
        let acc = accuracy(&results).unwrap();
        assert_eq!(f1.macro_f1, acc);
    }

    #[test]
    fn dataset_loads_flat_records_with_named_pool() {
        let dir = tempfile::tempdir().unwrap();
        let pools_path = dir.path().join("pools.toml");
        std::fs::write(
            &pools_path,
            r#"
[[pool.mq]]
id = "ckafka_agent"
name = "CKafka Message Queue Agent"
description = "Query CKafka instance information and diagnose CKafka-related issues."

[[pool.mq]]
id = "rocketMQ_agent"
name = "RocketMQ Message Queue Agent"
description = "Analyze abnormal RocketMQ topic production rates."
"#,
        )
        .unwrap();
        let dataset_path = dir.path().join("data.jsonl");
        std::fs::write(
            &dataset_path,
            concat!(
                r#"{"id":"s1","query":"ckafka is down","pool":"mq","gold":["ckafka_agent"]}"#,
                "\n",
                r#"{"id":"s2","query":"unrelated question","pool":"mq","gold":["oos"]}"#,
                "\n",
                r#"{"id":"s3","query":"queues are odd","pool":"mq","gold":["ckafka_agent","rocketMQ_agent"]}"#,
                "\n",
            ),
        )
        .unwrap();
        let pools = load_pools(&pools_path).unwrap();
        let load = load_dataset(&dataset_path, DatasetFormat::Flat, &pools, false).unwrap();
        assert_eq!(load.samples.len(), 3);
        assert_eq!(load.samples[0].pool.len(), 2);
        assert_eq!(load.samples[1].gold, set(&["oos"]));
        assert_eq!(load.samples[2].gold.len(), 2);
    }

    #[test]
    fn dataset_rejects_gold_missing_from_pool() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"s1","query":"q","pool":[{"id":"a","name":"A","description":"d"}],"gold":["ghost"]}"#,
                "\n",
            ),
        )
        .unwrap();
        let err = load_dataset(&path, DatasetFormat::Flat, &PoolMap::new(), false).unwrap_err();
        match err {
            EvalError::Schema { line, field, message } => {
                assert_eq!(line, 1);
                assert_eq!(field, "gold");
                assert!(message.contains("ghost"));
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn multiturn_records_build_full_histories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"s1","turns":[{"speaker":"user","text":"hi"},{"speaker":"assistant","text":"hello"},{"speaker":"user","text":"still broken"},{"speaker":"assistant","text":"checking"}],"pool":[{"id":"a","name":"A","description":"d"}],"gold":["a"]}"#,
                "\n",
            ),
        )
        .unwrap();
        // Final turn is from the assistant: schema error in strict mode.
        let err = load_dataset(&path, DatasetFormat::Multiturn, &PoolMap::new(), false)
            .unwrap_err();
        assert!(matches!(err, EvalError::Schema { field: "turns", .. }));

        std::fs::write(
            &path,
            concat!(
                r#"{"id":"s1","turns":[{"speaker":"user","text":"hi"},{"speaker":"assistant","text":"hello"},{"speaker":"assistant","text":"checking"},{"speaker":"user","text":"still broken"}],"pool":[{"id":"a","name":"A","description":"d"}],"gold":["a"]}"#,
                "\n",
            ),
        )
        .unwrap();
        let load = load_dataset(&path, DatasetFormat::Multiturn, &PoolMap::new(), false).unwrap();
        let sample = &load.samples[0];
        assert_eq!(sample.history.turns().len(), 4);
        assert_eq!(sample.history.query(), "still broken");
    }

    #[test]
    fn lenient_load_collects_faults_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(
            &path,
            concat!(
                "garbage\n",
                r#"{"id":"ok","query":"q","pool":[{"id":"a","name":"A","description":"d"}],"gold":["a"]}"#,
                "\n",
            ),
        )
        .unwrap();
        let load = load_dataset(&path, DatasetFormat::Flat, &PoolMap::new(), true).unwrap();
        assert_eq!(load.samples.len(), 1);
        assert_eq!(load.faults.len(), 1);
        assert_eq!(load.faults[0].line, 1);
    }
}
