//! Property tests for the structural invariants: registry ordering, prompt
//! injectivity and structural diffs, decision-grammar round trips and
//! totality, reward monotonicity, and metric order-invariance.

use std::collections::BTreeSet;

use proptest::collection::{btree_set, vec};
use proptest::prelude::*;

use switchboard_core::decision::{
    parse_decision, render_decision, ParseMode, RoutingDecision, Selection,
};
use switchboard_core::eval::{sample_f1, set_f1};
use switchboard_core::prompt::{
    estimate_tokens, render_router_prompt, ChatHistory, TemplateSet,
};
use switchboard_core::registry::{AgentCard, Registry, Snapshot};
use switchboard_core::reward::{
    combined_reward, coverage_reward, precision_reward, IdSet, RewardConfig,
};

fn id_strategy() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,8}".prop_filter("oos is reserved", |s| s != "oos")
}

fn unique_ids(min: usize, max: usize) -> impl Strategy<Value = Vec<String>> {
    btree_set(id_strategy(), min..=max).prop_map(|set| set.into_iter().collect())
}

fn card(id: &str) -> AgentCard {
    AgentCard::new(id, format!("{id} name"), format!("{id} handles {id} problems"))
}

fn registry_of(ids: &[String]) -> Registry {
    Registry::from_cards(ids.iter().map(|id| card(id))).expect("valid cards")
}

fn render(snapshot: &Snapshot, query: &str) -> String {
    render_router_prompt(
        &TemplateSet::v1(),
        snapshot,
        &ChatHistory::single(query),
        3,
    )
    .expect("renderable")
    .text
}

/// Splits a rendered prompt into (prefix, agent blocks, suffix).
fn agent_blocks(prompt: &str) -> (String, Vec<String>, String) {
    let start = prompt.find("<Agent>").expect("has agent blocks");
    let end = prompt.rfind("</Agent>").expect("has agent blocks") + "</Agent>".len();
    let blocks = prompt[start..end]
        .split("\n\n")
        .map(str::to_string)
        .collect();
    (prompt[..start].to_string(), blocks, prompt[end..].to_string())
}

proptest! {
    // ---------------- registry ----------------

    #[test]
    fn registry_keeps_unique_ids_in_insertion_order(
        ids in unique_ids(1, 8),
        removals in vec(0usize..8, 0..4),
    ) {
        let mut registry = registry_of(&ids);
        let mut model: Vec<String> = ids.clone();
        for r in removals {
            if model.is_empty() { break; }
            let victim = model[r % model.len()].clone();
            registry.remove_agent(&victim).unwrap();
            model.retain(|id| *id != victim);
        }
        let got: Vec<&str> = registry.cards().iter().map(|c| c.id.as_str()).collect();
        let want: Vec<&str> = model.iter().map(String::as_str).collect();
        prop_assert_eq!(got, want);
        let unique: BTreeSet<&str> = registry.cards().iter().map(|c| c.id.as_str()).collect();
        prop_assert_eq!(unique.len(), registry.len());
    }

    #[test]
    fn add_then_remove_restores_card_sequence(ids in unique_ids(1, 6), new_id in id_strategy()) {
        prop_assume!(!ids.contains(&new_id));
        let mut registry = registry_of(&ids);
        let before: Vec<AgentCard> = registry.cards().to_vec();
        registry.add_agent(card(&new_id)).unwrap();
        registry.remove_agent(&new_id).unwrap();
        prop_assert_eq!(registry.cards(), before.as_slice());
    }

    #[test]
    fn snapshots_are_immune_to_later_mutations(ids in unique_ids(1, 6), new_id in id_strategy()) {
        prop_assume!(!ids.contains(&new_id));
        let mut registry = registry_of(&ids);
        let snap = registry.snapshot();
        let before: Vec<String> = snap.ids().map(str::to_string).collect();
        registry.add_agent(card(&new_id)).unwrap();
        registry.remove_agent(&ids[0]).unwrap();
        let after: Vec<String> = snap.ids().map(str::to_string).collect();
        prop_assert_eq!(before, after);
    }

    // ---------------- prompt ----------------

    #[test]
    fn each_id_appears_exactly_once_in_an_id_tag(ids in unique_ids(1, 8)) {
        let prompt = render(&registry_of(&ids).snapshot(), "q");
        for id in &ids {
            let tagged = format!("<ID>{id}</ID>");
            prop_assert_eq!(prompt.matches(&tagged).count(), 1, "id {}", id);
        }
        prop_assert_eq!(prompt.matches("<Agent>").count(), ids.len());
    }

    #[test]
    fn render_is_injective_on_id_sequences(ids_a in unique_ids(1, 6), ids_b in unique_ids(1, 6)) {
        prop_assume!(ids_a != ids_b);
        let a = render(&registry_of(&ids_a).snapshot(), "q");
        let b = render(&registry_of(&ids_b).snapshot(), "q");
        prop_assert_ne!(a, b);
    }

    #[test]
    fn reversing_the_pool_changes_the_prompt(ids in unique_ids(2, 6)) {
        let mut reversed = ids.clone();
        reversed.reverse();
        let a = render(&registry_of(&ids).snapshot(), "q");
        let b = render(&registry_of(&reversed).snapshot(), "q");
        prop_assert_ne!(a, b);
    }

    /// Growing the pool by one agent changes the prompt by exactly one
    /// appended `<Agent>` block; prefix and suffix are untouched.
    #[test]
    fn adding_an_agent_inserts_exactly_one_block(ids in unique_ids(1, 6), new_id in id_strategy()) {
        prop_assume!(!ids.contains(&new_id));
        let mut registry = registry_of(&ids);
        let before = render(&registry.snapshot(), "q");
        registry.add_agent(card(&new_id)).unwrap();
        let after = render(&registry.snapshot(), "q");

        let (prefix_a, blocks_a, suffix_a) = agent_blocks(&before);
        let (prefix_b, mut blocks_b, suffix_b) = agent_blocks(&after);
        prop_assert_eq!(prefix_a, prefix_b);
        prop_assert_eq!(suffix_a, suffix_b);
        let last = blocks_b.pop().expect("non-empty");
        prop_assert_eq!(blocks_a, blocks_b);
        let tagged = format!("<ID>{new_id}</ID>");
        prop_assert!(last.contains(&tagged));
    }

    #[test]
    fn token_estimate_is_monotone_under_extension(base in ".{0,64}", extra in ".{0,32}") {
        let longer = format!("{base}{extra}");
        prop_assert!(estimate_tokens(&base) <= estimate_tokens(&longer));
    }

    // ---------------- decision grammar ----------------

    /// parse ∘ render is the identity on (reason, selection). Reasons are
    /// drawn without `<` so the rendered text stays inside the grammar.
    #[test]
    fn parse_render_fixpoint(
        pool in unique_ids(1, 6),
        pick in vec(any::<prop::sample::Index>(), 1..=3),
        reason in "[^<]{0,40}",
        oos in any::<bool>(),
    ) {
        let selection = if oos {
            Selection::Oos
        } else {
            let mut ids: Vec<String> = Vec::new();
            for index in pick {
                let id = pool[index.index(pool.len())].clone();
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            Selection::Agents { ids }
        };
        let decision = RoutingDecision::synthetic(reason.trim().to_string(), selection);
        let pool_set: BTreeSet<String> = pool.iter().cloned().collect();
        let parsed = parse_decision(&render_decision(&decision), &pool_set, 3, ParseMode::Lenient)
            .expect("canonical text parses");
        prop_assert_eq!(parsed.reason, decision.reason);
        prop_assert_eq!(parsed.selection, decision.selection);
    }

    /// Lenient parsing is total: arbitrary bytes produce a decision or a
    /// classified error, never a panic, and any decision respects the pool,
    /// dedup, and cap invariants.
    #[test]
    fn lenient_parse_is_total_and_validated(
        bytes in vec(any::<u8>(), 0..256),
        pool in unique_ids(1, 4),
        max_agents in 1usize..4,
    ) {
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let pool_set: BTreeSet<String> = pool.iter().cloned().collect();
        if let Ok(decision) = parse_decision(&text, &pool_set, max_agents, ParseMode::Lenient) {
            let ids = decision.selection.ids();
            prop_assert!(ids.len() <= max_agents);
            let unique: BTreeSet<&String> = ids.iter().collect();
            prop_assert_eq!(unique.len(), ids.len());
            for id in ids {
                prop_assert!(pool_set.contains(id));
            }
        }
    }

    #[test]
    fn parse_is_total_on_tag_shaped_noise(
        noise in r"(<ID>[a-z ]{0,6}</ID>|<Reason>[a-z]{0,6}|</Reason>|oos|[a-z<>/ ]{0,10}){0,8}",
        pool in unique_ids(1, 3),
    ) {
        let pool_set: BTreeSet<String> = pool.iter().cloned().collect();
        let _ = parse_decision(&noise, &pool_set, 3, ParseMode::Lenient);
    }

    // ---------------- rewards ----------------

    #[test]
    fn rewards_are_set_functions(
        universe in unique_ids(2, 6),
        pred_bits in any::<u8>(),
        gold_bits in any::<u8>(),
        alpha in 0.0f64..=1.0,
        beta in 0.0f64..=1.0,
    ) {
        let subset = |bits: u8| -> IdSet {
            universe
                .iter()
                .enumerate()
                .filter(|(i, _)| bits & (1 << i) != 0)
                .map(|(_, id)| id.clone())
                .collect()
        };
        let pred = subset(pred_bits);
        let gold = subset(gold_bits);
        let cfg = RewardConfig { alpha, beta };
        let breakdown = combined_reward(&pred, &gold, &cfg);

        // Rebuild the same sets from reversed insertion order; identical
        // results show the inputs act as sets.
        let pred_rev: IdSet = pred.iter().rev().cloned().collect();
        let gold_rev: IdSet = gold.iter().rev().cloned().collect();
        let again = combined_reward(&pred_rev, &gold_rev, &cfg);
        prop_assert_eq!(breakdown, again);

        prop_assert!(breakdown.total <= 1.0 + 1e-12);
        prop_assert!(breakdown.total >= -beta * pred.len() as f64 - 1e-12);
        prop_assert!((0.0..=1.0).contains(&breakdown.precision));
        prop_assert!((0.0..=1.0).contains(&breakdown.coverage));
    }

    #[test]
    fn adding_a_wrong_id_strictly_lowers_precision(
        universe in unique_ids(3, 6),
        pred_size in 1usize..3,
    ) {
        // gold = first element; pred = next pred_size elements (all wrong
        // would zero precision, so seed one correct id).
        let gold: IdSet = [universe[0].clone()].into_iter().collect();
        let mut pred: IdSet = [universe[0].clone()].into_iter().collect();
        pred.extend(universe.iter().skip(1).take(pred_size - 1).cloned());
        let intruder = universe.last().expect("non-empty").clone();
        prop_assume!(!pred.contains(&intruder) && !gold.contains(&intruder));

        let before = precision_reward(&pred, &gold);
        pred.insert(intruder);
        let after = precision_reward(&pred, &gold);
        prop_assert!(after < before, "precision {before} -> {after}");
    }

    #[test]
    fn adding_a_gold_id_never_lowers_coverage(
        universe in unique_ids(2, 6),
        pred_bits in any::<u8>(),
    ) {
        let gold: IdSet = universe.iter().take(2).cloned().collect();
        let mut pred: IdSet = universe
            .iter()
            .enumerate()
            .filter(|(i, _)| pred_bits & (1 << i) != 0)
            .map(|(_, id)| id.clone())
            .collect();
        let before = coverage_reward(&pred, &gold);
        pred.insert(universe[0].clone());
        let after = coverage_reward(&pred, &gold);
        prop_assert!(after >= before);
    }

    // ---------------- metrics ----------------

    #[test]
    fn metrics_are_invariant_under_sample_reordering(
        pairs in vec((unique_ids(1, 3), unique_ids(1, 3)), 1..12),
        seed in any::<u64>(),
    ) {
        let results: Vec<(BTreeSet<String>, BTreeSet<String>)> = pairs
            .iter()
            .map(|(p, g)| (p.iter().cloned().collect(), g.iter().cloned().collect()))
            .collect();
        let mut shuffled = results.clone();
        // Deterministic Fisher-Yates driven by the seed.
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let a = set_f1(&results);
        let b = set_f1(&shuffled);
        prop_assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
        prop_assert_eq!(a.micro_f1.to_bits(), b.micro_f1.to_bits());
    }

    #[test]
    fn sample_f1_stays_in_unit_interval(pred in unique_ids(0, 4), gold in unique_ids(1, 4)) {
        let p: BTreeSet<String> = pred.iter().cloned().collect();
        let g: BTreeSet<String> = gold.iter().cloned().collect();
        let f1 = sample_f1(&p, &g);
        prop_assert!((0.0..=1.0).contains(&f1));
    }
}
