//! Intent and slot scoring over per-turn multisets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{f1, Counts};
use crate::corpus::BeliefFrame;

/// How slots are credited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotConvention {
    /// `(key, value)` pairs pooled per turn, ignoring the owning intent.
    #[default]
    Pooled,
    /// `(intent, key, value)` triples.
    IntentScoped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefMetrics {
    pub intent_f1: f64,
    pub slot_f1: f64,
    pub joint_accuracy: f64,
    pub intents: Counts,
    pub slots: Counts,
}

fn multiset<T: Ord>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn compare<T: Ord>(pred: &BTreeMap<T, usize>, gold: &BTreeMap<T, usize>) -> Counts {
    let tp: usize = pred
        .iter()
        .map(|(k, &c)| c.min(gold.get(k).copied().unwrap_or(0)))
        .sum();
    let n_pred: usize = pred.values().sum();
    let n_gold: usize = gold.values().sum();
    Counts {
        tp,
        fp: n_pred - tp,
        fn_: n_gold - tp,
    }
}

fn slot_keys(frames: &[BeliefFrame], convention: SlotConvention) -> BTreeMap<(String, String, String), usize> {
    multiset(frames.iter().flat_map(|f| {
        f.slots.iter().map(move |(k, v)| {
            let owner = match convention {
                SlotConvention::Pooled => String::new(),
                SlotConvention::IntentScoped => f.intent.clone(),
            };
            (owner, k.clone(), v.clone())
        })
    }))
}

/// Pooled micro-F1 for intents and slots, and the share of turns where both
/// multisets match exactly. Turns are paired by position.
pub fn belief_metrics(
    predicted: &[Vec<BeliefFrame>],
    gold: &[Vec<BeliefFrame>],
    convention: SlotConvention,
) -> BeliefMetrics {
    let mut intents = Counts::default();
    let mut slots = Counts::default();
    let mut joint = 0usize;
    for (p, g) in predicted.iter().zip(gold) {
        let pi = multiset(p.iter().map(|f| f.intent.as_str()));
        let gi = multiset(g.iter().map(|f| f.intent.as_str()));
        let ps = slot_keys(p, convention);
        let gs = slot_keys(g, convention);
        intents += compare(&pi, &gi);
        slots += compare(&ps, &gs);
        joint += usize::from(pi == gi && ps == gs);
    }
    let n = predicted.len().min(gold.len());
    BeliefMetrics {
        intent_f1: f1(intents),
        slot_f1: f1(slots),
        joint_accuracy: if n == 0 { 0.0 } else { joint as f64 / n as f64 },
        intents,
        slots,
    }
}
