//! Evaluation metrics for API prediction, response generation and
//! retrieval, and belief tracking, plus the combined score row.

mod belief;
mod bleu;

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeLabel, Domain};
use crate::error::{Error, Result};

pub use belief::{belief_metrics, BeliefMetrics, SlotConvention};
pub use bleu::{bleu4, sentence_bleu, BleuMode};

/// Probability assigned to a gold class is floored here before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Micro-F1 from pooled counts. Nothing gold and nothing predicted scores 1.
pub fn f1(c: Counts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionMetrics {
    pub accuracy: f64,
    /// `exp(-mean ln p(gold))`.
    pub perplexity: f64,
    /// Turns whose gold probability was below `PROB_FLOOR`.
    pub floored: usize,
}

/// Accuracy of the argmax (lowest index on ties) and perplexity of the gold action.
pub fn action_metrics(probabilities: &[Vec<f64>], gold: &[usize]) -> Result<ActionMetrics> {
    if probabilities.is_empty() || probabilities.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} probability rows for {} gold actions",
            probabilities.len(),
            gold.len()
        )));
    }
    let mut correct = 0usize;
    let mut nll = 0.0;
    let mut floored = 0;
    for (i, (p, &g)) in probabilities.iter().zip(gold).enumerate() {
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || g >= p.len() {
            return Err(Error::InvalidArgument(format!(
                "turn {i}: probabilities sum to {sum} over {} classes, gold {g}",
                p.len()
            )));
        }
        correct += usize::from(argmax(p) == g);
        if p[g] < PROB_FLOOR {
            floored += 1;
        }
        nll -= p[g].max(PROB_FLOOR).ln();
    }
    let n = gold.len() as f64;
    Ok(ActionMetrics {
        accuracy: correct as f64 / n,
        perplexity: (nll / n).exp(),
        floored,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeMetrics {
    /// Exact match of the label (single class or whole flag set).
    pub accuracy: f64,
    /// Micro-F1 over label instances; a single class counts as a one-element set.
    pub micro_f1: f64,
    pub counts: Counts,
}

impl AttributeMetrics {
    /// Accuracy for furniture, micro-F1 for fashion and for mixed pools.
    pub fn score(&self, domain: Option<Domain>) -> f64 {
        match AttributeConvention::for_domain(domain) {
            AttributeConvention::Accuracy => self.accuracy,
            AttributeConvention::MicroF1 => self.micro_f1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeConvention {
    Accuracy,
    MicroF1,
}

impl AttributeConvention {
    pub fn for_domain(domain: Option<Domain>) -> Self {
        match domain {
            Some(Domain::Furniture) => AttributeConvention::Accuracy,
            _ => AttributeConvention::MicroF1,
        }
    }
}

fn label_set(label: &AttributeLabel) -> Vec<usize> {
    match label {
        AttributeLabel::Single(c) => vec![*c],
        AttributeLabel::Multi(flags) => flags
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect(),
    }
}

pub fn attribute_metrics(predicted: &[AttributeLabel], gold: &[AttributeLabel]) -> Result<AttributeMetrics> {
    if predicted.is_empty() || predicted.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted attribute labels for {} gold",
            predicted.len(),
            gold.len()
        )));
    }
    let mut counts = Counts::default();
    let mut exact = 0usize;
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        match (p, g) {
            (AttributeLabel::Single(_), AttributeLabel::Single(_)) => {}
            (AttributeLabel::Multi(a), AttributeLabel::Multi(b)) if a.len() == b.len() => {}
            _ => {
                return Err(Error::Shape(format!(
                    "turn {i}: predicted {p:?} does not match the shape of gold {g:?}"
                )))
            }
        }
        let ps = label_set(p);
        let gs = label_set(g);
        let tp = ps.iter().filter(|x| gs.contains(x)).count();
        counts += Counts {
            tp,
            fp: ps.len() - tp,
            fn_: gs.len() - tp,
        };
        exact += usize::from(p == g);
    }
    Ok(AttributeMetrics {
        accuracy: exact as f64 / gold.len() as f64,
        micro_f1: f1(counts),
        counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// `(K, Recall@K)` in the order requested.
    pub recall: Vec<(usize, f64)>,
    pub mean_rank: f64,
    pub mrr: f64,
}

impl RetrievalMetrics {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r)
    }
}

/// Recall@K = mean `[K > rank]`, MeanRank = mean `(rank + 1)`,
/// MRR = mean `1 / (rank + 1)`, with 0-based ranks.
pub fn retrieval_metrics(gt_ranks: &[usize], n_candidates: usize, ks: &[usize]) -> Result<RetrievalMetrics> {
    if gt_ranks.is_empty() {
        return Err(Error::InvalidArgument("no ranks to score".into()));
    }
    if let Some(r) = gt_ranks.iter().find(|&&r| r >= n_candidates) {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside a pool of {n_candidates} candidates"
        )));
    }
    let n = gt_ranks.len() as f64;
    Ok(RetrievalMetrics {
        recall: ks
            .iter()
            .map(|&k| (k, gt_ranks.iter().filter(|&&r| k > r).count() as f64 / n))
            .collect(),
        mean_rank: gt_ranks.iter().map(|&r| (r + 1) as f64).sum::<f64>() / n,
        mrr: gt_ranks.iter().map(|&r| 1.0 / (r + 1) as f64).sum::<f64>() / n,
    })
}

/// One row of the combined score table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_turns: usize,
    pub action_accuracy: f64,
    pub attribute_score: f64,
    pub attribute_convention: AttributeConvention,
    pub attribute_accuracy: f64,
    pub attribute_f1: f64,
    pub action_perplexity: f64,
    pub bleu4: f64,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub mean_rank: f64,
    pub mrr: f64,
    pub intent_f1: f64,
    pub slot_f1: f64,
    pub joint_accuracy: f64,
    pub slot_convention: SlotConvention,
    /// Turns whose generation produced no `<EOB>`.
    pub missing_eob: usize,
    pub floored_probabilities: usize,
}

pub const TABLE_HEADER: &str =
    "Model | Act. Acc. | Attr. | Act Per. | BLEU | r1 | r5 | r10 | Mean | MRR | Intent F1 | Slot F1 | joint";

impl MetricsReport {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        domain: Option<Domain>,
        action: &ActionMetrics,
        attribute: &AttributeMetrics,
        bleu: f64,
        retrieval: &RetrievalMetrics,
        belief: &BeliefMetrics,
        slot_convention: SlotConvention,
        n_turns: usize,
        missing_eob: usize,
    ) -> Self {
        Self {
            n_turns,
            action_accuracy: action.accuracy,
            attribute_score: attribute.score(domain),
            attribute_convention: AttributeConvention::for_domain(domain),
            attribute_accuracy: attribute.accuracy,
            attribute_f1: attribute.micro_f1,
            action_perplexity: action.perplexity,
            bleu4: bleu,
            recall_at_1: retrieval.recall_at(1).unwrap_or(0.0),
            recall_at_5: retrieval.recall_at(5).unwrap_or(0.0),
            recall_at_10: retrieval.recall_at(10).unwrap_or(0.0),
            mean_rank: retrieval.mean_rank,
            mrr: retrieval.mrr,
            intent_f1: belief.intent_f1,
            slot_f1: belief.slot_f1,
            joint_accuracy: belief.joint_accuracy,
            slot_convention,
            missing_eob,
            floored_probabilities: action.floored,
        }
    }

    /// Rates as percentages, BLEU and MRR as fractions, in the column order of `TABLE_HEADER`.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label} | {:.2} | {:.2} | {:.2} | {:.3} | {:.1} | {:.1} | {:.1} | {:.1} | {:.3} | {:.2} | {:.2} | {:.2}",
            100.0 * self.action_accuracy,
            100.0 * self.attribute_score,
            self.action_perplexity,
            self.bleu4,
            100.0 * self.recall_at_1,
            100.0 * self.recall_at_5,
            100.0 * self.recall_at_10,
            self.mean_rank,
            self.mrr,
            100.0 * self.intent_f1,
            100.0 * self.slot_f1,
            100.0 * self.joint_accuracy,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
