//! Corpus-level evaluation: decode every turn, rank candidate pools and
//! assemble per-domain and overall reports.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::TrainedModel;
use crate::corpus::{AttributeLabel, BeliefFrame, Dialogue, Domain, Manifests};
use crate::decoder::{decode_turn, rank_candidates, TurnPrediction};
use crate::error::{Error, Result};
use crate::metrics::{
    action_metrics, attribute_metrics, belief_metrics, bleu4, retrieval_metrics, BleuMode,
    MetricsReport, SlotConvention, TABLE_HEADER,
};

pub const POOL_SIZE: usize = 100;
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// Retrieval candidates of one turn; `candidates[gt_index]` is the gold response.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidatePool {
    pub dialogue_id: String,
    pub turn: usize,
    pub candidates: Vec<String>,
    pub gt_index: usize,
}

fn pool_seed(dialogue_id: &str, turn: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(dialogue_id.as_bytes());
    h.update([0u8]);
    h.update((turn as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Gold response plus `pool_size - 1` distractors drawn from the other
/// responses of `corpus` whose text differs from the gold. Distractors are
/// distinct when enough distinct texts exist. Seeded by a hash of the
/// dialogue id and turn, so pools do not depend on corpus order.
pub fn candidate_pools(corpus: &[Dialogue], pool_size: usize) -> Result<Vec<CandidatePool>> {
    if pool_size == 0 {
        return Err(Error::InvalidArgument("pool size must be positive".into()));
    }
    let mut texts: Vec<&str> = corpus
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.system_response.as_str()))
        .collect();
    texts.sort_unstable();
    texts.dedup();
    let mut pools = Vec::new();
    for d in corpus {
        for (t, turn) in d.turns.iter().enumerate() {
            let gold = turn.system_response.as_str();
            let others: Vec<&str> = texts.iter().copied().filter(|&x| x != gold).collect();
            let need = pool_size - 1;
            if others.is_empty() && need > 0 {
                return Err(Error::InvalidArgument(
                    "corpus has no distinct responses to draw distractors from".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(pool_seed(&d.dialogue_id, t));
            let mut candidates: Vec<String> = if others.len() >= need {
                sample(&mut rng, others.len(), need)
                    .into_iter()
                    .map(|i| others[i].to_string())
                    .collect()
            } else {
                (0..need)
                    .map(|_| others[rng.random_range(0..others.len())].to_string())
                    .collect()
            };
            let gt_index = rng.random_range(0..pool_size);
            candidates.insert(gt_index, gold.to_string());
            pools.push(CandidatePool {
                dialogue_id: d.dialogue_id.clone(),
                turn: t,
                candidates,
                gt_index,
            });
        }
    }
    Ok(pools)
}

pub fn write_candidates(path: &Path, pools: &[CandidatePool]) -> Result<()> {
    let mut out = String::new();
    for p in pools {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidatePool>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pools = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let pool: CandidatePool = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            line: i + 1,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        if pool.gt_index >= pool.candidates.len() {
            return Err(Error::Schema {
                line: i + 1,
                field: "gt_index".into(),
                message: format!("{} outside {} candidates", pool.gt_index, pool.candidates.len()),
            });
        }
        pools.push(pool);
    }
    Ok(pools)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Force the gold action after `<EOB>` (when the add-action feature is on);
    /// otherwise the action head's prediction is forced.
    pub use_gt_action: bool,
    pub slot_convention: SlotConvention,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            use_gt_action: true,
            slot_convention: SlotConvention::Pooled,
        }
    }
}

/// One line of the prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub domain: Domain,
    pub belief_frames: Vec<BeliefFrame>,
    pub action: String,
    pub attributes: Vec<String>,
    pub response: String,
    pub eob_found: bool,
    pub gt_rank: usize,
    pub candidate_ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricsReport,
    pub per_domain: BTreeMap<Domain, MetricsReport>,
    /// Turns whose prompt exceeds the serializer limit.
    pub skipped_turns: usize,
}

impl EvalReport {
    /// Header plus one row per domain and an overall row.
    pub fn table(&self, label: &str) -> String {
        let mut out = format!("{TABLE_HEADER}\n");
        for (d, r) in &self.per_domain {
            out.push_str(&r.table_row(&format!("{label} [{d}]")));
            out.push('\n');
        }
        out.push_str(&self.overall.table_row(&format!("{label} [all]")));
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub struct EvalOutput {
    pub report: EvalReport,
    pub predictions: Vec<PredictionRecord>,
}

struct Scored<'a> {
    pred: TurnPrediction,
    gold: &'a crate::corpus::Turn,
    gt_rank: usize,
    pool_len: usize,
}

fn score(turns: &[&Scored], domain: Option<Domain>, opts: &EvalOptions) -> Result<MetricsReport> {
    let probs: Vec<Vec<f64>> = turns.iter().map(|s| s.pred.api.action_probs.clone()).collect();
    let gold_actions: Vec<usize> = turns.iter().map(|s| s.gold.action.action).collect();
    let action = action_metrics(&probs, &gold_actions)?;
    let pred_attr: Vec<AttributeLabel> = turns.iter().map(|s| s.pred.api.attributes.clone()).collect();
    let gold_attr: Vec<AttributeLabel> = turns.iter().map(|s| s.gold.action.attributes.clone()).collect();
    let attribute = attribute_metrics(&pred_attr, &gold_attr)?;
    let hyps: Vec<&str> = turns.iter().map(|s| s.pred.response.as_str()).collect();
    let refs: Vec<&str> = turns.iter().map(|s| s.gold.system_response.as_str()).collect();
    let bleu = bleu4(&hyps, &refs, BleuMode::Corpus);
    let ranks: Vec<usize> = turns.iter().map(|s| s.gt_rank).collect();
    let pool_len = turns.iter().map(|s| s.pool_len).max().unwrap_or(1);
    let retrieval = retrieval_metrics(&ranks, pool_len, &RECALL_KS)?;
    let pred_b: Vec<Vec<BeliefFrame>> = turns.iter().map(|s| s.pred.belief_frames.clone()).collect();
    let gold_b: Vec<Vec<BeliefFrame>> = turns.iter().map(|s| s.gold.belief.clone()).collect();
    let belief = belief_metrics(&pred_b, &gold_b, opts.slot_convention);
    let missing = turns.iter().filter(|s| !s.pred.eob_found).count();
    Ok(MetricsReport::assemble(
        domain,
        &action,
        &attribute,
        bleu,
        &retrieval,
        &belief,
        opts.slot_convention,
        turns.len(),
        missing,
    ))
}

/// Decodes and scores every turn of `corpus`. Without explicit pools the
/// deterministic pools of `candidate_pools` are used.
pub fn evaluate(
    model: &TrainedModel,
    corpus: &[Dialogue],
    pools: Option<&[CandidatePool]>,
    opts: &EvalOptions,
) -> Result<EvalOutput> {
    if let Some(d) = corpus.iter().find(|d| !model.domains.contains(&d.domain)) {
        return Err(Error::InvalidArgument(format!(
            "dialogue {} is {} but the model was trained on {:?} only",
            d.dialogue_id, d.domain, model.domains
        )));
    }
    let generated;
    let pools = match pools {
        Some(p) => p,
        None => {
            generated = candidate_pools(corpus, POOL_SIZE)?;
            &generated
        }
    };
    let by_key: HashMap<(&str, usize), &CandidatePool> =
        pools.iter().map(|p| ((p.dialogue_id.as_str(), p.turn), p)).collect();
    let manifests = Manifests::default();

    let mut scored = Vec::new();
    let mut predictions = Vec::new();
    let mut skipped = 0;
    for d in corpus {
        for (t, gold) in d.turns.iter().enumerate() {
            let pred = match decode_turn(
                &model.params,
                &model.model,
                &model.serializer,
                &model.vocab,
                &model.intents,
                d,
                t,
                opts.use_gt_action,
            ) {
                Ok(p) => p,
                Err(Error::SequenceTooLong { len, max }) => {
                    log::warn!("skipping {} turn {t}: prompt of {len} tokens exceeds {max}", d.dialogue_id);
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let pool = by_key.get(&(d.dialogue_id.as_str(), t)).ok_or_else(|| {
                Error::InvalidArgument(format!("no candidate pool for {} turn {t}", d.dialogue_id))
            })?;
            let ranks = rank_candidates(&pred.response, &pool.candidates);
            let manifest = manifests.get(d.domain);
            let attributes = match &pred.api.attributes {
                AttributeLabel::Single(c) => vec![manifest.attributes[*c].clone()],
                AttributeLabel::Multi(flags) => flags
                    .iter()
                    .zip(&manifest.attributes)
                    .filter(|(on, _)| **on)
                    .map(|(_, n)| n.clone())
                    .collect(),
            };
            predictions.push(PredictionRecord {
                dialogue_id: d.dialogue_id.clone(),
                turn: t,
                domain: d.domain,
                belief_frames: pred.belief_frames.clone(),
                action: manifest.actions[pred.api.action].clone(),
                attributes,
                response: pred.response.clone(),
                eob_found: pred.eob_found,
                gt_rank: ranks[pool.gt_index],
                candidate_ranks: ranks.clone(),
            });
            scored.push(Scored {
                gt_rank: ranks[pool.gt_index],
                pool_len: pool.candidates.len(),
                pred,
                gold,
            });
        }
    }
    if scored.is_empty() {
        return Err(Error::InvalidArgument("no evaluable turns".into()));
    }
    let all: Vec<&Scored> = scored.iter().collect();
    let overall = score(&all, None, opts)?;
    let mut per_domain = BTreeMap::new();
    for domain in Domain::ALL {
        let subset: Vec<&Scored> = scored.iter().filter(|s| s.pred.domain == domain).collect();
        if !subset.is_empty() {
            per_domain.insert(domain, score(&subset, Some(domain), opts)?);
        }
    }
    Ok(EvalOutput {
        report: EvalReport {
            overall,
            per_domain,
            skipped_turns: skipped,
        },
        predictions,
    })
}

pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
