//! Greedy generation of belief and response, API prediction at `<EOB>`,
//! action forcing and BLEU-based candidate ranking.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeLabel, BeliefFrame, Dialogue, Domain};
use crate::error::{Error, Result};
use crate::metrics::sentence_bleu;
use crate::model::{classifier_forward, softmax, DecodeState, HeadKind, ModelConfig, Parameters};
use crate::serializer::{
    action_from_token, action_token, context_prompt, parse_belief, IntentVocab, Prompt, Segment,
    SerializerConfig, EOB, EOS,
};
use crate::tokenizer::Vocab;

pub const MAX_NEW_TOKENS: usize = 128;

/// Which action token, if any, is appended right after the generated `<EOB>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionForcing {
    /// Nothing is forced; generation continues freely.
    Off,
    /// The given gold action of the turn's domain.
    GroundTruth(usize),
    /// The action head's own prediction at `<EOB>`.
    Predicted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Generated ids, forced action token included.
    pub tokens: Vec<usize>,
    /// Index of `<EOB>` within `tokens`.
    pub eob_index: Option<usize>,
    /// Index of the forced action token within `tokens`.
    pub forced_index: Option<usize>,
    /// Generation ended on `<EOS>` rather than a budget.
    pub finished: bool,
    /// Final hidden state at `<EOB>`, or at the last position when none was generated.
    pub tap_hidden: Array1<f64>,
}

fn argmax_allowed(logits: ArrayView1<f64>, banned: Option<usize>) -> usize {
    let mut best: Option<usize> = None;
    for (i, &v) in logits.iter().enumerate() {
        if Some(i) == banned {
            continue;
        }
        if best.is_none_or(|b| v > logits[b]) {
            best = Some(i);
        }
    }
    best.expect("vocabulary has at least two tokens")
}

/// Greedy decoding from `prompt`, ties to the lowest id, `<EOB>` allowed once.
///
/// Stops after `<EOS>`, after `max_new_tokens` generated tokens, or when the
/// model's context is full.
pub fn greedy_generate(
    params: &Parameters,
    cfg: &ModelConfig,
    prompt: &Prompt,
    max_new_tokens: usize,
    vocab: &Vocab,
) -> Result<Generation> {
    generate(params, cfg, prompt, max_new_tokens, vocab, None, ActionForcing::Off)
}

/// Greedy decoding with an action token forced after `<EOB>`.
pub fn respond_with_gt_action(
    params: &Parameters,
    cfg: &ModelConfig,
    prompt: &Prompt,
    domain: Domain,
    gt_action: usize,
    vocab: &Vocab,
) -> Result<Generation> {
    generate(
        params,
        cfg,
        prompt,
        MAX_NEW_TOKENS,
        vocab,
        Some(domain),
        ActionForcing::GroundTruth(gt_action),
    )
}

/// Greedy decoding with optional action forcing; `domain` is required
/// unless forcing is off.
pub fn generate(
    params: &Parameters,
    cfg: &ModelConfig,
    prompt: &Prompt,
    max_new_tokens: usize,
    vocab: &Vocab,
    domain: Option<Domain>,
    forcing: ActionForcing,
) -> Result<Generation> {
    if prompt.tokens.is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    let forced_domain = match (forcing, domain) {
        (ActionForcing::Off, _) => None,
        (_, Some(d)) => Some(d),
        (_, None) => {
            return Err(Error::InvalidArgument(
                "action forcing needs the turn's domain".into(),
            ))
        }
    };
    let eob = vocab.id(EOB);
    let eos = vocab.id(EOS);
    let mut state = DecodeState::new(params, cfg);
    let mut logits = state.feed(&prompt.tokens, &prompt.segment_ids)?;
    let mut out = Generation {
        tokens: Vec::new(),
        eob_index: None,
        forced_index: None,
        finished: false,
        tap_hidden: Array1::zeros(cfg.model_dim),
    };
    let mut produced = 0;
    while produced < max_new_tokens && state.len() < cfg.max_seq_len {
        let banned = out.eob_index.map(|_| eob);
        let next = argmax_allowed(logits.view(), banned);
        out.tokens.push(next);
        produced += 1;
        logits = state.feed(&[next], &[Segment::Bel])?;
        if next == eos {
            out.finished = true;
            break;
        }
        if next == eob {
            out.eob_index = Some(out.tokens.len() - 1);
            let hidden = state.last_hidden().expect("fed at least one token").to_owned();
            if let Some(d) = forced_domain {
                if state.len() >= cfg.max_seq_len {
                    out.tap_hidden = hidden;
                    break;
                }
                let action = match forcing {
                    ActionForcing::GroundTruth(a) => a,
                    _ => predict_api(params, hidden.view(), d).action,
                };
                if action >= d.n_actions() {
                    return Err(Error::InvalidArgument(format!(
                        "action {action} out of range for {d}"
                    )));
                }
                let forced = vocab.id(&action_token(d, action));
                out.tokens.push(forced);
                out.forced_index = Some(out.tokens.len() - 1);
                logits = state.feed(&[forced], &[Segment::Bel])?;
            }
            out.tap_hidden = hidden;
        }
    }
    if out.eob_index.is_none() {
        out.tap_hidden = state
            .last_hidden()
            .expect("prompt is non-empty")
            .to_owned();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiPrediction {
    pub action: usize,
    pub action_probs: Vec<f64>,
    pub attributes: AttributeLabel,
    /// Softmax over classes (furniture) or per-label sigmoids (fashion).
    pub attribute_probs: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Action by softmax argmax; furniture attribute by argmax; fashion
/// attributes where the sigmoid is strictly above 0.5. Ties go to the lowest index.
pub fn predict_api(params: &Parameters, hidden: ArrayView1<f64>, domain: Domain) -> ApiPrediction {
    let action_logits = classifier_forward(hidden, params.head(HeadKind::action(domain)));
    let action_probs = softmax(action_logits.view()).to_vec();
    let action = argmax_allowed(action_logits.view(), None);
    let attr_logits = classifier_forward(hidden, params.head(HeadKind::attribute(domain)));
    let (attributes, attribute_probs) = if domain.multi_label_attributes() {
        let probs: Vec<f64> = attr_logits.iter().map(|&z| sigmoid(z)).collect();
        (AttributeLabel::Multi(probs.iter().map(|&p| p > 0.5).collect()), probs)
    } else {
        (
            AttributeLabel::Single(argmax_allowed(attr_logits.view(), None)),
            softmax(attr_logits.view()).to_vec(),
        )
    };
    ApiPrediction {
        action,
        action_probs,
        attributes,
        attribute_probs,
    }
}

/// 0-based rank of every candidate, scored by smoothed sentence BLEU-4
/// against the generated response; ties keep ascending candidate order.
pub fn rank_candidates<S: AsRef<str>>(generated_response: &str, candidates: &[S]) -> Vec<usize> {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| sentence_bleu(c.as_ref(), generated_response))
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; candidates.len()];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank;
    }
    ranks
}

/// Everything decoded for one turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub dialogue_id: String,
    pub turn: usize,
    pub domain: Domain,
    pub belief_text: String,
    pub belief_frames: Vec<BeliefFrame>,
    pub api: ApiPrediction,
    pub response: String,
    pub eob_found: bool,
    pub finished: bool,
}

/// Splits a generation into belief text and response text. Without `<EOB>`
/// the whole generation is the response. A leading action token after
/// `<EOB>` is not part of the response.
pub fn split_generation(gen: &Generation, vocab: &Vocab, domain: Domain) -> (String, String) {
    let eos = vocab.id(EOS);
    let body: Vec<usize> = gen.tokens.iter().copied().take_while(|&t| t != eos).collect();
    let (belief, mut rest): (&[usize], &[usize]) = match gen.eob_index {
        Some(i) if i <= body.len() => (&body[..i], &body[(i + 1).min(body.len())..]),
        _ => (&[], &body[..]),
    };
    if gen.eob_index.is_some() {
        if let Some(&first) = rest.first() {
            if action_from_token(domain, vocab.token(first).unwrap_or_default()).is_some() {
                rest = &rest[1..];
            }
        }
    }
    (vocab.decode(belief), vocab.decode(rest))
}

/// Decodes belief, API and response for turn `t` of `dialogue`.
#[allow(clippy::too_many_arguments)]
pub fn decode_turn(
    params: &Parameters,
    cfg: &ModelConfig,
    ser: &SerializerConfig,
    vocab: &Vocab,
    intents: &IntentVocab,
    dialogue: &Dialogue,
    t: usize,
    use_gt_action: bool,
) -> Result<TurnPrediction> {
    let prompt = context_prompt(dialogue, t, ser, vocab)?;
    let forcing = match (ser.features.add_action, use_gt_action) {
        (false, _) => ActionForcing::Off,
        (true, true) => ActionForcing::GroundTruth(dialogue.turns[t].action.action),
        (true, false) => ActionForcing::Predicted,
    };
    let gen = generate(
        params,
        cfg,
        &prompt,
        MAX_NEW_TOKENS,
        vocab,
        Some(dialogue.domain),
        forcing,
    )?;
    let api = predict_api(params, gen.tap_hidden.view(), dialogue.domain);
    let (belief_text, response) = split_generation(&gen, vocab, dialogue.domain);
    Ok(TurnPrediction {
        dialogue_id: dialogue.dialogue_id.clone(),
        turn: t,
        domain: dialogue.domain,
        belief_frames: parse_belief(&belief_text, ser, intents),
        belief_text,
        api,
        response,
        eob_found: gen.eob_index.is_some(),
        finished: gen.finished,
    })
}
