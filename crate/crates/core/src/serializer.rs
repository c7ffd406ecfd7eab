//! Flat input layout of a dialogue turn.
//!
//! A training sequence for turn `t` with a history window of `T` turns is
//!
//! ```text
//! [<FURN>|<FASH>]
//! { System : [<ACT_i>] previous-response  User : utterance  <SOM> objects <EOM> }  x T
//! => Belief State : frames <EOB> [<ACT_i>] response <EOS>
//! ```
//!
//! Each token carries a segment id (system, user, belief, multimodal) and a
//! loss-mask bit. Under history masking every token before the current
//! turn's `User :` is excluded from the language-modeling loss.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{check_intent, BeliefFrame, Dialogue, Domain, VisualObject};
use crate::error::{Error, Result};
use crate::tokenizer::{split_tokens, Vocab};

pub const UNK: &str = "<UNK>";
pub const FURN: &str = "<FURN>";
pub const FASH: &str = "<FASH>";
pub const SOM: &str = "<SOM>";
pub const EOM: &str = "<EOM>";
pub const EOB: &str = "<EOB>";
pub const EOS: &str = "<EOS>";
pub const SEG_SYS: &str = "<SEG_SYS>";
pub const SEG_USER: &str = "<SEG_USER>";
pub const SEG_BEL: &str = "<SEG_BEL>";
pub const SEG_MUL: &str = "<SEG_MUL>";

pub const SYSTEM_PREFIX: &str = "System :";
pub const USER_PREFIX: &str = "User :";
pub const BELIEF_PROMPT: &str = "=> Belief State :";

/// Action tokens are numbered globally: furniture 0..7, fashion 7..12.
pub const N_ACTION_TOKENS: usize = 12;

/// Special tokens in declaration order. Token ids follow this order.
pub fn special_tokens() -> Vec<String> {
    let fixed = [
        UNK, FURN, FASH, SOM, EOM, EOB, EOS, SEG_SYS, SEG_USER, SEG_BEL, SEG_MUL,
    ];
    fixed
        .iter()
        .map(|s| s.to_string())
        .chain((0..N_ACTION_TOKENS).map(action_token_by_index))
        .collect()
}

fn action_token_by_index(i: usize) -> String {
    format!("<ACT_{i}>")
}

/// The action token for a domain-local action class.
pub fn action_token(domain: Domain, action: usize) -> String {
    action_token_by_index(domain.action_offset() + action)
}

/// Maps an action token back to its domain-local class, if it belongs to `domain`.
pub fn action_from_token(domain: Domain, token: &str) -> Option<usize> {
    let idx: usize = token.strip_prefix("<ACT_")?.strip_suffix('>')?.parse().ok()?;
    let local = idx.checked_sub(domain.action_offset())?;
    (local < domain.n_actions()).then_some(local)
}

pub fn is_special_token(token: &str) -> bool {
    match token {
        UNK | FURN | FASH | SOM | EOM | EOB | EOS | SEG_SYS | SEG_USER | SEG_BEL | SEG_MUL => true,
        _ => token
            .strip_prefix("<ACT_")
            .and_then(|r| r.strip_suffix('>'))
            .and_then(|n| n.parse::<usize>().ok())
            .is_some_and(|n| n < N_ACTION_TOKENS && token == action_token_by_index(n)),
    }
}

pub fn domain_token(domain: Domain) -> &'static str {
    match domain {
        Domain::Furniture => FURN,
        Domain::Fashion => FASH,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Segment {
    Sys = 0,
    User = 1,
    Bel = 2,
    Mul = 3,
}

impl Segment {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Input-representation and training-strategy switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Features {
    pub split_intent: bool,
    pub segment_embedding: bool,
    pub add_action: bool,
    pub mask_history_loss: bool,
    pub multi_domain: bool,
}

impl Default for Features {
    fn default() -> Self {
        Self {
            split_intent: true,
            segment_embedding: true,
            add_action: true,
            mask_history_loss: true,
            multi_domain: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SerializerConfig {
    pub history_turns: usize,
    pub features: Features,
    /// Longest sequence callers accept; longer examples are reported.
    pub max_tokens: usize,
}

impl Default for SerializerConfig {
    fn default() -> Self {
        Self {
            history_turns: 2,
            features: Features::default(),
            max_tokens: 256,
        }
    }
}

impl SerializerConfig {
    pub fn check(&self) -> Result<()> {
        if self.history_turns == 0 {
            return Err(Error::Config {
                field: "serializer.history_turns".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Renders visual objects as `ID : pos P color [ .. ] class_name C decor_style [ .. ]`.
pub fn flatten_visual(objects: &[VisualObject]) -> String {
    let list = |items: &[String]| {
        if items.is_empty() {
            "[ ]".to_string()
        } else {
            format!("[ {} ]", items.join(" "))
        }
    };
    objects
        .iter()
        .map(|o| {
            let mut s = format!(
                "{} : pos {} color {} class_name {} decor_style {}",
                o.object_id,
                o.position,
                list(&o.colors),
                o.class_name,
                list(&o.decor_styles)
            );
            for (key, values) in &o.extra {
                s.push_str(&format!(" {key} {}", list(values)));
            }
            s
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// `DA:ASK:GET:FURNITURE.dimensions` becomes `intent ask get furniture dimensions`.
pub fn split_intent(intent: &str) -> Result<String> {
    let rest = intent
        .strip_prefix("DA")
        .ok_or_else(|| Error::InvalidArgument(format!("intent `{intent}` must start with DA")))?;
    if !rest.is_empty() {
        check_intent(intent).map_err(Error::InvalidArgument)?;
    }
    let mut out = String::from("intent");
    for piece in rest.split([':', '.']).filter(|p| !p.is_empty()) {
        out.push(' ');
        out.push_str(&piece.to_lowercase());
    }
    Ok(out)
}

/// Renders frames as `INTENT [ k1 = v1, k2 = v2 ]`, space-joined.
pub fn format_belief(frames: &[BeliefFrame], cfg: &SerializerConfig) -> String {
    frames
        .iter()
        .map(|f| {
            let intent = if cfg.features.split_intent {
                split_intent(&f.intent).unwrap_or_else(|_| f.intent.clone())
            } else {
                f.intent.clone()
            };
            let slots = f
                .slots
                .iter()
                .map(|(k, v)| format!("{k} = {v}"))
                .collect::<Vec<_>>()
                .join(", ");
            if slots.is_empty() {
                format!("{intent} [ ]")
            } else {
                format!("{intent} [ {slots} ]")
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps split-form intents back to their canonical colon/dot spelling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IntentVocab {
    intents: Vec<String>,
    by_split: HashMap<String, String>,
}

impl IntentVocab {
    pub fn from_intents<I, S>(intents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = IntentVocab::default();
        for intent in intents {
            let intent = intent.into();
            if vocab.intents.contains(&intent) {
                continue;
            }
            if let Ok(split) = split_intent(&intent) {
                vocab.by_split.entry(split).or_insert_with(|| intent.clone());
            }
            vocab.intents.push(intent);
        }
        vocab
    }

    pub fn from_dialogues<'a>(corpora: impl IntoIterator<Item = &'a [Dialogue]>) -> Self {
        Self::from_intents(corpora.into_iter().flat_map(|c| {
            c.iter()
                .flat_map(|d| d.turns.iter())
                .flat_map(|t| t.belief.iter())
                .map(|f| f.intent.clone())
        }))
    }

    pub fn intents(&self) -> &[String] {
        &self.intents
    }

    /// Canonical intent for a split-form token span.
    pub fn canonical(&self, split_form: &str) -> Option<&str> {
        self.by_split.get(split_form).map(String::as_str)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let intents: Vec<String> = serde_json::from_str(&text)?;
        Ok(Self::from_intents(intents))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.intents)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parses belief text back into frames.
///
/// Never fails: unparseable trailing text is discarded, malformed frames are
/// skipped and malformed slot pairs are dropped one by one.
pub fn parse_belief(text: &str, cfg: &SerializerConfig, intents: &IntentVocab) -> Vec<BeliefFrame> {
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut frames = Vec::new();
    let mut rest = text.as_str();
    while let Some(open) = rest.find('[') {
        let Some(close_rel) = rest[open..].find(']') else {
            break;
        };
        let close = open + close_rel;
        let head = rest[..open].trim();
        let body = rest[open + 1..close].trim();
        rest = &rest[close + 1..];

        let Some(intent) = parse_intent(head, cfg, intents) else {
            continue;
        };
        let slots = body
            .split(',')
            .filter_map(|pair| {
                let (k, v) = pair.split_once('=')?;
                let (k, v) = (k.trim(), v.trim());
                let ok = !k.is_empty()
                    && !v.is_empty()
                    && !k.contains(char::is_whitespace)
                    && !v.contains(['[', ']', '=']);
                ok.then(|| (k.to_string(), v.to_string()))
            })
            .collect();
        frames.push(BeliefFrame { intent, slots });
    }
    frames
}

fn parse_intent(head: &str, cfg: &SerializerConfig, intents: &IntentVocab) -> Option<String> {
    if cfg.features.split_intent {
        let words: Vec<&str> = head.split(' ').filter(|w| !w.is_empty()).collect();
        let start = words.iter().rposition(|w| *w == "intent")?;
        let span = words[start..].join(" ");
        Some(
            intents
                .canonical(&span)
                .map(str::to_string)
                .unwrap_or(span),
        )
    } else {
        let last = head.rsplit(' ').next()?;
        check_intent(last).ok().map(|_| last.to_string())
    }
}

/// A serialized turn as token strings, before vocabulary lookup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedExample {
    pub tokens: Vec<String>,
    pub segments: Vec<Segment>,
    pub loss_mask: Vec<bool>,
    pub eob_index: usize,
    /// Number of tokens up to and including the belief prompt.
    pub prompt_len: usize,
}

impl RenderedExample {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

struct Builder {
    tokens: Vec<String>,
    segments: Vec<Segment>,
}

impl Builder {
    fn push(&mut self, text: &str, segment: Segment) {
        for tok in split_tokens(text) {
            self.tokens.push(tok.to_string());
            self.segments.push(segment);
        }
    }
}

/// Renders the full training sequence for `turn_index`.
pub fn render_example(
    dialogue: &Dialogue,
    turn_index: usize,
    cfg: &SerializerConfig,
) -> Result<RenderedExample> {
    if turn_index >= dialogue.turns.len() {
        return Err(Error::InvalidArgument(format!(
            "turn {turn_index} out of range for dialogue {} with {} turns",
            dialogue.dialogue_id,
            dialogue.turns.len()
        )));
    }
    let features = &cfg.features;
    let domain = dialogue.domain;
    let mut b = Builder {
        tokens: Vec::new(),
        segments: Vec::new(),
    };
    if features.multi_domain {
        b.push(domain_token(domain), Segment::Sys);
    }
    let start = (turn_index + 1).saturating_sub(cfg.history_turns);
    let mut boundary = 0;
    for k in start..=turn_index {
        if k > 0 {
            let prev = &dialogue.turns[k - 1];
            b.push(SYSTEM_PREFIX, Segment::Sys);
            if features.add_action {
                b.push(&action_token(domain, prev.action.action), Segment::Sys);
            }
            b.push(&prev.system_response, Segment::Sys);
        }
        let turn = &dialogue.turns[k];
        if k == turn_index {
            boundary = b.tokens.len();
        }
        b.push(USER_PREFIX, Segment::User);
        b.push(&turn.user_utterance, Segment::User);
        b.push(SOM, Segment::Mul);
        b.push(&flatten_visual(&turn.visual), Segment::Mul);
        b.push(EOM, Segment::Mul);
    }
    let turn = &dialogue.turns[turn_index];
    b.push(BELIEF_PROMPT, Segment::Bel);
    let prompt_len = b.tokens.len();
    b.push(&format_belief(&turn.belief, cfg), Segment::Bel);
    let eob_index = b.tokens.len();
    b.push(EOB, Segment::Bel);
    if features.add_action {
        b.push(&action_token(domain, turn.action.action), Segment::Bel);
    }
    b.push(&turn.system_response, Segment::Bel);
    b.push(EOS, Segment::Bel);

    let n = b.tokens.len();
    let loss_mask = if features.mask_history_loss {
        (0..n).map(|i| i >= boundary).collect()
    } else {
        vec![true; n]
    };
    Ok(RenderedExample {
        tokens: b.tokens,
        segments: b.segments,
        loss_mask,
        eob_index,
        prompt_len,
    })
}

/// Gold attribute target of one turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttributeTarget {
    Class(usize),
    Flags(Vec<bool>),
}

/// The unit of training: ids, segments, loss mask, `<EOB>` position and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SerializedExample {
    pub tokens: Vec<usize>,
    pub segment_ids: Vec<Segment>,
    pub loss_mask: Vec<bool>,
    pub eob_index: usize,
    pub prompt_len: usize,
    pub action_label: usize,
    pub attribute_label: AttributeTarget,
    pub domain: Domain,
}

impl SerializedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn build_example(
    dialogue: &Dialogue,
    turn_index: usize,
    cfg: &SerializerConfig,
    vocab: &Vocab,
) -> Result<SerializedExample> {
    let rendered = render_example(dialogue, turn_index, cfg)?;
    if rendered.len() > cfg.max_tokens {
        return Err(Error::SequenceTooLong {
            len: rendered.len(),
            max: cfg.max_tokens,
        });
    }
    let gold = &dialogue.turns[turn_index].action;
    Ok(SerializedExample {
        tokens: rendered.tokens.iter().map(|t| vocab.id(t)).collect(),
        segment_ids: rendered.segments,
        loss_mask: rendered.loss_mask,
        eob_index: rendered.eob_index,
        prompt_len: rendered.prompt_len,
        action_label: gold.action,
        attribute_label: match &gold.attributes {
            crate::corpus::AttributeLabel::Single(i) => AttributeTarget::Class(*i),
            crate::corpus::AttributeLabel::Multi(f) => AttributeTarget::Flags(f.clone()),
        },
        domain: dialogue.domain,
    })
}

/// Inference-time input: the sequence up to and including the belief prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: Vec<usize>,
    pub segment_ids: Vec<Segment>,
}

pub fn context_prompt(
    dialogue: &Dialogue,
    turn_index: usize,
    cfg: &SerializerConfig,
    vocab: &Vocab,
) -> Result<Prompt> {
    let rendered = render_example(dialogue, turn_index, cfg)?;
    let n = rendered.prompt_len;
    if n > cfg.max_tokens {
        return Err(Error::SequenceTooLong {
            len: n,
            max: cfg.max_tokens,
        });
    }
    Ok(Prompt {
        tokens: rendered.tokens[..n].iter().map(|t| vocab.id(t)).collect(),
        segment_ids: rendered.segments[..n].to_vec(),
    })
}
