use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    validate, ApiAction, AttributeLabel, BeliefFrame, Dialogue, Domain, DomainManifest, Turn,
    VisualObject,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialogue {
    dialogue_id: String,
    domain: Domain,
    turns: Vec<RawTurn>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    user: String,
    system: String,
    action: RawAction,
    visual: Vec<RawVisual>,
    belief: Vec<RawFrame>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    name: String,
    attributes: RawAttributes,
}

/// Attribute names, or (fashion only) an explicit 0/1 vector.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawAttributes {
    Names(Vec<String>),
    Flags(Vec<u8>),
}

#[derive(Serialize, Deserialize)]
struct RawVisual {
    id: String,
    pos: String,
    color: Vec<String>,
    class_name: String,
    decor_style: Vec<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    intent: String,
    slots: Vec<(String, String)>,
}

/// Loads a JSONL corpus using the builtin manifest for `domain`.
pub fn load_corpus(path: impl AsRef<Path>, domain: Domain) -> Result<Vec<Dialogue>> {
    load_corpus_with(path, &DomainManifest::builtin(domain))
}

/// Loads a JSONL corpus whose domain is read from its first dialogue.
pub fn load_corpus_any(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    #[derive(Deserialize)]
    struct DomainOnly {
        domain: Domain,
    }
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let Some((i, first)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Ok(Vec::new());
    };
    let de = &mut serde_json::Deserializer::from_str(first);
    let probe: DomainOnly = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
        line: i + 1,
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    parse_jsonl(&text, &DomainManifest::builtin(probe.domain))
}

pub fn load_corpus_with(path: impl AsRef<Path>, manifest: &DomainManifest) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, manifest)
}

pub(crate) fn parse_jsonl(text: &str, manifest: &DomainManifest) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let raw: RawDialogue = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            line: line_no,
            field: e.path().to_string(),
            message: e.into_inner().to_string(),
        })?;
        let dialogue = from_raw(raw, manifest, line_no)?;
        if let Some(v) = validate(std::slice::from_ref(&dialogue)).into_iter().next() {
            return Err(Error::Invariant {
                line: line_no,
                dialogue_id: v.dialogue_id,
                turn: v.turn,
                field: v.field,
                message: v.message,
            });
        }
        out.push(dialogue);
    }
    Ok(out)
}

fn from_raw(raw: RawDialogue, manifest: &DomainManifest, line: usize) -> Result<Dialogue> {
    let domain = manifest.domain;
    if raw.domain != domain {
        return Err(Error::Schema {
            line,
            field: "domain".into(),
            message: format!("expected `{domain}`, found `{}`", raw.domain),
        });
    }
    let mut turns = Vec::with_capacity(raw.turns.len());
    for (t, rt) in raw.turns.into_iter().enumerate() {
        let schema = |field: String, message: String| Error::Schema {
            line,
            field,
            message,
        };
        let invariant = |field: &str, message: String| Error::Invariant {
            line,
            dialogue_id: raw.dialogue_id.clone(),
            turn: Some(t),
            field: field.to_string(),
            message,
        };
        let action = manifest.action_index(&rt.action.name).ok_or_else(|| {
            schema(
                format!("turns[{t}].action.name"),
                format!("unknown {domain} action `{}`", rt.action.name),
            )
        })?;
        let attributes = match (domain, rt.action.attributes) {
            (Domain::Furniture, RawAttributes::Names(names)) => {
                if names.len() != 1 {
                    return Err(invariant(
                        "action.attributes",
                        format!("furniture needs exactly one attribute, found {}", names.len()),
                    ));
                }
                let idx = manifest.attribute_index(&names[0]).ok_or_else(|| {
                    schema(
                        format!("turns[{t}].action.attributes[0]"),
                        format!("unknown furniture attribute `{}`", names[0]),
                    )
                })?;
                AttributeLabel::Single(idx)
            }
            (Domain::Furniture, RawAttributes::Flags(_)) => {
                return Err(invariant(
                    "action.attributes",
                    "furniture attributes must be a single attribute name".into(),
                ))
            }
            (Domain::Fashion, RawAttributes::Names(names)) => {
                let mut flags = vec![false; manifest.attributes.len()];
                for (k, name) in names.iter().enumerate() {
                    let idx = manifest.attribute_index(name).ok_or_else(|| {
                        schema(
                            format!("turns[{t}].action.attributes[{k}]"),
                            format!("unknown fashion attribute `{name}`"),
                        )
                    })?;
                    flags[idx] = true;
                }
                AttributeLabel::Multi(flags)
            }
            (Domain::Fashion, RawAttributes::Flags(bits)) => {
                if let Some(b) = bits.iter().find(|&&b| b > 1) {
                    return Err(invariant(
                        "action.attributes",
                        format!("attribute flag {b} is not 0 or 1"),
                    ));
                }
                // Length is checked by validate(), which names the turn.
                AttributeLabel::Multi(bits.into_iter().map(|b| b == 1).collect())
            }
        };
        turns.push(Turn {
            user_utterance: rt.user,
            system_response: rt.system,
            action: ApiAction { action, attributes },
            visual: rt
                .visual
                .into_iter()
                .map(|v| VisualObject {
                    object_id: v.id,
                    position: v.pos,
                    colors: v.color,
                    class_name: v.class_name,
                    decor_styles: v.decor_style,
                    extra: v.extra,
                })
                .collect(),
            belief: rt
                .belief
                .into_iter()
                .map(|f| BeliefFrame {
                    intent: f.intent,
                    slots: f.slots,
                })
                .collect(),
        });
    }
    Ok(Dialogue {
        dialogue_id: raw.dialogue_id,
        domain,
        turns,
    })
}

fn to_raw(d: &Dialogue, manifest: &DomainManifest) -> Result<RawDialogue> {
    let name_of = |list: &[String], idx: usize, what: &str| {
        list.get(idx).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!("{what} index {idx} out of range in {}", d.dialogue_id))
        })
    };
    let mut turns = Vec::with_capacity(d.turns.len());
    for turn in &d.turns {
        let attributes = match &turn.action.attributes {
            AttributeLabel::Single(i) => vec![name_of(&manifest.attributes, *i, "attribute")?],
            AttributeLabel::Multi(flags) => flags
                .iter()
                .enumerate()
                .filter(|(_, &on)| on)
                .map(|(i, _)| name_of(&manifest.attributes, i, "attribute"))
                .collect::<Result<_>>()?,
        };
        turns.push(RawTurn {
            user: turn.user_utterance.clone(),
            system: turn.system_response.clone(),
            action: RawAction {
                name: name_of(&manifest.actions, turn.action.action, "action")?,
                attributes: RawAttributes::Names(attributes),
            },
            visual: turn
                .visual
                .iter()
                .map(|v| RawVisual {
                    id: v.object_id.clone(),
                    pos: v.position.clone(),
                    color: v.colors.clone(),
                    class_name: v.class_name.clone(),
                    decor_style: v.decor_styles.clone(),
                    extra: v.extra.clone(),
                })
                .collect(),
            belief: turn
                .belief
                .iter()
                .map(|f| RawFrame {
                    intent: f.intent.clone(),
                    slots: f.slots.clone(),
                })
                .collect(),
        });
    }
    Ok(RawDialogue {
        dialogue_id: d.dialogue_id.clone(),
        domain: d.domain,
        turns,
    })
}

/// Renders dialogues as JSONL text, one dialogue per line.
pub fn dialogues_to_jsonl(dialogues: &[Dialogue], manifest: &DomainManifest) -> Result<String> {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&serde_json::to_string(&to_raw(d, manifest)?)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_corpus(
    path: impl AsRef<Path>,
    dialogues: &[Dialogue],
    manifest: &DomainManifest,
) -> Result<()> {
    let path = path.as_ref();
    let text = dialogues_to_jsonl(dialogues, manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
