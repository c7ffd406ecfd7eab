use std::collections::HashSet;

use serde::Serialize;

use super::{AttributeLabel, Dialogue, Domain};
use crate::serializer::is_special_token;

/// One invariant violation, addressed by dialogue, turn and field path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub dialogue_id: String,
    pub turn: Option<usize>,
    pub field: String,
    pub message: String,
}

/// Checks that an intent has the form `DA(:SEGMENT)+(.SUFFIX)?`.
pub fn check_intent(intent: &str) -> Result<(), String> {
    let (head, suffix) = match intent.split_once('.') {
        Some((h, s)) => (h, Some(s)),
        None => (intent, None),
    };
    let mut parts = head.split(':');
    if parts.next() != Some("DA") {
        return Err(format!("intent `{intent}` must start with `DA`"));
    }
    let segments: Vec<&str> = parts.collect();
    if segments.is_empty() {
        return Err(format!("intent `{intent}` has no segments"));
    }
    let bad_piece = |p: &str| {
        p.is_empty()
            || p.chars()
                .any(|c| c.is_whitespace() || matches!(c, '[' | ']' | ',' | '=' | ':' | '.'))
    };
    if segments.iter().any(|s| bad_piece(s)) {
        return Err(format!("intent `{intent}` has an empty or malformed segment"));
    }
    if let Some(s) = suffix {
        if bad_piece(s) {
            return Err(format!("intent `{intent}` has a malformed suffix"));
        }
    }
    Ok(())
}

fn text_problem(s: &str) -> Option<String> {
    if s.trim().is_empty() {
        Some("must be non-empty".into())
    } else if s.contains('\n') || s.contains('\r') {
        Some("must not contain newlines".into())
    } else if let Some(tok) = s.split_whitespace().find(|t| is_special_token(t)) {
        Some(format!("contains reserved token `{tok}`"))
    } else {
        None
    }
}

fn slot_problem(s: &str, is_key: bool) -> Option<String> {
    if let Some(p) = text_problem(s) {
        return Some(p);
    }
    if s.chars().any(|c| matches!(c, '=' | ',' | '[' | ']')) {
        return Some("must not contain `=`, `,`, `[` or `]`".into());
    }
    if is_key && s.chars().any(char::is_whitespace) {
        return Some("slot keys must not contain whitespace".into());
    }
    if s.split_whitespace().collect::<Vec<_>>().join(" ") != s {
        return Some("must be single-space normalized".into());
    }
    None
}

/// Returns every invariant violation found; an empty report means the corpus is valid.
pub fn validate(dialogues: &[Dialogue]) -> Vec<Violation> {
    let mut out = Vec::new();
    for d in dialogues {
        let mut push = |turn: Option<usize>, field: String, message: String| {
            out.push(Violation {
                dialogue_id: d.dialogue_id.clone(),
                turn,
                field,
                message,
            })
        };
        if d.dialogue_id.trim().is_empty() {
            push(None, "dialogue_id".into(), "must be non-empty".into());
        }
        if d.turns.is_empty() {
            push(None, "turns".into(), "dialogue has no turns".into());
        }
        for (t, turn) in d.turns.iter().enumerate() {
            let at = Some(t);
            if let Some(p) = text_problem(&turn.user_utterance) {
                push(at, "user".into(), p);
            }
            if let Some(p) = text_problem(&turn.system_response) {
                push(at, "system".into(), p);
            }
            check_action(d.domain, turn, &mut |f, m| push(at, f, m));

            let mut seen = HashSet::new();
            for (i, obj) in turn.visual.iter().enumerate() {
                if !seen.insert(obj.object_id.as_str()) {
                    push(
                        at,
                        format!("visual[{i}].id"),
                        format!("duplicate object id `{}`", obj.object_id),
                    );
                }
                let named = [
                    ("id", &obj.object_id),
                    ("pos", &obj.position),
                    ("class_name", &obj.class_name),
                ];
                for (name, value) in named {
                    if let Some(p) = text_problem(value) {
                        push(at, format!("visual[{i}].{name}"), p);
                    }
                }
                if obj.object_id.contains(char::is_whitespace) {
                    push(at, format!("visual[{i}].id"), "must not contain whitespace".into());
                }
                let lists = [("color", &obj.colors), ("decor_style", &obj.decor_styles)]
                    .into_iter()
                    .map(|(n, l)| (n.to_string(), l))
                    .chain(obj.extra.iter().map(|(k, l)| (k.clone(), l)));
                for (name, list) in lists {
                    if let Some(p) = text_problem(&name) {
                        push(at, format!("visual[{i}].<key>"), p);
                    }
                    for (j, value) in list.iter().enumerate() {
                        if let Some(p) = text_problem(value) {
                            push(at, format!("visual[{i}].{name}[{j}]"), p);
                        }
                    }
                }
            }

            for (f, frame) in turn.belief.iter().enumerate() {
                if let Err(m) = check_intent(&frame.intent) {
                    push(at, format!("belief[{f}].intent"), m);
                }
                for (s, (k, v)) in frame.slots.iter().enumerate() {
                    if let Some(p) = slot_problem(k, true) {
                        push(at, format!("belief[{f}].slots[{s}].key"), p);
                    }
                    if let Some(p) = slot_problem(v, false) {
                        push(at, format!("belief[{f}].slots[{s}].value"), p);
                    }
                }
            }
        }
    }
    out
}

fn check_action(domain: Domain, turn: &super::Turn, push: &mut dyn FnMut(String, String)) {
    let action = &turn.action;
    if action.action >= domain.n_actions() {
        push(
            "action.name".into(),
            format!("action index {} out of range for {domain}", action.action),
        );
    }
    match (&action.attributes, domain.multi_label_attributes()) {
        (AttributeLabel::Single(i), false) => {
            if *i >= domain.n_attributes() {
                push(
                    "action.attributes".into(),
                    format!("attribute index {i} out of range for {domain}"),
                );
            }
        }
        (AttributeLabel::Multi(flags), true) => {
            if flags.len() != domain.n_attributes() {
                push(
                    "action.attributes".into(),
                    format!(
                        "{domain} attribute vector must have length {}, found {}",
                        domain.n_attributes(),
                        flags.len()
                    ),
                );
            }
        }
        _ => push(
            "action.attributes".into(),
            format!("attribute label kind does not match {domain}"),
        ),
    }
}
