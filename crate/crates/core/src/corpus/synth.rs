//! Deterministic synthetic corpora.
//!
//! Every turn is drawn from a closed set of scenarios. A scenario fixes the
//! belief frames, the API action and attributes, and the response template,
//! so gold labels are recoverable exactly and responses are tied to actions.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ApiAction, AttributeLabel, BeliefFrame, Dialogue, Domain, DomainManifest, Turn, VisualObject};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SynthStyle {
    /// Actions and attributes follow from the user utterance and belief.
    #[default]
    Templated,
    /// The user utterance is ambiguous; the action is drawn at random and
    /// the response depends on it. Only the action says which response is right.
    ActionConditioned,
}

const FURNITURE_CLASSES: &[&str] = &["Sofas", "Chairs", "Tables", "Lamps", "Beds", "Shelves"];
const FURNITURE_COLORS: &[&str] = &["White", "Black", "Brown", "Grey", "Beige", "Blue"];
const FURNITURE_DECOR: &[&str] = &["Modern", "Rustic", "Traditional", "Industrial"];
const FURNITURE_INFO: &[&str] = &["dimensions", "price", "material", "color", "brand"];

const FASHION_CLASSES: &[&str] = &["dress", "shirt", "jacket", "skirt", "sweater"];
const FASHION_COLORS: &[&str] = &["red", "black", "white", "blue", "green"];
const FASHION_STYLES: &[&str] = &["casual", "formal", "sporty"];

const SIDE_POSITIONS: &[&str] = &["left", "right", "center"];

/// Turns per dialogue are uniform on these ranges: means 7.5 and 5.5.
fn turn_range(domain: Domain) -> (usize, usize) {
    match domain {
        Domain::Furniture => (5, 10),
        Domain::Fashion => (3, 8),
    }
}

struct Scene {
    objects: Vec<VisualObject>,
    focus: usize,
}

impl Scene {
    fn focus(&self) -> &VisualObject {
        &self.objects[self.focus]
    }
}

fn draw_scene(rng: &mut ChaCha8Rng, domain: Domain) -> Scene {
    let (classes, colors, styles) = match domain {
        Domain::Furniture => (FURNITURE_CLASSES, FURNITURE_COLORS, FURNITURE_DECOR),
        Domain::Fashion => (FASHION_CLASSES, FASHION_COLORS, FASHION_STYLES),
    };
    let n = rng.random_range(1..=2);
    let focus = rng.random_range(0..n);
    let mut sides: Vec<&str> = SIDE_POSITIONS.to_vec();
    let objects = (0..n)
        .map(|i| {
            let position = if i == focus {
                "focus".to_string()
            } else {
                let k = rng.random_range(0..sides.len());
                sides.remove(k).to_string()
            };
            VisualObject {
                object_id: format!("OBJECT_{i}"),
                position,
                colors: vec![pick(rng, colors)],
                class_name: pick(rng, classes),
                decor_styles: vec![pick(rng, styles)],
                extra: BTreeMap::new(),
            }
        })
        .collect();
    Scene { objects, focus }
}

fn pick(rng: &mut ChaCha8Rng, items: &[&str]) -> String {
    items.choose(rng).expect("non-empty template list").to_string()
}

/// A generated turn minus the visual scene.
struct Draft {
    user: String,
    system: String,
    action: &'static str,
    attributes: Vec<&'static str>,
    belief: Vec<BeliefFrame>,
}

fn furniture_turn(rng: &mut ChaCha8Rng, scene: &Scene, style: SynthStyle) -> Draft {
    let obj = scene.focus();
    let (id, class, color) = (obj.object_id.as_str(), obj.class_name.as_str(), obj.colors[0].as_str());
    let on_obj = |intent: &str| BeliefFrame::new(intent, &[("furniture-O", id)]);

    if style == SynthStyle::ActionConditioned {
        let belief = vec![on_obj("DA:REQUEST:GET:FURNITURE.info")];
        return if rng.random_bool(0.5) {
            Draft {
                user: "what can you tell me about it ?".into(),
                system: format!("the {class} is sturdy and well made ."),
                action: "SpecifyInfo",
                attributes: vec!["info"],
                belief,
            }
        } else {
            Draft {
                user: "what can you tell me about it ?".into(),
                system: "let me rotate it so you can see the back .".into(),
                action: "Rotate",
                attributes: vec!["none"],
                belief,
            }
        };
    }

    match rng.random_range(0..10) {
        0 => {
            let wanted = pick(rng, FURNITURE_CLASSES);
            let user = if rng.random_bool(0.5) {
                format!("show me some {wanted} please")
            } else {
                format!("do you have any {wanted} ?")
            };
            Draft {
                user,
                system: format!("here are some {wanted} you might like ."),
                action: "SearchFurniture",
                attributes: vec!["none"],
                belief: vec![BeliefFrame::new(
                    "DA:REQUEST:GET:FURNITURE",
                    &[("furniture-class_name", &wanted)],
                )],
            }
        }
        1 => Draft {
            user: "i like that one".into(),
            system: format!("good choice , that {color} {class} is popular ."),
            action: "FocusOnFurniture",
            attributes: vec!["none"],
            belief: vec![BeliefFrame::new(
                "DA:INFORM:PREFER:FURNITURE",
                &[("furniture-O", id), ("furniture-attentionOn", "that")],
            )],
        },
        2..=4 => {
            let info = FURNITURE_INFO.choose(rng).copied().unwrap();
            let ask = on_obj(&format!("DA:ASK:GET:FURNITURE.{info}"));
            let (user, belief) = if rng.random_bool(0.3) {
                (
                    format!("i like that one , what is its {info} ?"),
                    vec![
                        BeliefFrame::new(
                            "DA:INFORM:PREFER:FURNITURE",
                            &[("furniture-O", id), ("furniture-attentionOn", "that")],
                        ),
                        ask,
                    ],
                )
            } else {
                (format!("what is the {info} of it ?"), vec![ask])
            };
            Draft {
                user,
                system: format!("this {color} {class} has a great {info} ."),
                action: "SpecifyInfo",
                attributes: vec![info],
                belief,
            }
        }
        5 => Draft {
            user: "can i see the back of it ?".into(),
            system: format!("here is the back of the {class} ."),
            action: "Rotate",
            attributes: vec!["none"],
            belief: vec![on_obj("DA:REQUEST:ROTATE:FURNITURE")],
        },
        6 => Draft {
            user: "show me the next ones".into(),
            system: "here are the next items .".into(),
            action: "NavigateCarousel",
            attributes: vec!["none"],
            belief: vec![BeliefFrame::new("DA:REQUEST:GET:CAROUSEL.next", &[])],
        },
        7 | 8 => Draft {
            user: "add it to my cart please".into(),
            system: format!("the {class} is now in your cart ."),
            action: "AddToCart",
            attributes: vec!["none"],
            belief: vec![on_obj("DA:REQUEST:ADD_TO_CART:FURNITURE")],
        },
        _ => Draft {
            user: "thanks that is all".into(),
            system: "you are welcome , have a nice day .".into(),
            action: "None",
            attributes: vec!["none"],
            belief: vec![],
        },
    }
}

fn fashion_turn(rng: &mut ChaCha8Rng, scene: &Scene, style: SynthStyle) -> Draft {
    const INFO: &[&str] = &["price", "size", "brand", "pattern", "material", "availableSizes"];
    let obj = scene.focus();
    let (id, class, color) = (obj.object_id.as_str(), obj.class_name.as_str(), obj.colors[0].as_str());
    let on_obj = |intent: &str| BeliefFrame::new(intent, &[("fashion-O", id)]);

    if style == SynthStyle::ActionConditioned {
        let belief = vec![on_obj("DA:REQUEST:GET:CLOTHING.info")];
        return if rng.random_bool(0.5) {
            Draft {
                user: "what about this one ?".into(),
                system: format!("this {class} is made of soft fabric ."),
                action: "SpecifyInfo",
                attributes: vec!["material"],
                belief,
            }
        } else {
            Draft {
                user: "what about this one ?".into(),
                system: "i found a similar item in our catalog .".into(),
                action: "SearchDatabase",
                attributes: vec![],
                belief,
            }
        };
    }

    match rng.random_range(0..10) {
        0 | 1 => {
            let want_color = pick(rng, FASHION_COLORS);
            let want_class = pick(rng, FASHION_CLASSES);
            Draft {
                user: format!("do you have any {want_color} {want_class} ?"),
                system: format!("here is a {want_color} {want_class} from our catalog ."),
                action: "SearchDatabase",
                attributes: vec!["color"],
                belief: vec![BeliefFrame::new(
                    "DA:REQUEST:GET:CLOTHING",
                    &[("fashion-color", &want_color), ("fashion-class_name", &want_class)],
                )],
            }
        }
        2 => Draft {
            user: "show me the one i saw before".into(),
            system: "here is the item you looked at earlier .".into(),
            action: "SearchMemory",
            attributes: vec![],
            belief: vec![BeliefFrame::new("DA:REQUEST:GET:MEMORY", &[])],
        },
        3..=6 => {
            let first = INFO.choose(rng).copied().unwrap();
            if rng.random_bool(0.4) {
                let second = loop {
                    let s = INFO.choose(rng).copied().unwrap();
                    if s != first {
                        break s;
                    }
                };
                Draft {
                    user: format!("what is the {first} and {second} ?"),
                    system: format!("the {first} and {second} of this {class} are on the tag ."),
                    action: "SpecifyInfo",
                    attributes: vec![first, second],
                    belief: vec![
                        on_obj(&format!("DA:ASK:GET:CLOTHING.{first}")),
                        on_obj(&format!("DA:ASK:GET:CLOTHING.{second}")),
                    ],
                }
            } else {
                Draft {
                    user: format!("what is the {first} ?"),
                    system: format!("the {first} of this {class} is on the tag ."),
                    action: "SpecifyInfo",
                    attributes: vec![first],
                    belief: vec![on_obj(&format!("DA:ASK:GET:CLOTHING.{first}"))],
                }
            }
        }
        7 | 8 => Draft {
            user: "i will take it".into(),
            system: format!("the {color} {class} is in your cart ."),
            action: "AddToCart",
            attributes: vec![],
            belief: vec![on_obj("DA:REQUEST:ADD_TO_CART:CLOTHING")],
        },
        _ => Draft {
            user: "thanks that is all".into(),
            system: "you are welcome , have a nice day .".into(),
            action: "None",
            attributes: vec![],
            belief: vec![],
        },
    }
}

fn to_action(domain: Domain, manifest: &DomainManifest, draft: &Draft) -> ApiAction {
    let action = manifest
        .action_index(draft.action)
        .expect("template action is in the manifest");
    let index = |name: &str| {
        manifest
            .attribute_index(name)
            .expect("template attribute is in the manifest")
    };
    let attributes = if domain.multi_label_attributes() {
        let mut flags = vec![false; domain.n_attributes()];
        for name in &draft.attributes {
            flags[index(name)] = true;
        }
        AttributeLabel::Multi(flags)
    } else {
        AttributeLabel::Single(index(draft.attributes[0]))
    };
    ApiAction { action, attributes }
}

/// Templated synthetic corpus; a pure function of its arguments.
pub fn synth_corpus(seed: u64, n_dialogues: usize, domain: Domain) -> Result<Vec<Dialogue>> {
    synth_corpus_with(seed, n_dialogues, domain, SynthStyle::Templated)
}

pub fn synth_corpus_with(
    seed: u64,
    n_dialogues: usize,
    domain: Domain,
    style: SynthStyle,
) -> Result<Vec<Dialogue>> {
    if n_dialogues == 0 {
        return Err(Error::InvalidArgument("n_dialogues must be at least 1".into()));
    }
    let salt = match (domain, style) {
        (Domain::Furniture, SynthStyle::Templated) => 0x0F0F_0001,
        (Domain::Fashion, SynthStyle::Templated) => 0x0F0F_0002,
        (Domain::Furniture, SynthStyle::ActionConditioned) => 0x0F0F_0003,
        (Domain::Fashion, SynthStyle::ActionConditioned) => 0x0F0F_0004,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let manifest = DomainManifest::builtin(domain);
    let (lo, hi) = turn_range(domain);
    let tag = match style {
        SynthStyle::Templated => "",
        SynthStyle::ActionConditioned => "ac-",
    };

    let dialogues = (0..n_dialogues)
        .map(|i| {
            let n_turns = rng.random_range(lo..=hi);
            let turns = (0..n_turns)
                .map(|_| {
                    let scene = draw_scene(&mut rng, domain);
                    let draft = match domain {
                        Domain::Furniture => furniture_turn(&mut rng, &scene, style),
                        Domain::Fashion => fashion_turn(&mut rng, &scene, style),
                    };
                    Turn {
                        action: to_action(domain, &manifest, &draft),
                        user_utterance: draft.user,
                        system_response: draft.system,
                        visual: scene.objects,
                        belief: draft.belief,
                    }
                })
                .collect();
            Dialogue {
                dialogue_id: format!("{tag}{domain}-{seed}-{i:04}"),
                domain,
                turns,
            }
        })
        .collect();
    Ok(dialogues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{dialogues_to_jsonl, mean_turns, validate};

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_corpus(7, 10, Domain::Furniture).unwrap();
        let b = synth_corpus(7, 10, Domain::Furniture).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_differs() {
        let m = DomainManifest::builtin(Domain::Furniture);
        let a = dialogues_to_jsonl(&synth_corpus(7, 10, Domain::Furniture).unwrap(), &m).unwrap();
        let b = dialogues_to_jsonl(&synth_corpus(8, 10, Domain::Furniture).unwrap(), &m).unwrap();
        assert_ne!(a, b);
        let utterances = |s: &str| -> Vec<String> {
            s.lines()
                .flat_map(|l| {
                    let v: serde_json::Value = serde_json::from_str(l).unwrap();
                    v["turns"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|t| t["user"].as_str().unwrap().to_string())
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        assert_ne!(utterances(&a), utterances(&b));
    }

    #[test]
    fn mean_turns_near_reported_statistics() {
        let fashion = synth_corpus(7, 200, Domain::Fashion).unwrap();
        let m = mean_turns(&fashion);
        assert!((4.4..=6.4).contains(&m), "fashion mean {m}");
        let furniture = synth_corpus(7, 200, Domain::Furniture).unwrap();
        let m = mean_turns(&furniture);
        assert!((6.6..=8.6).contains(&m), "furniture mean {m}");
    }

    #[test]
    fn zero_dialogues_is_rejected() {
        assert!(synth_corpus(1, 0, Domain::Fashion).is_err());
    }

    #[test]
    fn action_conditioned_corpus_is_valid_and_mixed() {
        for domain in Domain::ALL {
            let c = synth_corpus_with(5, 20, domain, SynthStyle::ActionConditioned).unwrap();
            assert!(validate(&c).is_empty());
            let actions: std::collections::BTreeSet<usize> =
                c.iter().flat_map(|d| d.turns.iter().map(|t| t.action.action)).collect();
            assert_eq!(actions.len(), 2);
        }
    }
}
