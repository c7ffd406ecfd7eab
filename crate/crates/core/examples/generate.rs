//! Decodes one turn greedily: belief state, API prediction, then the
//! response, with the gold action forced after `<EOB>` and with the
//! predicted one.
//!
//! ```bash
//! cargo run --release --example train_tiny -- runs/tiny
//! cargo run --release --example generate -- runs/tiny/ckpt-35.bin
//! ```

use std::path::PathBuf;

use todmt::artifacts::TrainedModel;
use todmt::corpus::{synth_corpus, AttributeLabel, Domain, DomainManifest};
use todmt::decoder::decode_turn;

fn main() -> todmt::Result<()> {
    let ckpt = PathBuf::from(
        std::env::args()
            .nth(1)
            .expect("usage: generate CHECKPOINT (see train_tiny)"),
    );
    let model = TrainedModel::load(&ckpt)?;
    let dialogue = &synth_corpus(7, 32, Domain::Fashion)?[0];
    let manifest = DomainManifest::builtin(dialogue.domain);

    for (t, turn) in dialogue.turns.iter().enumerate() {
        println!("turn {t}: {}", turn.user_utterance);
        for gold_action in [true, false] {
            let p = decode_turn(
                &model.params,
                &model.model,
                &model.serializer,
                &model.vocab,
                &model.intents,
                dialogue,
                t,
                gold_action,
            )?;
            let attrs = match &p.api.attributes {
                AttributeLabel::Single(c) => manifest.attributes[*c].clone(),
                AttributeLabel::Multi(flags) => manifest
                    .attributes
                    .iter()
                    .zip(flags)
                    .filter(|(_, on)| **on)
                    .map(|(a, _)| a.as_str())
                    .collect::<Vec<_>>()
                    .join(","),
            };
            let forced = if gold_action { "gold" } else { "predicted" };
            println!("  belief    {}", p.belief_text);
            println!("  api       {} [{attrs}]", manifest.actions[p.api.action]);
            println!("  response  ({forced} action) {}", p.response);
        }
        println!("  reference {}\n", turn.system_response);
    }
    Ok(())
}
