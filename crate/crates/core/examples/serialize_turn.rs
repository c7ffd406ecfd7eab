//! Flattens one synthetic turn and marks which tokens carry LM loss.
//!
//! Masked tokens are shown in parentheses; the segment of each token is
//! printed underneath as S (system), U (user), B (belief) or M (multimodal).

use todmt::corpus::{synth_corpus, Domain};
use todmt::serializer::{render_example, split_intent, Segment};
use todmt::SerializerConfig;

fn main() -> todmt::Result<()> {
    let dialogue = &synth_corpus(3, 1, Domain::Furniture)?[0];
    let turn = dialogue.turns.len() - 1;
    let cfg = SerializerConfig::default();
    let r = render_example(dialogue, turn, &cfg)?;

    let mut text = Vec::new();
    let mut segs = Vec::new();
    for ((tok, seg), trained) in r.tokens.iter().zip(&r.segments).zip(&r.loss_mask) {
        let shown = if *trained { tok.clone() } else { format!("({tok})") };
        let tag = match seg {
            Segment::Sys => "S",
            Segment::User => "U",
            Segment::Bel => "B",
            Segment::Mul => "M",
        };
        segs.push(format!("{tag:<width$}", width = shown.chars().count()));
        text.push(shown);
    }
    println!("{} turn {turn}, {} tokens, <EOB> at {}\n", dialogue.dialogue_id, r.len(), r.eob_index);
    for (line, tags) in text.chunks(12).zip(segs.chunks(12)) {
        println!("{}", line.join(" "));
        println!("{}\n", tags.join(" "));
    }

    let intent = "DA:ASK:GET:FURNITURE.dimensions";
    println!("{intent} -> {}", split_intent(intent)?);
    Ok(())
}
