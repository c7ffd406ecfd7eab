//! Formats belief frames as text and parses them back, with and without
//! split intents. Unparseable tails are dropped rather than rejected.

use todmt::serializer::{format_belief, parse_belief, IntentVocab};
use todmt::{BeliefFrame, Features, SerializerConfig};

fn main() {
    let frames = vec![
        BeliefFrame::new(
            "DA:INFORM:PREFER:FURNITURE",
            &[("furniture-O", "OBJECT_0"), ("furniture-attentionOn", "that")],
        ),
        BeliefFrame::new("DA:ASK:GET:FURNITURE.dimensions", &[("furniture-O", "OBJECT_0")]),
    ];
    let intents = IntentVocab::from_intents(frames.iter().map(|f| f.intent.as_str()));

    for split_intent in [true, false] {
        let cfg = SerializerConfig {
            features: Features {
                split_intent,
                ..Features::default()
            },
            ..SerializerConfig::default()
        };
        let text = format_belief(&frames, &cfg);
        let back = parse_belief(&text, &cfg, &intents);
        println!("split intent {split_intent}:\n  {text}\n  round trip exact: {}", back == frames);
    }

    let cfg = SerializerConfig::default();
    let noisy = "intent ask get furniture dimensions [ furniture-O = OBJECT_0 ] intent request [ broken";
    println!("\nparsing `{noisy}`:");
    for frame in parse_belief(noisy, &cfg, &intents) {
        println!("  {} {:?}", frame.intent, frame.slots);
    }
}
