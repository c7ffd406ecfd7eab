//! Writes a seeded synthetic corpus for each domain and prints one turn.
//!
//! ```bash
//! cargo run --release --example synth_corpus -- [OUT_DIR] [N_DIALOGUES] [SEED]
//! ```

use std::path::PathBuf;

use todmt::corpus::{mean_turns, synth_corpus, validate, write_corpus, Domain, DomainManifest};

fn main() -> todmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let n: usize = args.next().map_or(32, |s| s.parse().expect("N_DIALOGUES is an integer"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("SEED is an integer"));
    std::fs::create_dir_all(&out).map_err(|source| todmt::Error::Io {
        path: out.clone(),
        source,
    })?;

    for domain in Domain::ALL {
        let dialogues = synth_corpus(seed, n, domain)?;
        assert!(validate(&dialogues).is_empty());
        let manifest = DomainManifest::builtin(domain);
        let path = out.join(format!("{domain}.jsonl"));
        write_corpus(&path, &dialogues, &manifest)?;
        println!(
            "{domain}: {} dialogues, {:.2} turns on average -> {}",
            dialogues.len(),
            mean_turns(&dialogues),
            path.display()
        );

        let turn = &dialogues[0].turns[0];
        println!("  user:      {}", turn.user_utterance);
        println!("  system:    {}", turn.system_response);
        println!("  action:    {}", manifest.actions[turn.action.action]);
        for frame in &turn.belief {
            println!("  belief:    {} {:?}", frame.intent, frame.slots);
        }
    }
    Ok(())
}
