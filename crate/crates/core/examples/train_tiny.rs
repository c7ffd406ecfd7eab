//! Trains a small two-domain model on synthetic dialogues and evaluates it
//! on the training turns. Takes about two minutes on one core.
//!
//! ```bash
//! cargo run --release --example train_tiny -- [RUN_DIR]
//! ```

use std::path::PathBuf;

use todmt::artifacts::train_to_dir;
use todmt::config::Config;
use todmt::corpus::{synth_corpus, Domain};
use todmt::eval::{candidate_pools, evaluate, EvalOptions, POOL_SIZE};
use todmt::Dialogue;

fn main() -> todmt::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/tiny".into()));
    let furniture = synth_corpus(7, 32, Domain::Furniture)?;
    let fashion = synth_corpus(7, 32, Domain::Fashion)?;

    let mut config = Config::default();
    config.train.lr = 3e-3;
    config.train.batch_size = 2;
    config.train.lm_epochs = 30;
    config.train.mt_epochs = 6;

    let run = train_to_dir(&[&furniture, &fashion], config, &out, None, &EvalOptions::default())?;
    for record in &run.log {
        println!(
            "epoch {:>2} {:?}: lm {:.3} action {} attribute {}",
            record.epoch,
            record.phase,
            record.mean_loss.lm.unwrap_or(f64::NAN),
            record.mean_loss.api_action.map_or("-".into(), |l| format!("{l:.3}")),
            record.mean_loss.api_attribute.map_or("-".into(), |l| format!("{l:.3}")),
        );
    }

    let corpus: Vec<Dialogue> = furniture.into_iter().chain(fashion).collect();
    let pools = candidate_pools(&corpus, POOL_SIZE)?;
    let out_eval = evaluate(&run.model, &corpus, Some(&pools), &EvalOptions::default())?;
    println!("\n{}", out_eval.report.table("train turns"));
    println!("checkpoints in {}", run.out_dir.display());
    Ok(())
}
