//! Command-line front end: synth, train, eval, generate.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 internal error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use todmt::artifacts::{train_to_dir, TrainedModel};
use todmt::config::Config;
use todmt::corpus::{
    load_corpus, load_corpus_any, mean_turns, synth_corpus_with, Dialogue, Domain, DomainManifest,
    SynthStyle,
};
use todmt::decoder::decode_turn;
use todmt::eval::{evaluate, read_candidates, write_predictions, EvalOptions};
use todmt::metrics::SlotConvention;
use todmt::{Error, SerializerConfig, Vocab};

#[derive(Parser)]
#[command(name = "todmt", version, about = "Multi-task, multi-domain task-oriented dialogue model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Templated,
    ActionConditioned,
}

#[derive(Clone, Copy, ValueEnum)]
enum Slots {
    Pooled,
    IntentScoped,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus as JSONL.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of dialogues (at least 1).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "templated")]
        style: Style,
    },
    /// Train a model and write checkpoints, vocabulary and the training log.
    Train {
        /// JSON config with `serializer`, `model` and `train` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        furniture: Option<PathBuf>,
        #[arg(long)]
        fashion: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Dev corpora evaluated after every epoch (repeatable).
        #[arg(long)]
        dev: Vec<PathBuf>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.lr`.
        #[arg(long)]
        lr: Option<f64>,
        /// Overrides `train.lm_epochs`.
        #[arg(long)]
        lm_epochs: Option<usize>,
        /// Overrides `train.mt_epochs`.
        #[arg(long)]
        mt_epochs: Option<usize>,
    },
    /// Decode every turn of the corpora and write the metrics report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Corpus to evaluate (repeatable).
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        /// JSONL candidate pools; generated deterministically when absent.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Where to write the JSON report; the table is printed either way.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Where to write per-turn predictions as JSONL.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Force the gold action after `<EOB>` (on) or the predicted one (off).
        #[arg(long, value_enum, default_value = "on")]
        gt_action: Switch,
        #[arg(long, value_enum, default_value = "pooled")]
        slot_convention: Slots,
    },
    /// Print belief, API prediction and response for one turn.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// `DIALOGUE_ID:TURN` with a 0-based turn index.
        #[arg(long)]
        turn: String,
        #[arg(long, value_enum, default_value = "on")]
        gt_action: Switch,
    },
}

fn load_optional(path: &Option<PathBuf>, domain: Domain) -> todmt::Result<Vec<Dialogue>> {
    match path {
        Some(p) => load_corpus(p, domain),
        None => Ok(Vec::new()),
    }
}

fn load_many(paths: &[PathBuf]) -> todmt::Result<Vec<Dialogue>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_corpus_any(p)?);
    }
    Ok(all)
}

fn write_text(path: &Path, text: &str) -> todmt::Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> todmt::Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            n,
            domain,
            out,
            style,
        } => {
            let style = match style {
                Style::Templated => SynthStyle::Templated,
                Style::ActionConditioned => SynthStyle::ActionConditioned,
            };
            let dialogues = synth_corpus_with(seed, n as usize, domain, style)?;
            todmt::corpus::write_corpus(&out, &dialogues, &DomainManifest::builtin(domain))?;
            let vocab = Vocab::build(&[&dialogues], &SerializerConfig::default())?;
            println!(
                "wrote {} {domain} dialogues to {}: mean turns {:.2}, vocabulary {}",
                dialogues.len(),
                out.display(),
                mean_turns(&dialogues),
                vocab.len()
            );
        }
        Command::Train {
            config,
            furniture,
            fashion,
            out_dir,
            dev,
            seed,
            lr,
            lm_epochs,
            mt_epochs,
        } => {
            let mut cfg = match &config {
                Some(p) => Config::load(p)?,
                None => Config::default(),
            };
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(v) = lr {
                cfg.train.lr = v;
            }
            if let Some(v) = lm_epochs {
                cfg.train.lm_epochs = v;
            }
            if let Some(v) = mt_epochs {
                cfg.train.mt_epochs = v;
            }
            let furn = load_optional(&furniture, Domain::Furniture)?;
            let fash = load_optional(&fashion, Domain::Fashion)?;
            if cfg.serializer.features.multi_domain && (furn.is_empty() || fash.is_empty()) {
                return Err(Error::InvalidArgument(
                    "multi-domain training (serializer.features.multi_domain) needs both --furniture and --fashion".into(),
                ));
            }
            let dev = if dev.is_empty() { None } else { Some(load_many(&dev)?) };
            let run = train_to_dir(&[&furn, &fash], cfg, &out_dir, dev.as_deref(), &EvalOptions::default())?;
            println!(
                "trained {} epochs; checkpoints in {}",
                run.log.len(),
                run.out_dir.display()
            );
        }
        Command::Eval {
            ckpt,
            corpus,
            candidates,
            report,
            predictions,
            gt_action,
            slot_convention,
        } => {
            let model = TrainedModel::load(&ckpt)?;
            let dialogues = load_many(&corpus)?;
            let pools = candidates.as_deref().map(read_candidates).transpose()?;
            let opts = EvalOptions {
                use_gt_action: matches!(gt_action, Switch::On),
                slot_convention: match slot_convention {
                    Slots::Pooled => SlotConvention::Pooled,
                    Slots::IntentScoped => SlotConvention::IntentScoped,
                },
            };
            let out = evaluate(&model, &dialogues, pools.as_deref(), &opts)?;
            if let Some(p) = &report {
                write_text(p, &out.report.to_json()?)?;
            }
            if let Some(p) = &predictions {
                write_predictions(p, &out.predictions)?;
            }
            print!("{}", out.report.table("eval"));
        }
        Command::Generate {
            ckpt,
            corpus,
            turn,
            gt_action,
        } => {
            let (id, t) = turn
                .rsplit_once(':')
                .and_then(|(id, t)| t.parse::<usize>().ok().map(|t| (id, t)))
                .ok_or_else(|| Error::InvalidArgument(format!("--turn `{turn}` is not DIALOGUE_ID:TURN")))?;
            let model = TrainedModel::load(&ckpt)?;
            let dialogues = load_corpus_any(&corpus)?;
            let dialogue = dialogues
                .iter()
                .find(|d| d.dialogue_id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("no dialogue `{id}` in {}", corpus.display())))?;
            if t >= dialogue.turns.len() {
                return Err(Error::InvalidArgument(format!(
                    "dialogue `{id}` has {} turns, asked for turn {t}",
                    dialogue.turns.len()
                )));
            }
            if !model.domains.contains(&dialogue.domain) {
                return Err(Error::InvalidArgument(format!(
                    "model was not trained on {}",
                    dialogue.domain
                )));
            }
            let pred = decode_turn(
                &model.params,
                &model.model,
                &model.serializer,
                &model.vocab,
                &model.intents,
                dialogue,
                t,
                matches!(gt_action, Switch::On),
            )?;
            let manifest = DomainManifest::builtin(dialogue.domain);
            println!("belief: {}", pred.belief_text);
            println!("action: {}", manifest.actions[pred.api.action]);
            let attrs: Vec<&str> = match &pred.api.attributes {
                todmt::corpus::AttributeLabel::Single(c) => vec![manifest.attributes[*c].as_str()],
                todmt::corpus::AttributeLabel::Multi(f) => f
                    .iter()
                    .zip(&manifest.attributes)
                    .filter(|(on, _)| **on)
                    .map(|(_, n)| n.as_str())
                    .collect(),
            };
            println!("attributes: {}", attrs.join(", "));
            println!("response: {}", pred.response);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
